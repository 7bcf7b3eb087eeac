#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "instlab/commands.hpp"
#include "instlab/config.hpp"

using namespace instlab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("instlab-test-" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

RunConfig small_corridor() {
    RunConfig c;
    c.seed = 5;
    c.env = "corridor";
    c.corridor.discount = 0.99;
    c.train.num_subsets = 2;
    c.train.num_instances = 4;
    c.train.hidden = 6;
    c.train.total_steps = 2000;
    c.train.eval_every = 1000;
    c.train.eval_episodes = 20;
    c.evaluate.episodes = 40;
    c.evaluate.test_instances = 10;
    c.continual.steps = 1000;
    return c;
}

std::size_t error_line(std::string_view text) {
    try {
        parse_config(text);
    } catch (const ConfigError& e) {
        return e.line();
    }
    return 0;
}

}  // namespace

TEST_CASE("config: sections, comments, arrays and overrides") {
    const auto c = parse_config(R"(
# top comment
[run]
seed = 42   # trailing comment
workers = 2

[env]
kind = "corridor"

[corridor]
discount = 0.99

[train]
algo = "eb"
total_steps = 1_000

[verify]
sweep = [10, 20,]
[evaluate]
pools = ["test"]
)");
    CHECK(c.seed == 42);
    CHECK(c.workers == 2);
    CHECK(c.env == "corridor");
    CHECK(c.corridor.discount == 0.99);
    CHECK(c.corridor.length == 8);
    CHECK(c.train.algo == Algo::eb);
    CHECK(c.train.total_steps == 1000);
    CHECK(c.verify.sweep == std::vector<std::size_t>{10, 20});
    CHECK(c.evaluate.pools == std::vector<std::string>{"test"});
}

TEST_CASE("config: dump and parse round-trip every field") {
    RunConfig c = small_corridor();
    c.train.learning_rate = 0.1 + 0.2;
    c.evaluate.checkpoints = {"a \"quoted\" path", "b\\c"};
    const std::string text = dump_config(c);
    const auto back = parse_config(text);
    CHECK(dump_config(back) == text);
    CHECK(back.train.learning_rate == c.train.learning_rate);
    CHECK(back.evaluate.checkpoints == c.evaluate.checkpoints);
    CHECK(dump_config(parse_config("")) == dump_config(RunConfig{}));
}

TEST_CASE("config: malformed input reports the line and field") {
    CHECK(error_line("[run]\nseed = 1\n[nope]\n") == 3);
    CHECK(error_line("[run]\nseed = -1\n") == 2);
    CHECK(error_line("[run]\nseed = 1\nseed = 2\n") == 3);
    CHECK(error_line("seed = 1\n") == 1);
    CHECK(error_line("[train]\nalgo = \"adam\"\n") == 2);
    CHECK(error_line("[train]\nalgo = eb\n") == 2);
    CHECK(error_line("[train]\nhidden = 4 5\n") == 2);
    CHECK(error_line("[verify]\nsweep = [1, 2\n") == 2);
    CHECK(error_line("[env]\nkind = \"corridor\n") == 2);
    CHECK(error_line("\n\n[train]\nw_lo = 3.0\n") == 4);
    try {
        parse_config("[train]\nbogus = 1\n");
        FAIL("expected a config error");
    } catch (const ConfigError& e) {
        CHECK(e.field() == "train.bogus");
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    try {
        parse_config("[evaluate]\npools = [\"val\"]\n");
        FAIL("expected a config error");
    } catch (const ConfigError& e) {
        CHECK(e.field() == "evaluate.pools");
        CHECK(e.line() == 2);
    }
}

TEST_CASE("config: environment parameters are validated through the builders") {
    CHECK_THROWS_AS(parse_config("[bandit]\np_hi = 0.1\np_lo = 0.5\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[env]\nkind = \"gridworld\"\n"), ConfigError);
    CHECK_NOTHROW(parse_config("[env]\nkind = \"corridor\"\n[bandit]\nnum_actions = 3\n"));
}

TEST_CASE("commands: unknown verification target is a config error") {
    CHECK_THROWS_AS(verify_target("lemma9", RunConfig{}), ConfigError);
    RunConfig c;
    c.verify.action = 7;
    CHECK_THROWS_AS(verify_target("lemma1", c), ConfigError);
}

TEST_CASE("commands: verify writes a report and a manifest; exit code follows the verdict") {
    const auto dir = scratch("verify");
    RunConfig c;
    c.verify.segments = 50;
    const auto oc = run_command("verify", "eq15-degenerate", c, dir);
    CHECK(oc.exit_code == kExitPass);
    const auto rep = nlohmann::json::parse(slurp(dir / "verify-eq15-degenerate.json"));
    CHECK(rep["pass"] == true);
    const auto m = nlohmann::json::parse(slurp(dir / "run.json"));
    CHECK(m["format"] == "instlab-run");
    CHECK(m["outputs"][0]["hash"] == content_hash(slurp(dir / "verify-eq15-degenerate.json")));

    c.verify.gradcheck_draws = 2;
    c.verify.gradcheck_tolerance = 1e-30;
    CHECK(run_command("verify", "gradcheck", c, scratch("verify-fail")).exit_code == kExitFailure);
}

TEST_CASE("commands: equal seeds give identical training outputs") {
    const auto a = scratch("train-a"), b = scratch("train-b");
    run_command("train", "", small_corridor(), a);
    run_command("train", "", small_corridor(), b);
    CHECK(slurp(a / "log.csv") == slurp(b / "log.csv"));
    CHECK(slurp(a / "checkpoint.json") == slurp(b / "checkpoint.json"));
    CHECK(slurp(a / "log.csv").rfind("step,algo,seed,train_return_mean,test_return_mean,l_V,l_pi,grad_norm\n", 0) == 0);
}

TEST_CASE("commands: a checkpoint evaluated against itself has zero delta T and KL") {
    const auto run = scratch("self");
    run_command("train", "", small_corridor(), run);
    RunConfig c = small_corridor();
    c.evaluate.checkpoints = {(run / "checkpoint.json").string()};
    const auto out = scratch("self-eval");
    run_command("evaluate", "", c, out);
    const auto m = nlohmann::json::parse(slurp(out / "metrics.json"));
    REQUIRE(m["rows"].size() == 2);
    for (const auto& row : m["rows"]) {
        for (const auto& d : row["delta_t"]["deltas"]) CHECK(d.get<double>() == 0.0);
        for (const auto& k : row["kl"]) CHECK(k.get<double>() == 0.0);
    }
    CHECK(fs::exists(out / "delta_t-iape-train.svg"));
    CHECK(fs::exists(out / "kl-iape-test.svg"));
}

TEST_CASE("commands: one table row per algorithm per split") {
    std::vector<std::string> ckpts;
    for (const char* algo : {"base", "l2", "eb", "iape", "inf"}) {
        RunConfig c = small_corridor();
        c.train.algo = parse_algo(algo);
        const auto dir = scratch(std::string("algo-") + algo);
        run_command("train", "", c, dir);
        ckpts.push_back((dir / "checkpoint.json").string());
    }
    RunConfig c = small_corridor();
    c.evaluate.checkpoints = ckpts;
    const auto out = scratch("table");
    run_command("evaluate", "", c, out);
    const std::string table = slurp(out / "table.csv");
    CHECK(std::count(table.begin(), table.end(), '\n') == 11);
    CHECK(table.rfind("label,algo,split,", 0) == 0);
    for (const char* algo : {"base", "l2", "eb", "iape", "inf"})
        for (const char* split : {"train", "test"})
            CHECK(table.find("\n" + std::string(algo) + "," + algo + "," + split + ",") != std::string::npos);
}

TEST_CASE("commands: missing pools or checkpoints are config errors") {
    RunConfig c = small_corridor();
    CHECK_THROWS_AS(run_command("evaluate", "", c, scratch("nockpt")), ConfigError);
    const auto run = scratch("pools");
    run_command("train", "", c, run);
    c.evaluate.checkpoints = {(run / "checkpoint.json").string()};
    c.evaluate.pools.clear();
    CHECK_THROWS_AS(run_command("evaluate", "", c, scratch("nopools")), ConfigError);
    RunConfig bandit;
    bandit.evaluate.checkpoints = c.evaluate.checkpoints;
    CHECK_THROWS_AS(run_command("evaluate", "", bandit, scratch("mismatch")), ConfigError);
}

TEST_CASE("commands: continual output schema") {
    const auto run = scratch("cont-src");
    run_command("train", "", small_corridor(), run);
    RunConfig c = small_corridor();
    c.continual.checkpoint = (run / "checkpoint.json").string();
    const auto out = scratch("cont");
    run_command("continual", "", c, out);
    const std::string csv = slurp(out / "continual.csv");
    CHECK(csv.rfind("step,old_train,new_train,test\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') >= 3);
    CHECK(slurp(out / "continual.svg").find("<polyline") != std::string::npos);
}

TEST_CASE("commands: replay reproduces outputs and detects tampering") {
    const auto run = scratch("replay-src");
    run_command("train", "", small_corridor(), run);
    const auto oc = replay_manifest(run / "run.json", scratch("replay-1"), 2);
    CHECK(oc.exit_code == kExitPass);
    CHECK(oc.summary["identical"] == true);

    auto m = nlohmann::json::parse(slurp(run / "run.json"));
    m["outputs"][0]["hash"] = "0000000000000000";
    write_atomic(run / "run.json", m.dump());
    const auto bad = replay_manifest(run / "run.json", scratch("replay-2"));
    CHECK(bad.exit_code == kExitFailure);
    CHECK(bad.summary["identical"] == false);
}

TEST_CASE("content hash is FNV-1a") {
    CHECK(content_hash("") == "cbf29ce484222325");
    CHECK(content_hash("a") == "af63dc4c8601ec8c");
}

#ifdef INSTLAB_CLI
namespace {

int cli(const std::string& args) {
    const int status = std::system((std::string(INSTLAB_CLI) + " " + args + " > /dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("cli exit codes") {
    const auto dir = scratch("cli");
    std::ofstream(dir / "bad.toml") << "[train]\nalgo = \"sgd\"\n";
    std::ofstream(dir / "broken.toml") << "[train\n";
    std::ofstream(dir / "ok.toml") << "[verify]\ngradcheck_draws = 3\n";
    CHECK(cli("verify gradcheck --config " + (dir / "ok.toml").string() + " --out " + (dir / "gc").string()) == 0);
    CHECK(fs::exists(dir / "gc" / "run.json"));
    CHECK(cli("train --config " + (dir / "bad.toml").string() + " --out " + (dir / "x").string()) == 2);
    CHECK(cli("train --config " + (dir / "broken.toml").string() + " --out " + (dir / "x").string()) == 2);
    CHECK(cli("train --algo nope --out " + (dir / "x").string()) == 2);
    CHECK(cli("verify lemma7 --out " + (dir / "x").string()) == 2);
    CHECK(cli("evaluate --out " + (dir / "x").string()) == 2);
    CHECK(cli("--dump-defaults") == 0);
    CHECK(cli("--no-such-flag") == 2);
}
#endif
