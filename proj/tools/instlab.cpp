// instlab command-line entry point.
#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "instlab/commands.hpp"
#include "instlab/config.hpp"
#include "instlab/errors.hpp"

using namespace instlab;

namespace {

struct Common {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
    std::string env;
    bool dump_defaults = false;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "run configuration (TOML-style)");
    cmd->add_option("--out", c.out, "output directory");
    cmd->add_option("--seed", c.seed, "root seed (overrides run.seed)");
    cmd->add_option("--workers", c.workers, "worker threads (overrides run.workers)")->check(CLI::PositiveNumber);
    cmd->add_option("--env", c.env, "environment: bandit or corridor (overrides env.kind)");
    cmd->add_flag("--dump-defaults", c.dump_defaults, "print the effective configuration and exit");
}

RunConfig assemble(const Common& c) {
    RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    if (c.workers) cfg.workers = *c.workers;
    if (!c.env.empty()) cfg.env = c.env;
    validate(cfg);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"instlab: instance-based generalization laboratory"};
    app.require_subcommand(0, 1);
    Common top;
    add_common(&app, top);

    Common common;
    std::string target, manifest;
    std::vector<std::string> checkpoints, pools;
    std::string checkpoint, algo, shift;
    std::optional<std::size_t> steps;

    auto* verify = app.add_subcommand("verify", "run a verification and write its report");
    std::string known;
    for (const auto& t : verify_targets()) known += (known.empty() ? "" : "|") + t;
    verify->add_option("target", target, known);
    add_common(verify, common);

    auto* train = app.add_subcommand("train", "train a policy; writes checkpoint.json and log.csv");
    add_common(train, common);
    train->add_option("--algo", algo, "base|l2|eb|iape|inf (overrides train.algo)");
    train->add_option("--steps", steps, "environment steps (overrides train.total_steps)");

    auto* evaluate = app.add_subcommand("evaluate", "compare checkpoints; writes table.csv, metrics.json and SVGs");
    add_common(evaluate, common);
    evaluate->add_option("--checkpoint", checkpoints, "checkpoint files (overrides evaluate.checkpoints)");
    evaluate->add_option("--pools", pools, "pools to evaluate: train,test (overrides evaluate.pools)")->delimiter(',');

    auto* continual = app.add_subcommand("continual", "continue training on a shifted instance set");
    add_common(continual, common);
    continual->add_option("--checkpoint", checkpoint, "checkpoint to resume (overrides continual.checkpoint)");
    continual->add_option("--steps", steps, "steps after the shift (overrides continual.steps)");
    continual->add_option("--shift", shift, "fresh|identity (overrides continual.shift)");

    auto* dump_model = app.add_subcommand("dump-model", "write the environment tables as model.json");
    add_common(dump_model, common);
    auto* dump_tree = app.add_subcommand("dump-tree", "write one instance tree as tree.json");
    add_common(dump_tree, common);

    auto* replay = app.add_subcommand("replay", "re-run a recorded command and compare outputs");
    replay->add_option("manifest", manifest, "run.json of the recorded run")->required()->check(CLI::ExistingFile);
    replay->add_option("--out", common.out, "output directory for the replay")->required();
    replay->add_option("--workers", common.workers, "worker threads for the replay")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitPass : kExitConfig;
    }

    try {
        CLI::App* chosen = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front();
        if (top.dump_defaults || common.dump_defaults) {
            std::cout << dump_config(assemble(chosen ? common : top));
            return kExitPass;
        }
        if (!chosen) {
            std::cerr << app.help();
            return kExitConfig;
        }
        CommandOutcome oc;
        if (chosen == replay) {
            oc = replay_manifest(manifest, common.out, common.workers.value_or(0));
        } else {
            RunConfig cfg = assemble(common);
            if (!algo.empty()) {
                try {
                    cfg.train.algo = parse_algo(algo);
                } catch (const std::invalid_argument& e) {
                    throw ConfigError(0, "train.algo", e.what());
                }
            }
            if (steps && chosen == train) cfg.train.total_steps = *steps;
            if (steps && chosen == continual) cfg.continual.steps = *steps;
            if (!checkpoints.empty()) cfg.evaluate.checkpoints = checkpoints;
            if (evaluate->count("--pools")) cfg.evaluate.pools = pools;
            if (!checkpoint.empty()) cfg.continual.checkpoint = checkpoint;
            if (!shift.empty()) cfg.continual.shift = shift;
            const std::string name = chosen->get_name();
            if (name == "verify" && target.empty()) throw ConfigError(0, "target", "verify needs a target (" + known + ")");
            const std::string out = common.out.empty() ? "runs/" + name + (name == "verify" ? "-" + target : "") : common.out;
            oc = run_command(name, target, cfg, out);
        }
        std::cout << oc.summary.dump(2) << "\n";
        return oc.exit_code;
    } catch (const ConfigError& e) {
        std::cerr << "instlab: config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "instlab: usage error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "instlab: " << e.what() << "\n";
        return kExitFailure;
    }
}
