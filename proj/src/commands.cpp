#include "instlab/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "instlab/errors.hpp"
#include "instlab/iape.hpp"
#include "instlab/instance.hpp"
#include "instlab/metrics.hpp"
#include "instlab/oracle.hpp"
#include "instlab/parallel.hpp"

namespace instlab {

namespace fs = std::filesystem;
using nlohmann::json;

std::string content_hash(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void write_atomic(const fs::path& path, std::string_view content) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write " + tmp.string());
        f.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!f) throw std::runtime_error("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string fmt(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    std::ostringstream os;
    os.precision(17);
    os << x;
    return os.str();
}

// JSON has no infinity; such values are written as strings.
json number(double x) {
    if (std::isfinite(x)) return x;
    return fmt(x);
}

double median_of(std::vector<double> xs) { return summarize(std::move(xs)).median; }

class Outputs {
public:
    explicit Outputs(fs::path dir) : dir_(std::move(dir)) {}
    void write(const std::string& name, const std::string& content) {
        write_atomic(dir_ / name, content);
        files_.push_back({{"path", name}, {"hash", content_hash(content)}, {"bytes", content.size()}});
        names_.push_back(name);
    }
    const json& files() const { return files_; }
    const std::vector<std::string>& names() const { return names_; }

private:
    fs::path dir_;
    json files_ = json::array();
    std::vector<std::string> names_;
};

TrainConfig train_config(const RunConfig& cfg) {
    TrainConfig t = cfg.train;
    t.seed = cfg.seed;
    return t;
}

// --- verification targets -----------------------------------------------------

std::vector<std::size_t> checked_actions(const PomdpModel& model, std::vector<std::size_t> seq, const std::string& field) {
    if (seq.empty()) throw ConfigError(0, field, "action sequence is empty");
    if (seq.size() > model.horizon()) throw ConfigError(0, field, "sequence is longer than the horizon");
    for (std::size_t a : seq)
        if (a >= model.num_actions())
            throw ConfigError(0, field, "action " + std::to_string(a) + " out of range for " + model.name());
    return seq;
}

VerificationReport verify_lemma1(const RunConfig& cfg) {
    const auto model = build_env(cfg);
    const auto& v = cfg.verify;
    const auto actions = checked_actions(model, {v.action}, "verify.action");
    VerificationReport rep = verify_expected_transition(model, {}, actions, v.n_instances, derive_seed(cfg.seed, "lemma1"));
    rep.check = "lemma1";

    std::vector<double> medians(v.sweep.size());
    json sweep = json::array();
    for (std::size_t i = 0; i < v.sweep.size(); ++i) {
        std::vector<double> errors(v.repeats);
        const std::uint64_t base = derive_seed(cfg.seed, "lemma1-sweep", i);
        parallel_for(v.repeats, cfg.workers, [&](std::size_t r) {
            errors[r] = verify_expected_transition(model, {}, actions, v.sweep[i], derive_seed(base, "repeat", r)).value;
        });
        medians[i] = median_of(errors);
        sweep.push_back({{"n", v.sweep[i]}, {"median_l1", medians[i]}, {"l1", errors}});
    }
    bool monotone = true;
    for (std::size_t i = 1; i < medians.size(); ++i) monotone = monotone && medians[i] < medians[i - 1];
    rep.details["env"] = model.name();
    rep.details["action"] = v.action;
    rep.details["within_tolerance"] = rep.pass;
    rep.details["sweep"] = sweep;
    rep.details["median_decreasing"] = monotone;
    rep.pass = rep.pass && monotone;
    return rep;
}

VerificationReport verify_corollary1(const RunConfig& cfg) {
    const auto model = build_env(cfg);
    const auto actions = checked_actions(model, cfg.verify.sequence, "verify.sequence");
    VerificationReport rep =
        verify_expected_transition(model, {}, actions, cfg.verify.n_instances, derive_seed(cfg.seed, "corollary1"));
    rep.check = "corollary1";
    rep.details["env"] = model.name();
    rep.details["sequence"] = actions;
    return rep;
}

VerificationReport verify_lemma2(const RunConfig& cfg) {
    const auto model = build_env(cfg);
    const auto policy = ConstantPolicy::uniform(model.num_actions());
    VerificationReport rep = verify_unbiased_value(model, policy, cfg.verify.set_size, cfg.verify.n_sets,
                                                   derive_seed(cfg.seed, "lemma2"), cfg.workers);
    rep.check = "lemma2";
    rep.details["env"] = model.name();
    rep.details["policy"] = "uniform";
    return rep;
}

VerificationReport verify_lemma3(const RunConfig& cfg) {
    const auto model = build_env(cfg);
    const std::size_t H = model.horizon();
    const auto belief = solve_pomdp_optimal(model, H);
    const double v_star = belief.report.value;
    const std::size_t n = cfg.verify.lemma3_sets;

    std::vector<double> v_inst(n), v_inst_belief(n), v_model(n);
    parallel_for(n, cfg.workers, [&](std::size_t j) {
        const InstanceSet set(model, derive_seed(cfg.seed, "lemma3", j), cfg.verify.set_size);
        const auto sol = solve_instance_optimal(set, H);
        v_inst[j] = sol.report.value;
        v_inst_belief[j] = evaluate_policy_on_instances(set, *belief.policy, {}).value;
        v_model[j] = evaluate_policy_on_model(model, *sol.policy, {}).value;
    });

    double mean = 0.0;
    for (double x : v_inst) mean += x;
    mean /= static_cast<double>(n);
    const double tol = 1e-9;
    bool instance_side = true, model_side = true;
    for (std::size_t j = 0; j < n; ++j) {
        instance_side = instance_side && v_inst[j] >= v_inst_belief[j] - tol;
        model_side = model_side && v_model[j] <= v_star + tol;
    }

    VerificationReport rep;
    rep.check = "lemma3";
    rep.seed = cfg.seed;
    rep.tolerance = tol;
    rep.value = mean;
    rep.nodes_expanded = belief.report.nodes_expanded;
    json checks = {{"instance_side", instance_side}, {"model_side", model_side}};
    bool pass = instance_side && model_side;
    rep.details = {{"env", model.name()},
                   {"sets", n},
                   {"set_size", cfg.verify.set_size},
                   {"v_state_belief_optimal", v_star},
                   {"instance_optimal_mean", mean},
                   {"max_model_value_of_instance_policy", *std::max_element(v_model.begin(), v_model.end())},
                   {"instance_optimal", v_inst},
                   {"belief_policy_on_set", v_inst_belief},
                   {"instance_policy_on_model", v_model}};
    if (cfg.env == "bandit") {
        const auto& b = cfg.bandit;
        const auto closed = bandit_closed_forms(b.p_hi, b.p_lo, b.num_actions, b.horizon, b.discount);
        const bool dp_matches = std::abs(v_star - closed.v_state_opt) <= tol;
        const bool above_bound = mean >= closed.v_instance_lower_bound;
        checks["dp_matches_closed_form"] = dp_matches;
        checks["mean_above_lower_bound"] = above_bound;
        rep.details["closed_form_state_optimal"] = closed.v_state_opt;
        rep.details["closed_form_instance_lower_bound"] = closed.v_instance_lower_bound;
        rep.reference = closed.v_instance_lower_bound;
        pass = pass && dp_matches && above_bound;
    } else {
        rep.reference = v_star;
    }
    rep.details["checks"] = checks;
    rep.pass = pass;
    return rep;
}

VerificationReport verify_lemma4(const RunConfig& cfg) {
    const auto& v = cfg.verify;
    const auto& b = cfg.bandit;
    PomdpModel universe_model = [&] {
        try {
            return build_bandit(v.universe_p_hi, v.universe_p_lo, b.num_actions, v.universe_horizon, b.discount);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(0, "verify.universe_p_hi", e.what());
        }
    }();
    const auto universe = enumerate_instance_universe(universe_model, v.universe_max, derive_seed(cfg.seed, "universe"));
    const std::size_t A = universe_model.num_actions();

    const Trainer constant = [A](const InstanceSet&) { return std::make_unique<ConstantPolicy>(ConstantPolicy::delta(A, 0)); };
    const Trainer memorize = [&](const InstanceSet& set) -> std::unique_ptr<Policy> {
        const auto sol = solve_instance_optimal(set, universe_model.horizon());
        return std::make_unique<GreedyTablePolicy>(canonicalize(universe_model, *sol.policy));
    };
    const Trainer iape = [&](const InstanceSet& set) -> std::unique_ptr<Policy> {
        TrainConfig t = train_config(cfg);
        t.algo = Algo::iape;
        t.num_instances = set.size();
        t.num_subsets = std::min(std::max<std::size_t>(t.num_subsets, 1), set.size());
        t.total_steps = v.learner_steps;
        t.eval_every = std::max<std::size_t>(v.learner_steps, 1);
        t.eval_episodes = 1;
        t.seed = derive_seed(cfg.seed, "lemma4-learner");
        if (t.num_subsets < 2) t.algo = Algo::l2;
        IapeTrainer trainer(universe_model, t);
        std::vector<std::uint64_t> seeds;
        for (std::size_t i = 0; i < set.size(); ++i) seeds.push_back(set[i].seed());
        trainer.set_training_seeds(seeds);
        trainer.run(v.learner_steps);
        return trainer.policy();
    };

    VerificationReport rep;
    rep.check = "lemma4";
    rep.seed = cfg.seed;
    rep.tolerance = 1e-12;
    rep.pass = true;
    rep.value = -std::numeric_limits<double>::infinity();
    json runs = json::array();
    for (std::size_t n : v.universe_sizes) {
        const std::vector<std::pair<std::string, const Trainer*>> learners = {
            {"constant", &constant}, {"memorize", &memorize}, {"iape", &iape}};
        for (const auto& [name, trainer] : learners) {
            const auto r = verify_generalization_bound(universe_model, universe, n, *trainer, name);
            rep.pass = rep.pass && r.pass;
            rep.value = std::max(rep.value, r.value - r.reference);
            runs.push_back(to_json(r));
        }
    }
    rep.details = {{"universe_size", universe.size()},
                   {"universe_env", universe_model.name()},
                   {"note", "value is the largest lhs - bound over runs"},
                   {"runs", runs}};
    return rep;
}

// --- evaluate --------------------------------------------------------------------

struct Loaded {
    std::string path;
    std::string label;
    IapeTrainer trainer;
};

std::vector<Loaded> load_checkpoints(const PomdpModel& model, const std::vector<std::string>& paths) {
    std::vector<Loaded> out;
    std::map<std::string, std::size_t> seen;
    for (const auto& p : paths) {
        json j;
        try {
            j = json::parse(read_file(p));
        } catch (const std::exception& e) {
            throw ConfigError(0, "evaluate.checkpoints", "cannot load " + p + ": " + e.what());
        }
        try {
            auto t = IapeTrainer::from_checkpoint(model, j);
            const std::string algo = algo_name(t.config().algo);
            out.push_back({p, algo, std::move(t)});
            ++seen[algo];
        } catch (const std::exception& e) {
            throw ConfigError(0, "evaluate.checkpoints", p + ": " + e.what());
        }
    }
    std::map<std::string, std::size_t> next;
    for (auto& l : out)
        if (seen[l.label] > 1) l.label += "-" + std::to_string(next[l.label]++);
    return out;
}

std::size_t first_with(const std::vector<Loaded>& xs, Algo algo) {
    for (std::size_t i = 0; i < xs.size(); ++i)
        if (xs[i].trainer.config().algo == algo) return i;
    return 0;
}

std::string table_header() {
    return "label,algo,split,instances,return_mean,delta_t_mean,delta_t_sd,delta_t_pairs,kl_to_reference_mean,"
           "kl_infinite,policy_cos_median,value_cos_median,agreement_kl\n";
}

CommandOutcome evaluate(const RunConfig& cfg, const PomdpModel& model, Outputs& outs, json& inputs, json& seeds) {
    const auto& e = cfg.evaluate;
    if (e.checkpoints.empty()) throw ConfigError(0, "evaluate.checkpoints", "no checkpoints given");
    if (e.pools.empty()) throw ConfigError(0, "evaluate.pools", "no pools given (expected train and/or test)");
    for (const auto& p : e.checkpoints) inputs.push_back({{"path", p}, {"hash", content_hash(read_file(p))}});
    auto loaded = load_checkpoints(model, e.checkpoints);
    const std::size_t ref = first_with(loaded, Algo::inf), base = first_with(loaded, Algo::base);
    std::vector<std::unique_ptr<NetworkPolicy>> policies;
    for (const auto& l : loaded) policies.push_back(l.trainer.policy());

    const InstanceSet test_pool(model, derive_seed(cfg.seed, "test-pool"), e.test_instances);
    seeds["test_pool"] = test_pool.set_seed();

    std::string table = table_header();
    json rows = json::array();
    const double H = static_cast<double>(model.horizon());
    for (const auto& split : e.pools) {
        const std::uint64_t seed = derive_seed(cfg.seed, "evaluate-" + split);
        seeds["evaluate-" + split] = seed;
        for (std::size_t i = 0; i < loaded.size(); ++i) {
            const auto& tr = loaded[i].trainer;
            const InstanceSet& pool = split == "train" ? tr.training_set() : test_pool;
            const double ret = tr.evaluate_pool(pool, e.episodes, seed);
            const auto dt = delta_time_to_reward(*policies[i], *policies[base], pool, e.signature_episodes, seed);
            const auto kls = per_instance_kl(*policies[ref], *policies[i], pool, seed, e.signature_episodes);
            std::size_t infinite = 0;
            double kl_mean = 0.0;
            for (double k : kls) {
                if (std::isinf(k)) ++infinite;
                kl_mean += k;
            }
            kl_mean /= static_cast<double>(kls.size());
            double pcos = std::numeric_limits<double>::quiet_NaN(), vcos = pcos, agree = pcos;
            json cosine = nullptr;
            if (tr.net().shape().num_heads >= 2) {
                const auto sim = cosine_similarity_heads(tr.net());
                pcos = median_off_diagonal(sim.policy);
                vcos = median_off_diagonal(sim.value);
                agree = ensemble_agreement(tr.net(), pool, seed, e.signature_episodes).mean_kl;
                cosine = {{"policy", sim.policy.values}, {"value", sim.value.values}};
            }
            const std::string& label = loaded[i].label;
            const std::string algo = algo_name(tr.config().algo);
            table += label + "," + algo + "," + split + "," + std::to_string(pool.size()) + "," + fmt(ret) + "," +
                     (dt.empty ? "nan,nan,0" : fmt(dt.mean) + "," + fmt(dt.sd) + "," + std::to_string(dt.deltas.size())) +
                     "," + fmt(kl_mean) + "," + std::to_string(infinite) + "," + fmt(pcos) + "," + fmt(vcos) + "," +
                     fmt(agree) + "\n";

            json kl_json = json::array();
            double kl_hi = 0.0;
            std::vector<double> finite;
            for (double k : kls) {
                kl_json.push_back(number(k));
                if (std::isfinite(k)) {
                    finite.push_back(k);
                    kl_hi = std::max(kl_hi, k);
                }
            }
            rows.push_back({{"label", label},
                            {"algo", algo},
                            {"split", split},
                            {"checkpoint", loaded[i].path},
                            {"return_mean", ret},
                            {"delta_t", {{"empty", dt.empty}, {"mean", dt.mean}, {"sd", dt.sd}, {"deltas", dt.deltas},
                                         {"instances", dt.instances}}},
                            {"kl_direction", "KL(reference || method)"},
                            {"kl_reference", loaded[ref].label},
                            {"kl", kl_json},
                            {"delta_t_base", loaded[base].label},
                            {"cosine", cosine},
                            {"agreement_kl", number(agree)}});
            outs.write("delta_t-" + label + "-" + split + ".svg",
                       histogram_svg(dt.deltas, e.bins, -H, H, "delta T vs " + loaded[base].label + " (" + label + ", " + split + ")"));
            outs.write("kl-" + label + "-" + split + ".svg",
                       histogram_svg(finite, e.bins, 0.0, kl_hi > 0.0 ? kl_hi : 1.0,
                                     "KL(" + loaded[ref].label + " || " + label + ") per instance (" + split + ")"));
        }
    }
    outs.write("table.csv", table);
    outs.write("metrics.json", json({{"rows", rows}}).dump(2) + "\n");

    CommandOutcome oc;
    oc.summary = {{"checkpoints", e.checkpoints.size()}, {"pools", e.pools}, {"rows", rows.size()}};
    return oc;
}

// --- dump-tree --------------------------------------------------------------------

json tree_json(const Instance& inst, const NodeCursor& node, std::size_t depth_left) {
    const auto& r = node.record;
    json j = {{"state", r.state}, {"observation", r.observation}, {"terminal", r.terminal}};
    if (node.depth > 0) j["reward"] = r.reward;
    if (depth_left == 0 || r.terminal) return j;
    json children = json::object();
    for (std::size_t a = 0; a < inst.model().num_actions(); ++a)
        children[std::to_string(a)] = tree_json(inst, inst.child(node, a), depth_left - 1);
    j["children"] = children;
    return j;
}

}  // namespace

const std::vector<std::string>& verify_targets() {
    static const std::vector<std::string> t = {"lemma1", "corollary1", "lemma2", "lemma3",
                                               "lemma4", "gradcheck",  "eq15-degenerate"};
    return t;
}

VerificationReport verify_target(const std::string& target, const RunConfig& cfg) {
    if (target == "lemma1") return verify_lemma1(cfg);
    if (target == "corollary1") return verify_corollary1(cfg);
    if (target == "lemma2") return verify_lemma2(cfg);
    if (target == "lemma3") return verify_lemma3(cfg);
    if (target == "lemma4") return verify_lemma4(cfg);
    if (target == "gradcheck")
        return verify_gradients(cfg.verify.gradcheck_draws, derive_seed(cfg.seed, "gradcheck"), cfg.verify.gradcheck_tolerance);
    if (target == "eq15-degenerate") return verify_degenerate_targets(cfg.verify.segments, derive_seed(cfg.seed, "eq15"));
    std::string known;
    for (const auto& t : verify_targets()) known += (known.empty() ? "" : ", ") + t;
    throw ConfigError(0, "target", "unknown verification '" + target + "' (expected one of " + known + ")");
}

CommandOutcome run_command(const std::string& command, const std::string& target, RunConfig cfg, const fs::path& out) {
    validate(cfg);
    for (auto& p : cfg.evaluate.checkpoints) p = fs::absolute(p).lexically_normal().string();
    if (!cfg.continual.checkpoint.empty())
        cfg.continual.checkpoint = fs::absolute(cfg.continual.checkpoint).lexically_normal().string();
    fs::create_directories(out);

    const std::string started = utc_now();
    const auto t0 = std::chrono::steady_clock::now();
    Outputs outs(out);
    json inputs = json::array();
    json seeds = {{"root", cfg.seed}};
    CommandOutcome oc;
    const PomdpModel model = build_env(cfg);

    if (command == "verify") {
        const auto rep = verify_target(target, cfg);
        outs.write("verify-" + target + ".json", to_json(rep).dump(2) + "\n");
        oc.exit_code = rep.pass ? kExitPass : kExitFailure;
        oc.summary = {{"check", rep.check}, {"pass", rep.pass},          {"value", number(rep.value)},
                      {"reference", number(rep.reference)}, {"tolerance", rep.tolerance}};
    } else if (command == "train") {
        IapeTrainer trainer(model, train_config(cfg));
        const auto rows = trainer.run(cfg.train.total_steps);
        std::string csv = log_csv_header() + "\n";
        for (const auto& r : rows) csv += log_csv_row(r) + "\n";
        outs.write("log.csv", csv);
        outs.write("checkpoint.json", trainer.checkpoint().dump() + "\n");
        seeds["train_set"] = trainer.training_seeds();
        oc.summary = {{"algo", algo_name(cfg.train.algo)}, {"steps", trainer.steps_done()}, {"rows", rows.size()}};
        if (!rows.empty())
            oc.summary["final"] = {{"train_return_mean", rows.back().train_return_mean},
                                   {"test_return_mean", rows.back().test_return_mean}};
    } else if (command == "evaluate") {
        oc = evaluate(cfg, model, outs, inputs, seeds);
    } else if (command == "continual") {
        const auto& c = cfg.continual;
        if (c.checkpoint.empty()) throw ConfigError(0, "continual.checkpoint", "no checkpoint given");
        std::string text;
        json ckpt;
        try {
            text = read_file(c.checkpoint);
            ckpt = json::parse(text);
        } catch (const std::exception& e) {
            throw ConfigError(0, "continual.checkpoint", e.what());
        }
        inputs.push_back({{"path", c.checkpoint}, {"hash", content_hash(text)}});
        auto trainer = [&] {
            try {
                return IapeTrainer::from_checkpoint(model, ckpt);
            } catch (const std::invalid_argument& e) {
                throw ConfigError(0, "continual.checkpoint", e.what());
            }
        }();
        const std::size_t N = trainer.training_seeds().size();
        auto fresh = c.shift == "identity" ? trainer.training_seeds()
                                           : training_seeds_for(derive_seed(cfg.seed, "continual"), N, "shift-set");
        seeds["old_set"] = trainer.training_seeds();
        seeds["new_set"] = fresh;
        const auto res = continual_shift(trainer, fresh, c.steps);
        std::string csv = continual_csv_header() + "\n";
        std::vector<double> x, old_s, new_s, test_s;
        for (const auto& r : res.rows) {
            csv += continual_csv_row(r) + "\n";
            x.push_back(static_cast<double>(r.step));
            old_s.push_back(r.old_train);
            new_s.push_back(r.new_train);
            test_s.push_back(r.test);
        }
        std::string log = log_csv_header() + "\n";
        for (const auto& r : res.log) log += log_csv_row(r) + "\n";
        outs.write("continual.csv", csv);
        outs.write("continual.svg", line_chart_svg(x, {old_s, new_s, test_s}, {"old_train", "new_train", "test"},
                                                   std::string("continual shift (") + algo_name(trainer.config().algo) + ")"));
        outs.write("log.csv", log);
        outs.write("checkpoint.json", trainer.checkpoint().dump() + "\n");
        oc.summary = {{"algo", algo_name(trainer.config().algo)}, {"shift", c.shift}, {"rows", res.rows.size()}};
    } else if (command == "dump-model") {
        outs.write("model.json", model_to_json(model) + "\n");
        oc.summary = {{"model", model.name()}};
    } else if (command == "dump-tree") {
        const std::size_t depth = std::min(cfg.dump.depth, model.horizon());
        if (std::pow(static_cast<double>(model.num_actions()), static_cast<double>(depth)) > 1e6)
            throw ConfigError(0, "dump.depth", "tree too large to dump");
        const Instance inst(model, cfg.dump.instance_seed);
        const json tree = {{"model", model.name()},
                           {"instance_seed", cfg.dump.instance_seed},
                           {"modality", inst.modality()},
                           {"depth", depth},
                           {"root", tree_json(inst, inst.root_cursor(), depth)}};
        outs.write("tree.json", tree.dump(2) + "\n");
        oc.summary = {{"model", model.name()}, {"depth", depth}};
    } else {
        throw ConfigError(0, "command", "unknown command '" + command + "'");
    }

    oc.outputs = outs.names();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const json manifest = {{"format", "instlab-run"},
                           {"artifact_version", kArtifactVersion},
                           {"command", command},
                           {"target", target},
                           {"config", dump_config(cfg)},
                           {"seeds", seeds},
                           {"inputs", inputs},
                           {"outputs", outs.files()},
                           {"summary", oc.summary},
                           {"exit_code", oc.exit_code},
                           {"started_at", started},
                           {"finished_at", utc_now()},
                           {"wall_seconds", secs}};
    write_atomic(out / "run.json", manifest.dump(2) + "\n");
    return oc;
}

CommandOutcome replay_manifest(const fs::path& manifest_path, const fs::path& out, std::size_t workers) {
    json m;
    try {
        m = json::parse(read_file(manifest_path));
    } catch (const std::exception& e) {
        throw ConfigError(0, "manifest", e.what());
    }
    if (m.value("format", "") != "instlab-run") throw ConfigError(0, "manifest", "not an instlab run manifest");
    if (fs::exists(out) && fs::equivalent(out, manifest_path.parent_path()))
        throw ConfigError(0, "out", "replay must write to a different directory than the recorded run");
    RunConfig cfg = parse_config(m.at("config").get<std::string>());
    if (workers > 0) cfg.workers = workers;
    for (const auto& in : m.at("inputs")) {
        const std::string path = in.at("path");
        std::string now;
        try {
            now = read_file(path);
        } catch (const std::exception& e) {
            throw ConfigError(0, "inputs", e.what());
        }
        if (content_hash(now) != in.at("hash").get<std::string>())
            throw ConfigError(0, "inputs", "input changed since the recorded run: " + path);
    }

    CommandOutcome oc = run_command(m.at("command"), m.at("target"), cfg, out);
    json mismatches = json::array();
    std::map<std::string, std::string> now;
    for (const auto& name : oc.outputs) now[name] = content_hash(read_file(out / name));
    for (const auto& f : m.at("outputs")) {
        const std::string name = f.at("path");
        auto it = now.find(name);
        if (it == now.end()) mismatches.push_back({{"path", name}, {"reason", "missing"}});
        else if (it->second != f.at("hash").get<std::string>()) mismatches.push_back({{"path", name}, {"reason", "differs"}});
        if (it != now.end()) now.erase(it);
    }
    for (const auto& [name, h] : now) mismatches.push_back({{"path", name}, {"reason", "unexpected"}});

    const bool identical = mismatches.empty();
    json replayed = json::parse(read_file(out / "run.json"));
    replayed["replay"] = {{"source", fs::absolute(manifest_path).lexically_normal().string()},
                          {"identical", identical},
                          {"mismatches", mismatches}};
    write_atomic(out / "run.json", replayed.dump(2) + "\n");
    oc.summary = {{"identical", identical}, {"mismatches", mismatches}, {"command", replayed["summary"]}};
    if (!identical) oc.exit_code = kExitFailure;
    return oc;
}

}  // namespace instlab
