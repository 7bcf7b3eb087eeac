#include "instlab/iape.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "instlab/errors.hpp"
#include "instlab/oracle.hpp"

namespace instlab {

Algo parse_algo(std::string_view name) {
    if (name == "base") return Algo::base;
    if (name == "l2") return Algo::l2;
    if (name == "eb") return Algo::eb;
    if (name == "iape") return Algo::iape;
    if (name == "inf") return Algo::inf;
    throw std::invalid_argument("unknown algo '" + std::string(name) + "' (expected base, l2, eb, iape or inf)");
}

const char* algo_name(Algo algo) {
    switch (algo) {
        case Algo::base: return "base";
        case Algo::l2: return "l2";
        case Algo::eb: return "eb";
        case Algo::iape: return "iape";
        case Algo::inf: return "inf";
    }
    return "?";
}

std::size_t effective_heads(const TrainConfig& cfg) {
    return cfg.algo == Algo::eb || cfg.algo == Algo::iape ? cfg.num_subsets : 1;
}

double effective_lambda_reg(const TrainConfig& cfg) { return cfg.algo == Algo::base ? 0.0 : cfg.lambda_reg; }

void validate(const TrainConfig& cfg) {
    auto fail = [](const std::string& field, const std::string& what) {
        throw std::invalid_argument("train." + field + ": " + what);
    };
    if (!(cfg.w_lo >= 0.0 && cfg.w_lo <= 1.0)) fail("w_lo", "must lie in [0, 1]");
    if (!(cfg.w_hi >= 1.0 && std::isfinite(cfg.w_hi))) fail("w_hi", "must be finite and >= 1");
    if (cfg.rollout_n == 0) fail("rollout_n", "must be positive");
    if (!(cfg.learning_rate > 0.0 && std::isfinite(cfg.learning_rate))) fail("learning_rate", "must be positive");
    if (!(cfg.lambda_reg >= 0.0)) fail("lambda_reg", "must be >= 0");
    if (!(cfg.lambda_theta >= 0.0)) fail("lambda_theta", "must be >= 0");
    if (cfg.algo == Algo::l2 && cfg.lambda_reg <= 0.0) fail("lambda_reg", "algo l2 needs lambda_reg > 0");
    if ((cfg.algo == Algo::eb || cfg.algo == Algo::iape) && cfg.num_subsets < 2)
        fail("num_subsets", "eb and iape need at least 2 subsets");
    if (cfg.num_subsets == 0) fail("num_subsets", "must be positive");
    if (cfg.num_instances < effective_heads(cfg)) fail("num_instances", "must be at least the number of subsets");
    if (cfg.minibatch == 0) fail("minibatch", "must be positive");
    if (cfg.hidden == 0) fail("hidden", "must be positive");
    if (cfg.eval_every == 0) fail("eval_every", "must be positive");
    if (cfg.eval_episodes == 0) fail("eval_episodes", "must be positive");
}

nlohmann::json config_to_json(const TrainConfig& c) {
    return {{"algo", algo_name(c.algo)},
            {"num_subsets", c.num_subsets},
            {"num_instances", c.num_instances},
            {"rollout_n", c.rollout_n},
            {"w_lo", c.w_lo},
            {"w_hi", c.w_hi},
            {"learning_rate", c.learning_rate},
            {"lambda_reg", c.lambda_reg},
            {"lambda_theta", c.lambda_theta},
            {"minibatch", c.minibatch},
            {"total_steps", c.total_steps},
            {"hidden", c.hidden},
            {"seed", c.seed},
            {"eval_every", c.eval_every},
            {"eval_episodes", c.eval_episodes}};
}

TrainConfig config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.algo = parse_algo(j.at("algo").get<std::string>());
    c.num_subsets = j.at("num_subsets").get<std::size_t>();
    c.num_instances = j.at("num_instances").get<std::size_t>();
    c.rollout_n = j.at("rollout_n").get<std::size_t>();
    c.w_lo = j.at("w_lo").get<double>();
    c.w_hi = j.at("w_hi").get<double>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.lambda_reg = j.at("lambda_reg").get<double>();
    c.lambda_theta = j.at("lambda_theta").get<double>();
    c.minibatch = j.at("minibatch").get<std::size_t>();
    c.total_steps = j.at("total_steps").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.eval_every = j.at("eval_every").get<std::size_t>();
    c.eval_episodes = j.at("eval_episodes").get<std::size_t>();
    return c;
}

// --- collection --------------------------------------------------------------------

std::vector<double> behavior_probs(const EnsembleNet& net, std::span<const double> hidden, std::size_t subset,
                                   Behavior behavior) {
    return behavior == Behavior::consensus ? consensus_probs(net, hidden) : policy_probs(net, subset, hidden);
}

Episode collect_episode(const EnsembleNet& net, const Instance& instance, std::size_t subset, Behavior behavior,
                        Stream& stream) {
    const PomdpModel& model = instance.model();
    const std::size_t d = net.shape().hidden;
    Episode ep;
    ep.subset = subset;
    NodeCursor cur = instance.root_cursor();
    ep.traj.observations.push_back(cur.record.observation);
    std::vector<double> h(d, 0.0), next(d);
    encode_step(net, cur.record.observation, 0.0, net.no_action(), std::vector<double>(d, 0.0), h);
    double discount = 1.0;
    for (std::size_t t = 0; t < model.horizon() && !cur.record.terminal; ++t) {
        const auto probs = behavior_probs(net, h, subset, behavior);
        const std::size_t a = stream.categorical(probs);
        cur = instance.child(cur, a);
        ep.traj.actions.push_back(a);
        ep.traj.rewards.push_back(cur.record.reward);
        ep.traj.observations.push_back(cur.record.observation);
        ep.reward_indices.push_back(cur.record.reward_index);
        ep.behavior_probs.push_back(probs[a]);
        ep.discounted_return += discount * cur.record.reward;
        discount *= model.discount();
        if (cur.record.terminal || t + 1 == model.horizon()) break;
        encode_step(net, cur.record.observation, cur.record.reward, a, h, next);
        std::swap(h, next);
    }
    return ep;
}

// --- targets -----------------------------------------------------------------------

std::vector<double> clipped_weights(const SegmentView& seg, std::size_t tau, std::size_t n, double w_lo,
                                    double w_hi) {
    const std::size_t T = seg.rewards.size();
    const std::size_t end = std::min(tau + n, T);
    std::vector<double> w;
    w.reserve(end > tau ? end - tau : 0);
    double prod = 1.0;
    for (std::size_t t = tau; t < end; ++t) {
        if (!(seg.behavior[t] > 0.0)) throw NumericalError("zero behavior probability at step " + std::to_string(t));
        prod *= seg.target[t] / seg.behavior[t];
        w.push_back(std::clamp(prod, w_lo, w_hi));
    }
    return w;
}

double clipped_iw_return(const SegmentView& seg, std::size_t tau, std::size_t n, double gamma, double w_lo,
                         double w_hi) {
    const std::size_t T = seg.rewards.size();
    if (tau >= T) return 0.0;
    const auto w = clipped_weights(seg, tau, n, w_lo, w_hi);
    double g = 0.0, disc = 1.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
        g += disc * w[k] * seg.rewards[tau + k];
        disc *= gamma;
    }
    const std::size_t boot = tau + w.size();
    if (boot < T || (boot == T && !seg.ends)) g += disc * w.back() * seg.values[boot];
    return g;
}

namespace {

struct EpisodeCache {
    std::vector<double> hiddens;
    std::vector<double> values;  // V_m(b_t), t = 0..T
    std::vector<double> target;  // pi_m(a_t | b_t)
    std::vector<double> probs;   // pi_m(. | b_t), t < T, flattened
};

EpisodeCache forward_episode(const EnsembleNet& net, const Episode& ep) {
    const std::size_t d = net.shape().hidden, A = net.shape().num_actions, T = ep.traj.length();
    EpisodeCache c;
    c.hiddens = forward_hidden(net, ep.traj);
    c.values.resize(T + 1);
    c.target.resize(T);
    c.probs.resize(T * A);
    for (std::size_t t = 0; t <= T; ++t) {
        const std::span<const double> h(c.hiddens.data() + t * d, d);
        c.values[t] = value_estimate(net, ep.subset, h);
        if (t == T) break;
        const auto p = policy_probs(net, ep.subset, h);
        std::copy(p.begin(), p.end(), c.probs.begin() + static_cast<std::ptrdiff_t>(t * A));
        c.target[t] = p[ep.traj.actions[t]];
    }
    return c;
}

void check_episode(const Episode& ep, const EnsembleNet& net) {
    if (ep.subset >= net.shape().num_heads) throw UsageError("episode subset exceeds the number of heads");
    if (ep.behavior_probs.size() != ep.traj.length()) throw UsageError("episode behavior records are incomplete");
}

}  // namespace

FrozenTargets compute_targets(const EnsembleNet& net, const RolloutBatch& batch, const TrainConfig& cfg,
                              double gamma) {
    FrozenTargets out;
    for (const auto& ep : batch) {
        check_episode(ep, net);
        const auto c = forward_episode(net, ep);
        const std::size_t T = ep.traj.length();
        const SegmentView seg{ep.traj.rewards, c.target, ep.behavior_probs, c.values, true};
        std::vector<double> g(T), adv(T), ratio(T);
        for (std::size_t t = 0; t < T; ++t) g[t] = clipped_iw_return(seg, t, cfg.rollout_n, gamma, cfg.w_lo, cfg.w_hi);
        for (std::size_t t = 0; t < T; ++t) {
            const double next = t + 1 < T ? g[t + 1] : 0.0;
            adv[t] = ep.traj.rewards[t] + gamma * next - c.values[t];
            ratio[t] = c.target[t] / ep.behavior_probs[t];
        }
        out.g.push_back(std::move(g));
        out.advantage.push_back(std::move(adv));
        out.ratio.push_back(std::move(ratio));
    }
    return out;
}

LossReport surrogate_loss(const EnsembleNet& net, const RolloutBatch& batch, const FrozenTargets& targets,
                          const TrainConfig& cfg, std::vector<double>* grad) {
    const std::size_t A = net.shape().num_actions;
    LossReport rep;
    for (const auto& ep : batch) rep.samples += ep.traj.length();
    if (grad) grad->assign(net.size(), 0.0);
    if (targets.g.size() != batch.size()) throw UsageError("targets do not match the batch");
    const double inv_n = rep.samples > 0 ? 1.0 / static_cast<double>(rep.samples) : 0.0;

    double sum_v = 0.0, sum_pi = 0.0;
    std::vector<double> ep_grad;
    for (std::size_t e = 0; e < batch.size(); ++e) {
        const Episode& ep = batch[e];
        check_episode(ep, net);
        const std::size_t T = ep.traj.length();
        if (T == 0) continue;
        const auto c = forward_episode(net, ep);
        HeadGradients up{ep.subset, std::vector<double>(T * A, 0.0), std::vector<double>(T, 0.0)};
        for (std::size_t t = 0; t < T; ++t) {
            const double err = c.values[t] - targets.g[e][t];
            const double coef = targets.ratio[e][t] * targets.advantage[e][t];
            const std::size_t a = ep.traj.actions[t];
            const double lv = err * err;
            const double lpi = -std::log(c.probs[t * A + a]) * coef;
            if (!std::isfinite(lv) || !std::isfinite(lpi))
                throw NumericalError("non-finite loss at episode " + std::to_string(e) + " step " + std::to_string(t));
            sum_v += lv;
            sum_pi += lpi;
            up.dvalue[t] = err * inv_n;
            for (std::size_t b = 0; b < A; ++b)
                up.dlogits[t * A + b] = coef * inv_n * (c.probs[t * A + b] - (b == a ? 1.0 : 0.0));
        }
        if (grad) {
            ep_grad.assign(net.size(), 0.0);
            backward(net, ep.traj, c.hiddens, up, ep_grad);
            for (std::size_t i = 0; i < ep_grad.size(); ++i) (*grad)[i] += ep_grad[i];
        }
    }
    rep.l_v = sum_v * inv_n;
    rep.l_pi = sum_pi * inv_n;

    const double lreg = effective_lambda_reg(cfg);
    const auto& p = net.params();
    double reg = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double lam = lreg + (i < net.encoder_size() ? cfg.lambda_theta : 0.0);
        if (lam == 0.0) continue;
        reg += lam * p[i] * p[i];
        if (grad) (*grad)[i] += 2.0 * lam * p[i];
    }
    rep.reg = reg;
    rep.total = 0.5 * rep.l_v + rep.l_pi + reg;
    if (grad) {
        double sq = 0.0;
        for (double g : *grad) sq += g * g;
        rep.grad_norm = std::sqrt(sq);
    }
    return rep;
}

LossReport compute_losses(const EnsembleNet& net, const RolloutBatch& batch, const TrainConfig& cfg, double gamma,
                          std::vector<double>* grad) {
    return surrogate_loss(net, batch, compute_targets(net, batch, cfg, gamma), cfg, grad);
}

// --- gradient check ----------------------------------------------------------------

double gradient_check_error(const EnsembleNet& net, const RolloutBatch& batch, const TrainConfig& cfg, double gamma) {
    const auto targets = compute_targets(net, batch, cfg, gamma);
    std::vector<double> analytic;
    surrogate_loss(net, batch, targets, cfg, &analytic);
    EnsembleNet probe = net;
    constexpr double h = 1e-5;
    double worst = 0.0;
    for (std::size_t i = 0; i < net.size(); ++i) {
        const double x = probe.params()[i];
        probe.params()[i] = x + h;
        const double up = surrogate_loss(probe, batch, targets, cfg, nullptr).total;
        probe.params()[i] = x - h;
        const double down = surrogate_loss(probe, batch, targets, cfg, nullptr).total;
        probe.params()[i] = x;
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-3});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

VerificationReport verify_gradients(std::size_t draws, std::uint64_t seed, double tolerance) {
    VerificationReport rep;
    rep.check = "gradcheck";
    rep.seed = seed;
    rep.tolerance = tolerance;
    rep.reference = tolerance;
    std::vector<double> errors;
    for (std::size_t k = 0; k < draws; ++k) {
        Stream rng(derive_seed(seed, "gradcheck", k));
        NetShape shape;
        shape.num_observations = 2 + rng.below(5);
        shape.num_actions = 2 + rng.below(3);
        shape.hidden = 3 + rng.below(6);
        shape.num_heads = 1 + rng.below(4);
        shape.reward_scale = rng.uniform(0.1, 1.0);
        EnsembleNet net = EnsembleNet::initialized(shape, rng.next());
        for (double& p : net.params()) p += rng.uniform(-0.3, 0.3);

        TrainConfig cfg;
        cfg.algo = shape.num_heads > 1 ? Algo::iape : Algo::l2;
        cfg.num_subsets = std::max<std::size_t>(2, shape.num_heads);
        cfg.rollout_n = 1 + rng.below(10);
        cfg.w_lo = rng.uniform(0.2, 1.0);
        cfg.w_hi = rng.uniform(1.0, 3.0);
        cfg.lambda_reg = rng.uniform(1e-4, 1e-2);
        cfg.lambda_theta = rng.uniform(0.0, 1e-2);
        const double gamma = rng.uniform(0.5, 1.0);

        RolloutBatch batch(1 + rng.below(3));
        for (std::size_t e = 0; e < batch.size(); ++e) {
            Episode& ep = batch[e];
            const std::size_t T = e == 0 ? 8 : 1 + rng.below(8);
            ep.subset = rng.below(shape.num_heads);
            ep.traj.observations.push_back(rng.below(shape.num_observations));
            for (std::size_t t = 0; t < T; ++t) {
                ep.traj.actions.push_back(rng.below(shape.num_actions));
                ep.traj.rewards.push_back(rng.uniform(-1.0, 2.0));
                ep.traj.observations.push_back(rng.below(shape.num_observations));
                ep.behavior_probs.push_back(rng.uniform(0.05, 1.0));
            }
        }
        errors.push_back(gradient_check_error(net, batch, cfg, gamma));
    }
    rep.value = errors.empty() ? 0.0 : *std::max_element(errors.begin(), errors.end());
    rep.pass = rep.value <= tolerance;
    rep.details = {{"draws", draws}, {"step", 1e-5}, {"max_relative_error", rep.value}, {"errors", errors}};
    return rep;
}

double nstep_return(const SegmentView& seg, std::size_t tau, std::size_t n, double gamma) {
    const std::size_t T = seg.rewards.size();
    if (tau >= T) return 0.0;
    const std::size_t end = std::min(tau + n, T);
    double g = 0.0, disc = 1.0;
    for (std::size_t t = tau; t < end; ++t) {
        g += disc * 1.0 * seg.rewards[t];
        disc *= gamma;
    }
    if (end < T || !seg.ends) g += disc * 1.0 * seg.values[end];
    return g;
}

VerificationReport verify_degenerate_targets(std::size_t segments, std::uint64_t seed) {
    VerificationReport rep;
    rep.check = "eq15-degenerate";
    rep.seed = seed;
    std::size_t mismatches = 0;
    double worst = 0.0;
    for (std::size_t k = 0; k < segments; ++k) {
        Stream rng(derive_seed(seed, "segment", k));
        const std::size_t T = 1 + rng.below(16);
        std::vector<double> r(T), p(T), v(T + 1);
        for (auto& x : r) x = rng.uniform(-1.0, 10.0);
        for (auto& x : p) x = rng.uniform(0.01, 1.0);
        for (auto& x : v) x = rng.uniform(-5.0, 5.0);
        const SegmentView seg{r, p, p, v, rng.bernoulli(0.5)};
        const std::size_t tau = rng.below(T), n = 1 + rng.below(20);
        const double gamma = rng.uniform(0.0, 1.0);
        const double w_lo = rng.uniform(0.1, 1.0), w_hi = rng.uniform(1.0, 4.0);
        const double a = clipped_iw_return(seg, tau, n, gamma, w_lo, w_hi), b = nstep_return(seg, tau, n, gamma);
        if (a != b) {
            ++mismatches;
            worst = std::max(worst, std::abs(a - b));
        }
    }
    rep.value = static_cast<double>(mismatches);
    rep.pass = mismatches == 0;
    rep.details = {{"segments", segments}, {"mismatches", mismatches}, {"max_abs_difference", worst}};
    return rep;
}

// --- log ---------------------------------------------------------------------------

namespace {

std::string fmt(double x) {
    std::ostringstream os;
    os.precision(17);
    os << x;
    return os.str();
}

}  // namespace

std::string log_csv_header() { return "step,algo,seed,train_return_mean,test_return_mean,l_V,l_pi,grad_norm"; }

std::string log_csv_row(const LogRow& r) {
    return std::to_string(r.step) + "," + r.algo + "," + std::to_string(r.seed) + "," + fmt(r.train_return_mean) +
           "," + fmt(r.test_return_mean) + "," + fmt(r.l_v) + "," + fmt(r.l_pi) + "," + fmt(r.grad_norm);
}

std::string continual_csv_header() { return "step,old_train,new_train,test"; }

std::string continual_csv_row(const ContinualRow& r) {
    return std::to_string(r.step) + "," + fmt(r.old_train) + "," + fmt(r.new_train) + "," + fmt(r.test);
}

// --- trainer -----------------------------------------------------------------------

std::vector<std::uint64_t> training_seeds_for(std::uint64_t run_seed, std::size_t count, std::string_view label) {
    const std::uint64_t base = derive_seed(run_seed, label);
    std::vector<std::uint64_t> seeds;
    for (std::size_t j = 0; seeds.size() < count; ++j) {
        const std::uint64_t s = derive_seed(base, "instance", j);
        if (std::find(seeds.begin(), seeds.end(), s) == seeds.end()) seeds.push_back(s);
    }
    return seeds;
}

IapeTrainer::IapeTrainer(const PomdpModel& model, const TrainConfig& cfg)
    : model_(&model), cfg_(cfg), heads_(effective_heads(cfg)) {
    validate(cfg_);
    net_ = EnsembleNet::initialized(net_shape_for(model, cfg_.hidden, heads_), derive_seed(cfg_.seed, "net"));
    adam_.m.assign(net_.size(), 0.0);
    adam_.v.assign(net_.size(), 0.0);
    set_training_seeds(training_seeds_for(cfg_.seed, cfg_.num_instances));
    next_eval_ = cfg_.eval_every;
}

void IapeTrainer::set_training_seeds(std::vector<std::uint64_t> seeds) {
    if (seeds.size() != cfg_.num_instances)
        throw std::invalid_argument("training set size " + std::to_string(seeds.size()) + " differs from " +
                                    std::to_string(cfg_.num_instances));
    std::vector<Instance> members;
    for (std::uint64_t s : seeds) members.emplace_back(*model_, s);
    train_ = std::make_unique<InstanceSet>(InstanceSet::multiset(*model_, std::move(members)));
    train_seeds_ = std::move(seeds);
}

std::unique_ptr<NetworkPolicy> IapeTrainer::policy() const {
    const auto support = model_->reward_support();
    return std::make_unique<NetworkPolicy>(snapshot(), std::vector<double>(support.begin(), support.end()));
}

double IapeTrainer::evaluate_pool(const InstanceSet& pool, std::size_t episodes, std::uint64_t seed) const {
    EvalOptions opts;
    opts.mode = EvalMode::monte_carlo;
    opts.n_episodes = episodes;
    opts.seed = seed;
    return evaluate_policy_on_instances(pool, *policy(), opts).value;
}

double IapeTrainer::evaluate_test(std::size_t episodes, std::uint64_t seed) const {
    EvalOptions opts;
    opts.mode = EvalMode::monte_carlo;
    opts.n_episodes = episodes;
    opts.seed = seed;
    return evaluate_policy_on_model(*model_, *policy(), opts).value;
}

RolloutBatch IapeTrainer::collect_batch() {
    RolloutBatch batch;
    batch.reserve(cfg_.minibatch);
    const Behavior behavior = cfg_.algo == Algo::eb ? Behavior::subset : Behavior::consensus;
    for (std::size_t b = 0; b < cfg_.minibatch; ++b) {
        const std::uint64_t e = episodes_++;
        Stream stream(derive_seed(cfg_.seed, "episode", e));
        if (cfg_.algo == Algo::inf) {
            const Instance fresh = spawn_instance(*model_, derive_seed(cfg_.seed, "inf-instance", e));
            batch.push_back(collect_episode(net_, fresh, 0, behavior, stream));
            continue;
        }
        const std::size_t m = stream.below(heads_);
        const std::size_t members = (cfg_.num_instances - m + heads_ - 1) / heads_;
        const std::size_t i = m + heads_ * stream.below(members);
        Episode ep = collect_episode(net_, (*train_)[i], m, behavior, stream);
        ep.instance = i;
        batch.push_back(std::move(ep));
    }
    return batch;
}

std::vector<LogRow> IapeTrainer::run(std::size_t steps) {
    std::vector<LogRow> rows;
    const std::size_t target = steps_ + steps;
    std::vector<double> grad;
    while (steps_ < target) {
        const RolloutBatch batch = collect_batch();
        const LossReport rep = compute_losses(net_, batch, cfg_, model_->discount(), &grad);
        adam_update(net_.params(), grad, adam_, cfg_.learning_rate);
        for (const auto& ep : batch) steps_ += ep.traj.length();
        acc_lv_ += rep.l_v;
        acc_lpi_ += rep.l_pi;
        acc_gn_ += rep.grad_norm;
        ++acc_updates_;
        if (steps_ >= next_eval_) {
            rows.push_back(current_row());
            acc_lv_ = acc_lpi_ = acc_gn_ = 0.0;
            acc_updates_ = 0;
            while (next_eval_ <= steps_) next_eval_ += cfg_.eval_every;
        }
    }
    return rows;
}

LogRow IapeTrainer::current_row() const {
    LogRow row;
    row.step = steps_;
    row.algo = algo_name(cfg_.algo);
    row.seed = cfg_.seed;
    row.train_return_mean = evaluate_pool(*train_, cfg_.eval_episodes, derive_seed(cfg_.seed, "eval-train", steps_));
    row.test_return_mean = evaluate_test(cfg_.eval_episodes, derive_seed(cfg_.seed, "eval-test", steps_));
    const double n = acc_updates_ > 0 ? static_cast<double>(acc_updates_) : 1.0;
    row.l_v = acc_lv_ / n;
    row.l_pi = acc_lpi_ / n;
    row.grad_norm = acc_gn_ / n;
    return row;
}

nlohmann::json IapeTrainer::checkpoint() const {
    return {{"format", "instlab-checkpoint"},
            {"version", 1},
            {"model", model_->name()},
            {"config", config_to_json(cfg_)},
            {"net", net_to_json(net_)},
            {"adam", adam_to_json(adam_)},
            {"episodes", episodes_},
            {"steps", steps_},
            {"next_eval", next_eval_},
            {"train_seeds", train_seeds_},
            {"accumulators", {acc_lv_, acc_lpi_, acc_gn_, acc_updates_}}};
}

IapeTrainer IapeTrainer::from_checkpoint(const PomdpModel& model, const nlohmann::json& ckpt) {
    if (ckpt.value("format", std::string()) != "instlab-checkpoint")
        throw std::invalid_argument("not an instlab checkpoint");
    if (ckpt.at("model").get<std::string>() != model.name())
        throw std::invalid_argument("checkpoint was trained on model '" + ckpt.at("model").get<std::string>() +
                                    "', not '" + model.name() + "'");
    IapeTrainer t(model, config_from_json(ckpt.at("config")));
    EnsembleNet net = net_from_json(ckpt.at("net"));
    if (!(net.shape() == t.net_.shape()) || net.size() != t.net_.size())
        throw std::invalid_argument("checkpoint network shape does not match the model");
    t.net_ = std::move(net);
    t.adam_ = adam_from_json(ckpt.at("adam"));
    if (t.adam_.m.size() != t.net_.size()) throw std::invalid_argument("checkpoint optimizer state has the wrong size");
    t.episodes_ = ckpt.at("episodes").get<std::uint64_t>();
    t.steps_ = ckpt.at("steps").get<std::size_t>();
    t.next_eval_ = ckpt.at("next_eval").get<std::size_t>();
    t.set_training_seeds(ckpt.at("train_seeds").get<std::vector<std::uint64_t>>());
    const auto& acc = ckpt.at("accumulators");
    t.acc_lv_ = acc.at(0).get<double>();
    t.acc_lpi_ = acc.at(1).get<double>();
    t.acc_gn_ = acc.at(2).get<double>();
    t.acc_updates_ = acc.at(3).get<std::size_t>();
    return t;
}

ContinualResult continual_shift(IapeTrainer& trainer, std::vector<std::uint64_t> new_seeds, std::size_t steps) {
    const auto& cfg = trainer.config();
    const InstanceSet old_pool = trainer.training_set();
    trainer.set_training_seeds(std::move(new_seeds));
    ContinualResult out;
    auto record = [&] {
        const std::size_t s = trainer.steps_done();
        out.rows.push_back({s, trainer.evaluate_pool(old_pool, cfg.eval_episodes, derive_seed(cfg.seed, "shift-pool", s)),
                            trainer.evaluate_pool(trainer.training_set(), cfg.eval_episodes,
                                                  derive_seed(cfg.seed, "shift-pool", s)),
                            trainer.evaluate_test(cfg.eval_episodes, derive_seed(cfg.seed, "shift-test", s))});
    };
    record();
    const std::size_t end = trainer.steps_done() + steps;
    while (trainer.steps_done() < end) {
        const std::size_t chunk = std::min(cfg.eval_every, end - trainer.steps_done());
        auto log = trainer.run(chunk);
        out.log.insert(out.log.end(), log.begin(), log.end());
        record();
    }
    return out;
}

}  // namespace instlab
