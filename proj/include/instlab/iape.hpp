#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "instlab/instance.hpp"
#include "instlab/learner.hpp"
#include "instlab/report.hpp"

namespace instlab {

enum class Algo { base, l2, eb, iape, inf };

/// Throws std::invalid_argument for unknown names.
Algo parse_algo(std::string_view name);
const char* algo_name(Algo algo);

struct TrainConfig {
    Algo algo = Algo::iape;
    std::size_t num_subsets = 4;     // M, used by eb and iape
    std::size_t num_instances = 32;  // training instances, split across subsets
    std::size_t rollout_n = 16;
    double w_lo = 0.5;
    double w_hi = 2.0;
    double learning_rate = 1e-3;
    double lambda_reg = 2e-5;    // l2 on every parameter; base runs with 0
    double lambda_theta = 0.0;   // extra l2 on the encoder
    std::size_t minibatch = 8;   // episodes per update
    std::size_t total_steps = 200'000;
    std::size_t hidden = 32;
    std::uint64_t seed = 0;
    std::size_t eval_every = 20'000;
    std::size_t eval_episodes = 200;
};

/// Throws std::invalid_argument naming the offending field.
void validate(const TrainConfig& cfg);
std::size_t effective_heads(const TrainConfig& cfg);
double effective_lambda_reg(const TrainConfig& cfg);

nlohmann::json config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const nlohmann::json& j);

inline constexpr std::size_t kFreshInstance = std::numeric_limits<std::size_t>::max();

/// One collected episode with per-step behavior probabilities of the taken actions.
struct Episode {
    std::size_t subset = 0;
    std::size_t instance = kFreshInstance;  // index into the training set
    TrajectoryInput traj;
    std::vector<std::size_t> reward_indices;
    std::vector<double> behavior_probs;
    double discounted_return = 0.0;
};

using RolloutBatch = std::vector<Episode>;

enum class Behavior { consensus, subset };

/// Replays `instance` under the behavior policy until a terminal node or the horizon.
Episode collect_episode(const EnsembleNet& net, const Instance& instance, std::size_t subset, Behavior behavior,
                        Stream& stream);

/// Consensus distribution over heads, as used for collection.
std::vector<double> behavior_probs(const EnsembleNet& net, std::span<const double> hidden, std::size_t subset,
                                   Behavior behavior);

/// Per-step quantities along one trajectory for a fixed subset m:
/// rewards[t] = r_{t+1}, target[t] = pi_m(a_t|b_t), behavior[t] = pi_bar(a_t|b_t),
/// values[t] = V_m(b_t) for t <= T. When `ends` the tail after T bootstraps 0.
struct SegmentView {
    std::span<const double> rewards;
    std::span<const double> target;
    std::span<const double> behavior;
    std::span<const double> values;
    bool ends = true;
};

/// g_tau = sum_{t=tau}^{tau+n-1} gamma^{t-tau} w^t r_{t+1} + gamma^n w^{tau+n-1} V(b_{tau+n}),
/// w^t = clip(prod_{j=tau}^{t} target_j / behavior_j, w_lo, w_hi). Sums stop at the
/// end of the segment; the bootstrap is dropped when the episode ended there.
double clipped_iw_return(const SegmentView& seg, std::size_t tau, std::size_t n, double gamma, double w_lo,
                         double w_hi);

/// Cumulative clipped weights w^t for t in [tau, min(tau + n, T)).
std::vector<double> clipped_weights(const SegmentView& seg, std::size_t tau, std::size_t n, double w_lo,
                                    double w_hi);

/// Targets held constant while differentiating: value target g, actor
/// advantage r + gamma g_{t+1} - V(b_t), and actor ratio pi_m / pi_bar.
struct FrozenTargets {
    std::vector<std::vector<double>> g;
    std::vector<std::vector<double>> advantage;
    std::vector<std::vector<double>> ratio;
};

FrozenTargets compute_targets(const EnsembleNet& net, const RolloutBatch& batch, const TrainConfig& cfg,
                              double gamma);

struct LossReport {
    double l_v = 0.0;   // mean squared value error
    double l_pi = 0.0;  // mean actor loss
    double reg = 0.0;
    double total = 0.0;
    double grad_norm = 0.0;
    std::size_t samples = 0;
};

/// L = mean(1/2 l_V + l_pi) + lambda_reg |params|^2 + lambda_theta |theta|^2 with
/// `targets` held fixed. Gradients are written to `grad` when given.
LossReport surrogate_loss(const EnsembleNet& net, const RolloutBatch& batch, const FrozenTargets& targets,
                          const TrainConfig& cfg, std::vector<double>* grad);

/// compute_targets followed by surrogate_loss.
LossReport compute_losses(const EnsembleNet& net, const RolloutBatch& batch, const TrainConfig& cfg, double gamma,
                          std::vector<double>* grad);

/// Plain n-step bootstrap with unit weights, summed in the same order as clipped_iw_return.
double nstep_return(const SegmentView& seg, std::size_t tau, std::size_t n, double gamma);

/// Random segments with target == behavior: the clipped return must equal nstep_return bitwise.
VerificationReport verify_degenerate_targets(std::size_t segments, std::uint64_t seed);

/// Central finite differences (step 1e-5) of the full loss on random
/// networks and batches; passes iff every check stays within `tolerance`.
VerificationReport verify_gradients(std::size_t draws, std::uint64_t seed, double tolerance = 1e-4);

/// Max relative error over coordinates for one draw. Relative error is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-3).
double gradient_check_error(const EnsembleNet& net, const RolloutBatch& batch, const TrainConfig& cfg, double gamma);

struct LogRow {
    std::size_t step = 0;
    std::string algo;
    std::uint64_t seed = 0;
    double train_return_mean = 0.0;
    double test_return_mean = 0.0;
    double l_v = 0.0;
    double l_pi = 0.0;
    double grad_norm = 0.0;
};

std::string log_csv_header();
std::string log_csv_row(const LogRow& row);

/// Collect -> losses -> Adam loop of every algorithm.
class IapeTrainer {
public:
    IapeTrainer(const PomdpModel& model, const TrainConfig& cfg);
    /// Restores a checkpoint written by `checkpoint()`.
    static IapeTrainer from_checkpoint(const PomdpModel& model, const nlohmann::json& ckpt);

    /// Trains for `steps` more environment steps, returning the evaluation rows emitted.
    std::vector<LogRow> run(std::size_t steps);

    /// Replaces the training instances (same count, repeats allowed), keeping parameters and optimizer state.
    void set_training_seeds(std::vector<std::uint64_t> seeds);

    nlohmann::json checkpoint() const;

    const TrainConfig& config() const noexcept { return cfg_; }
    const EnsembleNet& net() const noexcept { return net_; }
    std::shared_ptr<const EnsembleNet> snapshot() const { return std::make_shared<EnsembleNet>(net_); }
    const InstanceSet& training_set() const noexcept { return *train_; }
    const std::vector<std::uint64_t>& training_seeds() const noexcept { return train_seeds_; }
    std::size_t subset_of(std::size_t instance) const noexcept { return instance % heads_; }
    std::size_t steps_done() const noexcept { return steps_; }
    /// The deployed policy: the consensus over heads.
    std::unique_ptr<NetworkPolicy> policy() const;

    /// Monte-Carlo mean return of the consensus policy on a pool, or on fresh instances.
    double evaluate_pool(const InstanceSet& pool, std::size_t episodes, std::uint64_t seed) const;
    double evaluate_test(std::size_t episodes, std::uint64_t seed) const;

    /// Evaluation row at the current step without resetting the loss averages.
    LogRow current_row() const;

private:
    RolloutBatch collect_batch();

    const PomdpModel* model_;
    TrainConfig cfg_;
    std::size_t heads_;
    EnsembleNet net_;
    AdamState adam_;
    std::vector<std::uint64_t> train_seeds_;
    std::unique_ptr<InstanceSet> train_;
    std::uint64_t episodes_ = 0;
    std::size_t steps_ = 0;
    std::size_t next_eval_ = 0;
    double acc_lv_ = 0.0, acc_lpi_ = 0.0, acc_gn_ = 0.0;
    std::size_t acc_updates_ = 0;
};

/// Training-instance seeds used by every algorithm for a given run seed.
std::vector<std::uint64_t> training_seeds_for(std::uint64_t run_seed, std::size_t count, std::string_view label = "train-set");

struct ContinualRow {
    std::size_t step = 0;
    double old_train = 0.0;
    double new_train = 0.0;
    double test = 0.0;
};

struct ContinualResult {
    std::vector<ContinualRow> rows;
    std::vector<LogRow> log;
};

std::string continual_csv_header();
std::string continual_csv_row(const ContinualRow& row);

/// Continues a trained run on a fresh partition, logging returns on the old
/// training pool, the new one, and fresh test instances every `eval_every` steps.
ContinualResult continual_shift(IapeTrainer& trainer, std::vector<std::uint64_t> new_seeds, std::size_t steps);

}  // namespace instlab
