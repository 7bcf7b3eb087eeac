#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "instlab/belief.hpp"
#include "instlab/env.hpp"
#include "instlab/instance.hpp"
#include "instlab/policy.hpp"
#include "instlab/report.hpp"

namespace instlab {

inline constexpr std::size_t kDefaultNodeBudget = 2'000'000;

/// Beliefs closer than this (L-infinity) share a node in the belief tree.
inline constexpr double kBeliefDedupTol = 1e-9;

/// (1 - gamma^n) / (1 - gamma), with the gamma = 1 limit n.
double discounted_horizon(double discount, std::size_t n);

/// |V| <= R_max * discounted_horizon for every policy.
double value_bound(const PomdpModel& model, std::size_t horizon);

// --- optimal control over beliefs ---------------------------------------------

/// Deterministic optimal policy over deduplicated belief nodes, one layer per depth.
class BeliefPolicy final : public Policy {
public:
    struct Node {
        ExactBelief belief;
        std::size_t action = 0;
        double value = 0.0;
    };

    BeliefPolicy(const PomdpModel& model, std::size_t horizon) : model_(&model), horizon_(horizon), levels_(horizon) {}

    std::size_t num_actions() const override { return model_->num_actions(); }
    std::unique_ptr<PolicyState> start(std::size_t initial_observation) const override;

    std::size_t horizon() const noexcept { return horizon_; }
    const PomdpModel& model() const noexcept { return *model_; }
    /// Node index at `depth` matching `belief`, if the node was expanded.
    std::optional<std::size_t> find(std::size_t depth, const ExactBelief& belief) const;
    const Node& node(std::size_t depth, std::size_t index) const { return levels_[depth].nodes[index]; }
    std::size_t level_size(std::size_t depth) const { return levels_[depth].nodes.size(); }
    /// Optimal value-to-go of a belief reached after `depth` steps.
    std::optional<double> value_at(std::size_t depth, const ExactBelief& belief) const;

private:
    friend class BeliefTreeSolver;
    struct Level {
        std::vector<Node> nodes;
        std::unordered_map<std::uint64_t, std::vector<std::size_t>> index;  // quantized hash -> nodes
    };
    std::size_t insert(std::size_t depth, ExactBelief belief);

    const PomdpModel* model_;
    std::size_t horizon_;
    std::vector<Level> levels_;
};

struct PomdpSolution {
    std::shared_ptr<const BeliefPolicy> policy;
    ValueReport report;
};

/// Backward induction over the reachable belief tree, merging beliefs within
/// kBeliefDedupTol. Throws BudgetExceededError past `node_budget` belief nodes.
PomdpSolution solve_pomdp_optimal(const PomdpModel& model, std::size_t horizon,
                                  std::size_t node_budget = kDefaultNodeBudget);

// --- optimal control over an instance set -----------------------------------------

/// pi^I over information states (action prefix, compatible instances). Actions
/// are computed on demand by the same backward induction as the solver and
/// cached. Once no instance is compatible with the history the policy falls
/// back to uniform. Holds a pointer to the set, which must outlive it.
class InstanceOptimalPolicy final : public Policy {
public:
    InstanceOptimalPolicy(const InstanceSet& set, std::size_t horizon, std::size_t node_budget)
        : set_(&set), horizon_(horizon), budget_(node_budget) {}

    std::size_t num_actions() const override { return set_->model().num_actions(); }
    std::unique_ptr<PolicyState> start(std::size_t initial_observation) const override;

    struct Member {
        std::uint32_t index;
        NodeCursor cursor;
    };
    /// Optimal action for a compatible subset at `depth`, lowest index on ties.
    std::size_t best_action(const std::vector<Member>& members, std::size_t depth,
                            const std::u16string& prefix) const;
    const InstanceSet& set() const noexcept { return *set_; }
    std::size_t horizon() const noexcept { return horizon_; }
    std::size_t cache_size() const noexcept { return cache_.size(); }

private:
    const InstanceSet* set_;
    std::size_t horizon_;
    std::size_t budget_;
    mutable std::unordered_map<std::string, std::size_t> cache_;
};

struct InstanceSolution {
    std::shared_ptr<const InstanceOptimalPolicy> policy;
    ValueReport report;
};

/// max over history policies of V^I(∅). Throws BudgetExceededError past `node_budget`
/// information states.
InstanceSolution solve_instance_optimal(const InstanceSet& set, std::size_t horizon,
                                        std::size_t node_budget = kDefaultNodeBudget);

// --- policy evaluation ----------------------------------------------------------------

enum class EvalMode { exact, monte_carlo };

struct EvalOptions {
    EvalMode mode = EvalMode::exact;
    std::size_t n_episodes = 0;  // Monte-Carlo only
    std::uint64_t seed = 0;
    std::size_t node_budget = kDefaultNodeBudget;
    std::size_t horizon = 0;  // 0: model horizon
};

/// V_pi(∅) on the POMDP. Exact mode sums the history tree, merging histories
/// whose policy states share a merge key; Monte-Carlo mode averages fresh episodes.
ValueReport evaluate_policy_on_model(const PomdpModel& model, const Policy& policy, const EvalOptions& opts);

/// V^I_pi(∅): episodes pick i uniformly and replay tau^i.
ValueReport evaluate_policy_on_instances(const InstanceSet& set, const Policy& policy, const EvalOptions& opts);

/// Exact value of `policy` on a single instance tree.
double instance_value(const Instance& instance, const Policy& policy, std::size_t horizon,
                      std::size_t node_budget = kDefaultNodeBudget, std::size_t* nodes = nullptr);

// --- lemma checks -----------------------------------------------------------------

/// Mean of exact V^I over `n_sets` fresh sets against exact V; passes iff |z| <= 4.
VerificationReport verify_unbiased_value(const PomdpModel& model, const Policy& policy, std::size_t set_size,
                                         std::size_t n_sets, std::uint64_t seed, std::size_t workers = 1);

struct WeightedInstance {
    Instance instance;
    double weight;
};

/// Every distinguishable instance tree of a small model with its exact
/// probability, found by scanning seeds. Throws BudgetExceededError when more
/// than `max_distinct` trees exist.
std::vector<WeightedInstance> enumerate_instance_universe(const PomdpModel& model, std::size_t max_distinct,
                                                          std::uint64_t seed, std::size_t max_seeds = 2'000'000);

/// Every observable history of length < horizon with positive probability under some action sequence.
std::vector<ObservableHistory> enumerate_histories(const PomdpModel& model, std::size_t max_length,
                                                   std::size_t limit = 100'000);

/// Greedy action table over every enumerable history (ties toward the lowest action).
GreedyTablePolicy canonicalize(const PomdpModel& model, const Policy& policy);

using Trainer = std::function<std::unique_ptr<Policy>(const InstanceSet&)>;

/// Enumerates all i.i.d. size-n sets drawn from the universe, trains and
/// canonicalizes a policy per set, and checks
///   |E_I[V^I - V]| <= sqrt(2 C^2 MI(I, pi) / n),  C = 2 R_max (1 - gamma^T) / (1 - gamma).
VerificationReport verify_generalization_bound(const PomdpModel& model, const std::vector<WeightedInstance>& universe,
                                               std::size_t n, const Trainer& trainer, const std::string& learner);

struct BanditClosedForms {
    double v_state_opt;
    double v_instance_lower_bound;
    double v_policy;
};

/// Closed-form bandit values; `pi0` is the probability of arm 0 (default 1/|A|).
BanditClosedForms bandit_closed_forms(double p_hi, double p_lo, std::size_t num_actions, std::size_t horizon,
                                      double discount, std::optional<double> pi0 = std::nullopt);

}  // namespace instlab
