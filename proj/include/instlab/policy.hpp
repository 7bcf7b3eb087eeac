#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "instlab/history.hpp"

namespace instlab {

/// Incremental state of a policy over observable histories.
class PolicyState {
public:
    virtual ~PolicyState() = default;
    virtual std::unique_ptr<PolicyState> clone() const = 0;
    /// Appends (a_t, o_{t+1}, r_{t+1}); reward given as a reward-support index.
    virtual void observe(std::size_t action, std::size_t observation, std::size_t reward_index) = 0;
    virtual std::vector<double> action_probs() const = 0;
    /// States with equal keys (at equal depth) act identically on every
    /// continuation. Exact evaluators merge such histories.
    virtual std::optional<std::uint64_t> merge_key() const { return std::nullopt; }
};

/// Policy pi(a | H^o_t). Policies depend on observable histories only.
class Policy {
public:
    virtual ~Policy() = default;
    virtual std::size_t num_actions() const = 0;
    virtual std::unique_ptr<PolicyState> start(std::size_t initial_observation) const = 0;
    /// True when action_probs never depends on the history.
    virtual bool history_independent() const { return false; }
};

/// Same action distribution everywhere.
class ConstantPolicy final : public Policy {
public:
    explicit ConstantPolicy(std::vector<double> probs);
    static ConstantPolicy uniform(std::size_t num_actions);
    static ConstantPolicy delta(std::size_t num_actions, std::size_t action);

    std::size_t num_actions() const override { return probs_.size(); }
    std::unique_ptr<PolicyState> start(std::size_t) const override;
    bool history_independent() const override { return true; }
    const std::vector<double>& probs() const noexcept { return probs_; }

private:
    std::vector<double> probs_;
};

/// Arbitrary function of the full observable history. Convenient for tests and
/// hand-written baselines; not mergeable.
class HistoryFunctionPolicy final : public Policy {
public:
    using Fn = std::function<std::vector<double>(const ObservableHistory&)>;
    HistoryFunctionPolicy(std::size_t num_actions, Fn fn) : num_actions_(num_actions), fn_(std::move(fn)) {}

    std::size_t num_actions() const override { return num_actions_; }
    std::unique_ptr<PolicyState> start(std::size_t initial_observation) const override;

private:
    std::size_t num_actions_;
    Fn fn_;
};

/// Deterministic lookup table keyed by flattened observable histories
/// (o_0, a_0, r_1, o_1, ...). Unknown histories act with `fallback_action`.
class GreedyTablePolicy final : public Policy {
public:
    using Key = std::vector<std::size_t>;
    GreedyTablePolicy(std::size_t num_actions, std::map<Key, std::size_t> table, std::size_t fallback_action = 0)
        : num_actions_(num_actions), table_(std::move(table)), fallback_(fallback_action) {}

    std::size_t num_actions() const override { return num_actions_; }
    std::unique_ptr<PolicyState> start(std::size_t initial_observation) const override;
    const std::map<Key, std::size_t>& table() const noexcept { return table_; }
    std::size_t action_for(const Key& key) const;

    friend bool operator==(const GreedyTablePolicy& a, const GreedyTablePolicy& b) {
        return a.num_actions_ == b.num_actions_ && a.table_ == b.table_ && a.fallback_ == b.fallback_;
    }

private:
    std::size_t num_actions_;
    std::map<Key, std::size_t> table_;
    std::size_t fallback_;
};

GreedyTablePolicy::Key history_key(const ObservableHistory& h);

/// Index of the largest probability, ties toward the lowest index.
std::size_t greedy_action(const std::vector<double>& probs);

}  // namespace instlab
