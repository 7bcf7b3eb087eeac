#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "instlab/env.hpp"
#include "instlab/history.hpp"
#include "instlab/report.hpp"

namespace instlab {

struct NodeRecord {
    std::size_t state = 0;
    std::size_t observation = 0;
    std::size_t reward_index = 0;  // meaningless at the root
    double reward = 0.0;
    bool terminal = false;

    friend bool operator==(const NodeRecord&, const NodeRecord&) = default;
};

/// A node of an instance trajectory tree together with the key that seeds its
/// children. Lets solvers walk trees without touching the memo.
struct NodeCursor {
    NodeRecord record;
    std::uint64_t key = 0;
    std::size_t depth = 0;
};

/// Deterministic trajectory function tau^i. Every node is generated on first
/// touch from a stream keyed by hash(instance seed, action prefix):
///
///   key_0     = splitmix64(seed ^ hash_label("root"))
///   key_{t+1} = splitmix64(key_t ^ ((t + 1) << 32 | a_t))
///
/// The root stream draws (s_0, k, o_0); node streams draw (r, s', o) from the
/// parent state. The memo is a pure cache.
class Instance {
public:
    /// `model` must outlive the instance.
    Instance(const PomdpModel& model, std::uint64_t instance_seed);

    std::uint64_t seed() const noexcept { return seed_; }
    std::size_t modality() const noexcept { return modality_; }
    const PomdpModel& model() const noexcept { return *model_; }
    const NodeRecord& root() const noexcept { return root_.record; }
    const NodeCursor& root_cursor() const noexcept { return root_; }

    /// Child of `parent` under `action`, bypassing the memo. Throws UsageError
    /// if the parent is terminal.
    NodeCursor child(const NodeCursor& parent, std::size_t action) const;

    /// Visited path [root, tau(a_0), ..., tau(a_{0:t-1})]. Memoized.
    /// Throws UsageError past a terminal node or beyond the model horizon.
    std::vector<NodeRecord> query(std::span<const std::size_t> actions) const;

    /// Cursor at the end of `actions`, same contract as `query`.
    NodeCursor walk(std::span<const std::size_t> actions) const;

    void clear_memo() const { memo_.clear(); }
    std::size_t memo_size() const noexcept { return memo_.size(); }

private:
    const PomdpModel* model_;
    std::uint64_t seed_;
    std::size_t modality_;
    NodeCursor root_;
    mutable std::unordered_map<std::u16string, NodeRecord> memo_;
};

inline std::uint64_t child_key(std::uint64_t parent_key, std::size_t parent_depth, std::size_t action) {
    const std::uint64_t tag = (static_cast<std::uint64_t>(parent_depth + 1) << 32) |
                              static_cast<std::uint64_t>(action);
    return splitmix64(parent_key ^ tag);
}

Instance spawn_instance(const PomdpModel& model, std::uint64_t instance_seed);

/// Finite set of instances; episodes pick one uniformly.
class InstanceSet {
public:
    /// Seeds derived as derive_seed(set_seed, "instance", j), skipping repeats.
    InstanceSet(const PomdpModel& model, std::uint64_t set_seed, std::size_t size);
    /// Throws std::invalid_argument on repeated seeds.
    static InstanceSet from_seeds(const PomdpModel& model, std::span<const std::uint64_t> seeds);
    /// Multiset of instances (repeats allowed), for i.i.d. draws from a finite universe.
    static InstanceSet multiset(const PomdpModel& model, std::vector<Instance> instances);

    std::size_t size() const noexcept { return instances_.size(); }
    const Instance& operator[](std::size_t i) const { return instances_[i]; }
    std::span<const Instance> instances() const noexcept { return instances_; }
    std::uint64_t set_seed() const noexcept { return set_seed_; }
    const PomdpModel& model() const noexcept { return *model_; }

    std::size_t sample_index(Stream& stream) const { return stream.below(instances_.size()); }

private:
    InstanceSet(const PomdpModel& model, std::uint64_t set_seed, std::vector<Instance> instances)
        : model_(&model), set_seed_(set_seed), instances_(std::move(instances)) {}
    const PomdpModel* model_;
    std::uint64_t set_seed_;
    std::vector<Instance> instances_;
};

struct TransitionOutcome {
    std::size_t reward_index;
    std::size_t next_state;
    double prob;
};

/// Does the instance's tree contain the full history H_t (states included)?
bool compatible(const Instance& instance, const FullHistory& history);

/// Does the instance's tree emit the observations and rewards of H^o_t?
bool compatible(const Instance& instance, const ObservableHistory& history);

/// T^I(r, s | H_t, a): uniform mixture over compatible instances of their
/// deterministic next (r, s). Sorted by (reward_index, next_state).
/// Throws NoCompatibleInstanceError when no instance matches.
std::vector<TransitionOutcome> instance_set_transition(const InstanceSet& set,
                                                       const FullHistory& history,
                                                       std::size_t action);

struct InstancePosterior {
    std::vector<double> weights;  // all zero when empty
    bool empty = true;
};

InstancePosterior instance_posterior(const InstanceSet& set, const ObservableHistory& history);

/// Monte-Carlo check that the mean of instance laws recovers the model's
/// n-step joint law of (r, s, o) under a fixed action sequence. With an empty
/// template the law covers the root (s_0, o_0) as well; otherwise instances
/// are drawn until `n_instances` are compatible with the template and the law
/// covers the steps after it. Passes iff L1 <= 3 * sqrt(|support| / n).
VerificationReport verify_expected_transition(const PomdpModel& model,
                                              const FullHistory& history_template,
                                              std::span<const std::size_t> actions,
                                              std::size_t n_instances, std::uint64_t seed);

/// Exact law used by verify_expected_transition. Each outcome is the flattened
/// sequence of (reward_index, state, observation) triples; sequences stop early
/// at terminal states.
std::vector<std::pair<std::vector<std::size_t>, double>> exact_path_law(
    const PomdpModel& model, const FullHistory& history_template,
    std::span<const std::size_t> actions);

}  // namespace instlab
