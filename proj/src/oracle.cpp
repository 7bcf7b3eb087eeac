#include "instlab/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

#include "instlab/errors.hpp"
#include "instlab/parallel.hpp"

namespace instlab {

double discounted_horizon(double discount, std::size_t n) {
    if (discount == 1.0) return static_cast<double>(n);
    return (1.0 - std::pow(discount, static_cast<double>(n))) / (1.0 - discount);
}

double value_bound(const PomdpModel& model, std::size_t horizon) {
    return model.max_abs_reward() * discounted_horizon(model.discount(), horizon);
}

namespace {

constexpr double kTieTol = 1e-9;

struct Outcome {
    std::size_t reward_index;
    std::size_t observation;
    double mass;
    std::vector<double> next;  // unnormalized joint over (s', k)
};

/// All (r, o) outcomes of taking `a` from the unnormalized joint `w`, ordered by (r, o).
std::vector<Outcome> enumerate_outcomes(const PomdpModel& model, const std::vector<double>& w, std::size_t a) {
    const std::size_t S = model.num_states(), K = model.num_modalities();
    std::map<std::pair<std::size_t, std::size_t>, std::vector<double>> acc;
    for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t k = 0; k < K; ++k) {
            const double ws = w[s * K + k];
            if (ws <= 0.0) continue;
            for (const auto& e : model.transition(s, a)) {
                if (e.prob <= 0.0) continue;
                const auto obs = model.observation(e.next_state, a, k);
                for (std::size_t o = 0; o < obs.size(); ++o) {
                    if (obs[o] <= 0.0) continue;
                    auto& v = acc[{e.reward_index, o}];
                    if (v.empty()) v.assign(S * K, 0.0);
                    v[e.next_state * K + k] += ws * e.prob * obs[o];
                }
            }
        }
    }
    std::vector<Outcome> out;
    out.reserve(acc.size());
    for (auto& [key, v] : acc) {
        const double mass = std::accumulate(v.begin(), v.end(), 0.0);
        if (mass > 0.0) out.push_back({key.first, key.second, mass, std::move(v)});
    }
    return out;
}

/// Unnormalized joint for each initial observation with positive probability.
std::vector<std::pair<std::size_t, std::vector<double>>> initial_joints(const PomdpModel& model) {
    const std::size_t S = model.num_states(), K = model.num_modalities();
    std::vector<std::pair<std::size_t, std::vector<double>>> out;
    const auto mu = model.initial_dist();
    for (std::size_t o = 0; o < model.num_observations(); ++o) {
        std::vector<double> w(S * K, 0.0);
        double mass = 0.0;
        for (std::size_t s = 0; s < S; ++s) {
            if (mu[s] <= 0.0) continue;
            for (std::size_t k = 0; k < K; ++k) {
                const double p = mu[s] / static_cast<double>(K) * model.observation(s, model.no_action(), k)[o];
                w[s * K + k] = p;
                mass += p;
            }
        }
        if (mass > 0.0) out.emplace_back(o, std::move(w));
    }
    return out;
}

std::uint64_t belief_hash(const ExactBelief& b) {
    std::uint64_t h = 0x51ED270B27A1D3C5ull;
    for (double x : b.joint) {
        const auto q = static_cast<std::uint64_t>(std::llround(x / kBeliefDedupTol));
        h = splitmix64(h ^ q);
    }
    return h;
}

std::size_t pick_best(const std::vector<double>& q) {
    std::size_t best = 0;
    for (std::size_t a = 1; a < q.size(); ++a)
        if (q[a] > q[best] + kTieTol) best = a;
    return best;
}

}  // namespace

// --- BeliefPolicy ---------------------------------------------------------------------

std::size_t BeliefPolicy::insert(std::size_t depth, ExactBelief belief) {
    if (auto found = find(depth, belief)) return *found;
    auto& level = levels_[depth];
    level.index[belief_hash(belief)].push_back(level.nodes.size());
    level.nodes.push_back({std::move(belief), 0, 0.0});
    return level.nodes.size() - 1;
}

std::optional<std::size_t> BeliefPolicy::find(std::size_t depth, const ExactBelief& belief) const {
    if (depth >= levels_.size()) return std::nullopt;
    const auto& level = levels_[depth];
    if (auto it = level.index.find(belief_hash(belief)); it != level.index.end()) {
        for (std::size_t i : it->second)
            if (belief_distance(level.nodes[i].belief, belief) <= kBeliefDedupTol) return i;
    }
    // Quantization can split near-identical beliefs across buckets.
    for (std::size_t i = 0; i < level.nodes.size(); ++i)
        if (belief_distance(level.nodes[i].belief, belief) <= kBeliefDedupTol) return i;
    return std::nullopt;
}

std::optional<double> BeliefPolicy::value_at(std::size_t depth, const ExactBelief& belief) const {
    if (depth >= horizon_) return 0.0;
    if (auto i = find(depth, belief)) return levels_[depth].nodes[*i].value;
    return std::nullopt;
}

namespace {

class BeliefPolicyState final : public PolicyState {
public:
    BeliefPolicyState(const BeliefPolicy* policy, ExactBelief belief) : policy_(policy), belief_(std::move(belief)) {}
    std::unique_ptr<PolicyState> clone() const override { return std::make_unique<BeliefPolicyState>(*this); }
    void observe(std::size_t a, std::size_t o, std::size_t r) override {
        belief_ = update_belief(policy_->model(), belief_, a, o, r);
        ++depth_;
        node_.reset();
        looked_up_ = false;
    }
    std::vector<double> action_probs() const override {
        std::vector<double> p(policy_->num_actions(), 0.0);
        lookup();
        p[node_ ? policy_->node(depth_, *node_).action : 0] = 1.0;
        return p;
    }
    std::optional<std::uint64_t> merge_key() const override {
        lookup();
        if (!node_) return std::nullopt;
        return splitmix64((static_cast<std::uint64_t>(depth_) << 40) ^ *node_);
    }

private:
    void lookup() const {
        if (looked_up_) return;
        looked_up_ = true;
        if (depth_ < policy_->horizon()) node_ = policy_->find(depth_, belief_);
    }
    const BeliefPolicy* policy_;
    ExactBelief belief_;
    std::size_t depth_ = 0;
    mutable std::optional<std::size_t> node_;
    mutable bool looked_up_ = false;
};

}  // namespace

std::unique_ptr<PolicyState> BeliefPolicy::start(std::size_t o0) const {
    return std::make_unique<BeliefPolicyState>(this, init_belief(*model_, o0));
}

class BeliefTreeSolver {
public:
    BeliefTreeSolver(const PomdpModel& model, std::size_t horizon, std::size_t budget)
        : model_(model), horizon_(horizon), budget_(budget) {}

    PomdpSolution run() {
        auto policy = std::make_shared<BeliefPolicy>(model_, horizon_);
        edges_.assign(horizon_, {});
        std::vector<std::pair<double, std::size_t>> roots;
        double root_mass = 0.0;
        for (auto& [o, w] : initial_joints(model_)) {
            const double mass = std::accumulate(w.begin(), w.end(), 0.0);
            root_mass += mass;
            if (horizon_ == 0) continue;
            ExactBelief b = init_belief(model_, o);
            roots.emplace_back(mass, add(*policy, 0, std::move(b)));
        }

        for (std::size_t t = 0; t < horizon_; ++t) {
            auto& level_edges = edges_[t];
            for (std::size_t i = 0; i < policy->level_size(t); ++i) {
                level_edges.emplace_back();
                const ExactBelief belief = policy->node(t, i).belief;  // copy: insert may reallocate
                if (belief.all_terminal(model_)) continue;
                auto& per_action = level_edges.back();
                per_action.resize(model_.num_actions());
                for (std::size_t a = 0; a < model_.num_actions(); ++a) {
                    for (auto& oc : enumerate_outcomes(model_, belief.joint, a)) {
                        Edge e{oc.mass, model_.reward(oc.reward_index), kNoChild};
                        if (t + 1 < horizon_) {
                            ExactBelief child{belief.num_states, belief.num_modalities, std::move(oc.next)};
                            for (double& x : child.joint) x /= oc.mass;
                            e.child = add(*policy, t + 1, std::move(child));
                        }
                        per_action[a].push_back(e);
                    }
                }
            }
        }

        const double gamma = model_.discount();
        for (std::size_t t = horizon_; t-- > 0;) {
            for (std::size_t i = 0; i < policy->level_size(t); ++i) {
                const auto& per_action = edges_[t][i];
                auto& node = policy->levels_[t].nodes[i];
                if (per_action.empty()) {
                    node.value = 0.0;
                    node.action = 0;
                    continue;
                }
                std::vector<double> q(per_action.size(), 0.0);
                for (std::size_t a = 0; a < per_action.size(); ++a) {
                    for (const Edge& e : per_action[a]) {
                        const double next = e.child == kNoChild ? 0.0 : policy->levels_[t + 1].nodes[e.child].value;
                        q[a] += e.prob * (e.reward + gamma * next);
                    }
                }
                node.action = pick_best(q);
                node.value = q[node.action];
            }
        }

        PomdpSolution sol;
        double v = 0.0;
        for (auto [mass, idx] : roots) v += mass / root_mass * policy->levels_[0].nodes[idx].value;
        sol.report.value = v;
        sol.report.nodes_expanded = nodes_;
        sol.report.depth = horizon_;
        sol.report.exact = true;
        sol.policy = std::move(policy);
        return sol;
    }

private:
    static constexpr std::size_t kNoChild = std::numeric_limits<std::size_t>::max();
    struct Edge {
        double prob;
        double reward;
        std::size_t child;
    };

    std::size_t add(BeliefPolicy& policy, std::size_t depth, ExactBelief b) {
        const std::size_t before = policy.level_size(depth);
        const std::size_t idx = policy.insert(depth, std::move(b));
        if (policy.level_size(depth) != before && ++nodes_ > budget_)
            throw BudgetExceededError("solve_pomdp_optimal: node budget exceeded", nodes_);
        return idx;
    }

    const PomdpModel& model_;
    std::size_t horizon_;
    std::size_t budget_;
    std::size_t nodes_ = 0;
    std::vector<std::vector<std::vector<std::vector<Edge>>>> edges_;  // [depth][node][action]
};

PomdpSolution solve_pomdp_optimal(const PomdpModel& model, std::size_t horizon, std::size_t node_budget) {
    return BeliefTreeSolver(model, horizon, node_budget).run();
}

// --- instance-set optimal control -------------------------------------------------------

namespace {

using Member = InstanceOptimalPolicy::Member;

/// Backward induction over (action prefix, compatible subset). W returns the
/// summed (not averaged) optimal return over the members.
class InstanceDp {
public:
    InstanceDp(const InstanceSet& set, std::size_t horizon, std::size_t budget)
        : set_(set), horizon_(horizon), budget_(budget), gamma_(set.model().discount()), scratch_(horizon + 2) {}

    double W(std::span<const Member> members, std::size_t depth) {
        if (++nodes_ > budget_) throw BudgetExceededError("solve_instance_optimal: node budget exceeded", nodes_);
        if (depth >= horizon_) return 0.0;
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < set_.model().num_actions(); ++a) best = std::max(best, Q(members, depth, a));
        return best;
    }

    double Q(std::span<const Member> members, std::size_t depth, std::size_t a) {
        auto& buf = scratch_[depth + 1];
        buf.clear();
        for (const Member& m : members) buf.push_back({m.index, set_[m.index].child(m.cursor, a)});
        if (buf.size() > 1) {
            std::sort(buf.begin(), buf.end(), [](const Member& x, const Member& y) {
                const auto& rx = x.cursor.record;
                const auto& ry = y.cursor.record;
                if (rx.reward_index != ry.reward_index) return rx.reward_index < ry.reward_index;
                if (rx.observation != ry.observation) return rx.observation < ry.observation;
                if (rx.terminal != ry.terminal) return rx.terminal < ry.terminal;
                return x.index < y.index;
            });
        }
        double total = 0.0;
        std::size_t g0 = 0;
        while (g0 < buf.size()) {
            std::size_t g1 = g0 + 1;
            const auto& r0 = buf[g0].cursor.record;
            while (g1 < buf.size() && buf[g1].cursor.record.reward_index == r0.reward_index &&
                   buf[g1].cursor.record.observation == r0.observation &&
                   buf[g1].cursor.record.terminal == r0.terminal)
                ++g1;
            total += static_cast<double>(g1 - g0) * r0.reward;
            if (!r0.terminal && depth + 1 < horizon_)
                total += gamma_ * W(std::span<const Member>(buf.data() + g0, g1 - g0), depth + 1);
            g0 = g1;
        }
        return total;
    }

    std::size_t nodes() const noexcept { return nodes_; }

private:
    const InstanceSet& set_;
    std::size_t horizon_;
    std::size_t budget_;
    double gamma_;
    std::size_t nodes_ = 0;
    std::vector<std::vector<Member>> scratch_;
};

std::vector<std::vector<Member>> root_groups(const InstanceSet& set) {
    std::map<std::size_t, std::vector<Member>> groups;
    for (std::uint32_t i = 0; i < set.size(); ++i) {
        const auto& root = set[i].root_cursor();
        if (root.record.terminal) continue;
        groups[root.record.observation].push_back({i, root});
    }
    std::vector<std::vector<Member>> out;
    for (auto& [o, g] : groups) out.push_back(std::move(g));
    return out;
}

class InstanceOptimalState final : public PolicyState {
public:
    InstanceOptimalState(const InstanceOptimalPolicy* policy, std::vector<Member> members)
        : policy_(policy), members_(std::move(members)) {}
    std::unique_ptr<PolicyState> clone() const override { return std::make_unique<InstanceOptimalState>(*this); }

    void observe(std::size_t a, std::size_t o, std::size_t r) override {
        std::vector<Member> next;
        if (depth_ + 1 <= policy_->horizon()) {
            for (const Member& m : members_) {
                const NodeCursor c = policy_->set()[m.index].child(m.cursor, a);
                if (!c.record.terminal && c.record.observation == o && c.record.reward_index == r)
                    next.push_back({m.index, c});
            }
        }
        members_ = std::move(next);
        prefix_.push_back(static_cast<char16_t>(a));
        ++depth_;
    }

    std::vector<double> action_probs() const override {
        const std::size_t A = policy_->num_actions();
        if (members_.empty() || depth_ >= policy_->horizon())
            return std::vector<double>(A, 1.0 / static_cast<double>(A));
        std::vector<double> p(A, 0.0);
        p[policy_->best_action(members_, depth_, prefix_)] = 1.0;
        return p;
    }

    std::optional<std::uint64_t> merge_key() const override {
        if (members_.empty()) return hash_label("instance-optimal-fallback");
        std::uint64_t h = splitmix64(depth_);
        for (char16_t a : prefix_) h = splitmix64(h ^ static_cast<std::uint64_t>(a));
        h = splitmix64(h ^ 0xFFFFull);
        for (const Member& m : members_) h = splitmix64(h ^ m.index);
        return h;
    }

private:
    const InstanceOptimalPolicy* policy_;
    std::vector<Member> members_;
    std::u16string prefix_;
    std::size_t depth_ = 0;
};

}  // namespace

std::size_t InstanceOptimalPolicy::best_action(const std::vector<Member>& members, std::size_t depth,
                                               const std::u16string& prefix) const {
    std::string key(reinterpret_cast<const char*>(prefix.data()), prefix.size() * sizeof(char16_t));
    key.push_back('|');
    for (const Member& m : members) key.append(reinterpret_cast<const char*>(&m.index), sizeof m.index);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    InstanceDp dp(*set_, horizon_, budget_);
    std::vector<double> q(num_actions());
    for (std::size_t a = 0; a < q.size(); ++a) q[a] = dp.Q(members, depth, a);
    const std::size_t best = pick_best(q);
    cache_.emplace(std::move(key), best);
    return best;
}

std::unique_ptr<PolicyState> InstanceOptimalPolicy::start(std::size_t o0) const {
    std::vector<Member> members;
    for (std::uint32_t i = 0; i < set_->size(); ++i) {
        const auto& root = (*set_)[i].root_cursor();
        if (!root.record.terminal && root.record.observation == o0) members.push_back({i, root});
    }
    return std::make_unique<InstanceOptimalState>(this, std::move(members));
}

InstanceSolution solve_instance_optimal(const InstanceSet& set, std::size_t horizon, std::size_t node_budget) {
    InstanceDp dp(set, horizon, node_budget);
    double total = 0.0;
    for (const auto& group : root_groups(set)) total += dp.W(group, 0);
    InstanceSolution sol;
    sol.report.value = total / static_cast<double>(set.size());
    sol.report.nodes_expanded = dp.nodes();
    sol.report.depth = horizon;
    sol.report.exact = true;
    sol.policy = std::make_shared<InstanceOptimalPolicy>(set, horizon, node_budget);
    return sol;
}

// --- evaluation ------------------------------------------------------------------------

namespace {

std::size_t resolve_horizon(const PomdpModel& model, const EvalOptions& opts) {
    return opts.horizon == 0 ? model.horizon() : opts.horizon;
}

ValueReport summarize(const std::vector<double>& returns, std::uint64_t seed) {
    ValueReport r;
    const double n = static_cast<double>(returns.size());
    const double mean = std::accumulate(returns.begin(), returns.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : returns) ss += (x - mean) * (x - mean);
    r.value = mean;
    r.std_error = returns.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
    r.episodes = returns.size();
    r.seed = seed;
    r.exact = false;
    return r;
}

struct EvalNode {
    std::vector<double> w;
    std::unique_ptr<PolicyState> state;
};

void add_node(std::vector<EvalNode>& level, std::unordered_map<std::uint64_t, std::size_t>& index,
              std::vector<double> w, std::unique_ptr<PolicyState> state) {
    if (auto key = state->merge_key()) {
        if (auto it = index.find(*key); it != index.end()) {
            auto& target = level[it->second].w;
            for (std::size_t i = 0; i < target.size(); ++i) target[i] += w[i];
            return;
        }
        index.emplace(*key, level.size());
    }
    level.push_back({std::move(w), std::move(state)});
}

double instance_dfs(const Instance& inst, const NodeCursor& cursor, const PolicyState& state, std::size_t depth,
                    std::size_t horizon, double gamma, std::size_t budget, std::size_t& nodes) {
    if (++nodes > budget) throw BudgetExceededError("instance evaluation: node budget exceeded", nodes);
    const auto probs = state.action_probs();
    double v = 0.0;
    for (std::size_t a = 0; a < probs.size(); ++a) {
        if (probs[a] <= 0.0) continue;
        const NodeCursor child = inst.child(cursor, a);
        double q = child.record.reward;
        if (!child.record.terminal && depth + 1 < horizon) {
            auto next = state.clone();
            next->observe(a, child.record.observation, child.record.reward_index);
            q += gamma * instance_dfs(inst, child, *next, depth + 1, horizon, gamma, budget, nodes);
        }
        v += probs[a] * q;
    }
    return v;
}

double instance_dfs_fixed(const Instance& inst, const NodeCursor& cursor, const std::vector<double>& probs,
                          std::size_t depth, std::size_t horizon, double gamma, std::size_t budget,
                          std::size_t& nodes) {
    if (++nodes > budget) throw BudgetExceededError("instance evaluation: node budget exceeded", nodes);
    const PomdpModel& m = inst.model();
    double v = 0.0;
    if (depth + 1 >= horizon) {
        // Last layer: only the reward of each child is needed.
        for (std::size_t a = 0; a < probs.size(); ++a) {
            if (probs[a] <= 0.0) continue;
            Stream stream(child_key(cursor.key, cursor.depth, a));
            v += probs[a] * m.reward(draw_entry(m.transition(cursor.record.state, a), stream).reward_index);
        }
        return v;
    }
    for (std::size_t a = 0; a < probs.size(); ++a) {
        if (probs[a] <= 0.0) continue;
        const NodeCursor child = inst.child(cursor, a);
        double q = child.record.reward;
        if (!child.record.terminal)
            q += gamma * instance_dfs_fixed(inst, child, probs, depth + 1, horizon, gamma, budget, nodes);
        v += probs[a] * q;
    }
    return v;
}

}  // namespace

ValueReport evaluate_policy_on_model(const PomdpModel& model, const Policy& policy, const EvalOptions& opts) {
    const std::size_t H = resolve_horizon(model, opts);
    const double gamma = model.discount();
    if (opts.mode == EvalMode::monte_carlo) {
        if (opts.n_episodes == 0) throw std::invalid_argument("evaluate_policy_on_model: n_episodes = 0");
        std::vector<double> returns(opts.n_episodes);
        for (std::size_t e = 0; e < opts.n_episodes; ++e) {
            Stream stream(derive_seed(opts.seed, "episode", e));
            const InitialDraw init = sample_initial(model, stream);
            auto state = policy.start(init.observation);
            std::size_t s = init.state;
            double ret = 0.0, disc = 1.0;
            for (std::size_t t = 0; t < H && !model.is_terminal(s); ++t) {
                const std::size_t a = stream.categorical(state->action_probs());
                const StepOutcome out = step(model, s, init.modality, a, stream);
                ret += disc * out.reward;
                disc *= gamma;
                s = out.next_state;
                if (out.terminal) break;
                state->observe(a, out.observation, out.reward_index);
            }
            returns[e] = ret;
        }
        auto r = summarize(returns, opts.seed);
        r.depth = H;
        return r;
    }

    const std::size_t S = model.num_states(), K = model.num_modalities();
    std::vector<EvalNode> level;
    std::unordered_map<std::uint64_t, std::size_t> index;
    for (auto& [o, w] : initial_joints(model)) add_node(level, index, std::move(w), policy.start(o));

    std::size_t nodes = 0;
    double value = 0.0, disc = 1.0;
    for (std::size_t t = 0; t < H && !level.empty(); ++t) {
        std::vector<EvalNode> next;
        std::unordered_map<std::uint64_t, std::size_t> next_index;
        for (auto& node : level) {
            for (std::size_t s = 0; s < S; ++s)
                if (model.is_terminal(s))
                    for (std::size_t k = 0; k < K; ++k) node.w[s * K + k] = 0.0;
            if (std::accumulate(node.w.begin(), node.w.end(), 0.0) <= 0.0) continue;
            if (++nodes > opts.node_budget)
                throw BudgetExceededError("evaluate_policy_on_model: node budget exceeded", nodes);
            const auto probs = node.state->action_probs();
            for (std::size_t a = 0; a < probs.size(); ++a) {
                if (probs[a] <= 0.0) continue;
                for (auto& oc : enumerate_outcomes(model, node.w, a)) {
                    value += disc * probs[a] * oc.mass * model.reward(oc.reward_index);
                    if (t + 1 >= H) continue;
                    for (double& x : oc.next) x *= probs[a];
                    auto child = node.state->clone();
                    child->observe(a, oc.observation, oc.reward_index);
                    add_node(next, next_index, std::move(oc.next), std::move(child));
                }
            }
        }
        level = std::move(next);
        disc *= gamma;
    }
    ValueReport r;
    r.value = value;
    r.nodes_expanded = nodes;
    r.depth = H;
    r.exact = true;
    return r;
}

double instance_value(const Instance& inst, const Policy& policy, std::size_t horizon, std::size_t node_budget,
                      std::size_t* nodes_out) {
    const auto& root = inst.root_cursor();
    if (root.record.terminal || horizon == 0) return 0.0;
    std::size_t nodes = 0;
    const double gamma = inst.model().discount();
    auto state = policy.start(root.record.observation);
    double v;
    if (policy.history_independent())
        v = instance_dfs_fixed(inst, root, state->action_probs(), 0, horizon, gamma, node_budget, nodes);
    else
        v = instance_dfs(inst, root, *state, 0, horizon, gamma, node_budget, nodes);
    if (nodes_out) *nodes_out += nodes;
    return v;
}

ValueReport evaluate_policy_on_instances(const InstanceSet& set, const Policy& policy, const EvalOptions& opts) {
    const PomdpModel& model = set.model();
    const std::size_t H = resolve_horizon(model, opts);
    const double gamma = model.discount();
    if (opts.mode == EvalMode::monte_carlo) {
        if (opts.n_episodes == 0) throw std::invalid_argument("evaluate_policy_on_instances: n_episodes = 0");
        std::vector<double> returns(opts.n_episodes);
        for (std::size_t e = 0; e < opts.n_episodes; ++e) {
            Stream stream(derive_seed(opts.seed, "instance-episode", e));
            const Instance& inst = set[set.sample_index(stream)];
            NodeCursor cur = inst.root_cursor();
            auto state = policy.start(cur.record.observation);
            double ret = 0.0, disc = 1.0;
            for (std::size_t t = 0; t < H && !cur.record.terminal; ++t) {
                const std::size_t a = stream.categorical(state->action_probs());
                cur = inst.child(cur, a);
                ret += disc * cur.record.reward;
                disc *= gamma;
                if (cur.record.terminal) break;
                state->observe(a, cur.record.observation, cur.record.reward_index);
            }
            returns[e] = ret;
        }
        auto r = summarize(returns, opts.seed);
        r.depth = H;
        return r;
    }
    std::size_t nodes = 0;
    double total = 0.0;
    for (const Instance& inst : set.instances()) {
        total += instance_value(inst, policy, H, opts.node_budget - std::min(nodes, opts.node_budget), &nodes);
    }
    ValueReport r;
    r.value = total / static_cast<double>(set.size());
    r.nodes_expanded = nodes;
    r.depth = H;
    r.exact = true;
    return r;
}

// --- lemma checks -----------------------------------------------------------------

VerificationReport verify_unbiased_value(const PomdpModel& model, const Policy& policy, std::size_t set_size,
                                         std::size_t n_sets, std::uint64_t seed, std::size_t workers) {
    if (n_sets < 2) throw std::invalid_argument("verify_unbiased_value: need at least two sets");
    const double v_model = evaluate_policy_on_model(model, policy, {}).value;
    std::vector<double> values(n_sets);
    std::vector<std::size_t> nodes(n_sets, 0);
    parallel_for(n_sets, workers, [&](std::size_t j) {
        const InstanceSet set(model, derive_seed(seed, "unbiased-set", j), set_size);
        EvalOptions opts;
        const ValueReport r = evaluate_policy_on_instances(set, policy, opts);
        values[j] = r.value;
        nodes[j] = r.nodes_expanded;
    });
    const double n = static_cast<double>(n_sets);
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double se = std::sqrt(ss / (n - 1.0) / n);
    const double scale = 1e-12 * std::max(1.0, std::abs(v_model));
    double z;
    if (se > scale) z = (mean - v_model) / se;
    else z = std::abs(mean - v_model) <= scale ? 0.0 : std::numeric_limits<double>::infinity();

    VerificationReport r;
    r.check = "unbiased-value";
    r.value = mean;
    r.reference = v_model;
    r.std_error = se;
    r.tolerance = 4.0;
    r.pass = std::abs(z) <= 4.0;
    r.nodes_expanded = std::accumulate(nodes.begin(), nodes.end(), std::size_t{0});
    r.seed = seed;
    r.details = {{"z", z}, {"set_size", set_size}, {"n_sets", n_sets}};
    return r;
}

namespace {

void fingerprint(const Instance& inst, const NodeCursor& node, std::size_t horizon, std::vector<std::size_t>& out,
                 std::size_t& budget) {
    if (node.depth >= horizon || node.record.terminal) return;
    for (std::size_t a = 0; a < inst.model().num_actions(); ++a) {
        if (budget-- == 0) throw BudgetExceededError("instance universe: tree too large to enumerate", 0);
        const NodeCursor c = inst.child(node, a);
        out.insert(out.end(), {c.record.reward_index, c.record.state, c.record.observation,
                               static_cast<std::size_t>(c.record.terminal)});
        fingerprint(inst, c, horizon, out, budget);
    }
}

double transition_prob(const PomdpModel& m, std::size_t s, std::size_t a, std::size_t r, std::size_t s2) {
    double p = 0.0;
    for (const auto& e : m.transition(s, a))
        if (e.reward_index == r && e.next_state == s2) p += e.prob;
    return p;
}

double tree_prob_given_k(const Instance& inst, const NodeCursor& node, std::size_t horizon, std::size_t k) {
    const PomdpModel& m = inst.model();
    if (node.depth >= horizon || node.record.terminal) return 1.0;
    double p = 1.0;
    for (std::size_t a = 0; a < m.num_actions() && p > 0.0; ++a) {
        const NodeCursor c = inst.child(node, a);
        p *= transition_prob(m, node.record.state, a, c.record.reward_index, c.record.state) *
             m.observation(c.record.state, a, k)[c.record.observation];
        p *= tree_prob_given_k(inst, c, horizon, k);
    }
    return p;
}

}  // namespace

std::vector<WeightedInstance> enumerate_instance_universe(const PomdpModel& model, std::size_t max_distinct,
                                                          std::uint64_t seed, std::size_t max_seeds) {
    std::map<std::vector<std::size_t>, WeightedInstance> found;
    double mass = 0.0;
    const std::size_t H = model.horizon();
    for (std::size_t j = 0; j < max_seeds && mass < 1.0 - 1e-9; ++j) {
        Instance inst(model, derive_seed(seed, "universe", j));
        const auto& root = inst.root_cursor();
        std::vector<std::size_t> fp{root.record.state, root.record.observation,
                                    static_cast<std::size_t>(root.record.terminal)};
        std::size_t budget = 100'000;
        fingerprint(inst, root, H, fp, budget);
        if (found.count(fp)) continue;
        double p = 0.0;
        for (std::size_t k = 0; k < model.num_modalities(); ++k) {
            p += model.initial_dist()[root.record.state] / static_cast<double>(model.num_modalities()) *
                 model.observation(root.record.state, model.no_action(), k)[root.record.observation] *
                 tree_prob_given_k(inst, root, H, k);
        }
        found.emplace(std::move(fp), WeightedInstance{std::move(inst), p});
        mass += p;
        if (found.size() > max_distinct)
            throw BudgetExceededError("instance universe larger than allowed", found.size());
    }
    if (mass < 1.0 - 1e-9) throw std::runtime_error("instance universe: seed scan did not cover all trees");
    std::vector<WeightedInstance> out;
    for (auto& [fp, wi] : found) out.push_back(std::move(wi));
    return out;
}

std::vector<ObservableHistory> enumerate_histories(const PomdpModel& model, std::size_t max_length,
                                                   std::size_t limit) {
    struct Item {
        ObservableHistory h;
        std::vector<double> w;
    };
    std::vector<ObservableHistory> out;
    std::vector<Item> frontier;
    for (auto& [o, w] : initial_joints(model)) {
        ObservableHistory h;
        h.observations.push_back(o);
        frontier.push_back({std::move(h), std::move(w)});
    }
    const std::size_t S = model.num_states(), K = model.num_modalities();
    for (std::size_t t = 0; !frontier.empty(); ++t) {
        std::vector<Item> next;
        for (auto& item : frontier) {
            for (std::size_t s = 0; s < S; ++s)
                if (model.is_terminal(s))
                    for (std::size_t k = 0; k < K; ++k) item.w[s * K + k] = 0.0;
            if (std::accumulate(item.w.begin(), item.w.end(), 0.0) <= 0.0) continue;
            out.push_back(item.h);
            if (out.size() > limit) throw BudgetExceededError("enumerate_histories: limit exceeded", out.size());
            if (t >= max_length) continue;
            for (std::size_t a = 0; a < model.num_actions(); ++a) {
                for (auto& oc : enumerate_outcomes(model, item.w, a)) {
                    Item child{item.h, std::move(oc.next)};
                    child.h.actions.push_back(a);
                    child.h.rewards.push_back(oc.reward_index);
                    child.h.observations.push_back(oc.observation);
                    next.push_back(std::move(child));
                }
            }
        }
        frontier = std::move(next);
    }
    return out;
}

GreedyTablePolicy canonicalize(const PomdpModel& model, const Policy& policy) {
    std::map<GreedyTablePolicy::Key, std::size_t> table;
    const std::size_t max_len = model.horizon() == 0 ? 0 : model.horizon() - 1;
    for (const auto& h : enumerate_histories(model, max_len)) {
        auto state = policy.start(h.observations[0]);
        for (std::size_t t = 0; t < h.actions.size(); ++t)
            state->observe(h.actions[t], h.observations[t + 1], h.rewards[t]);
        table[history_key(h)] = greedy_action(state->action_probs());
    }
    return GreedyTablePolicy(model.num_actions(), std::move(table));
}

VerificationReport verify_generalization_bound(const PomdpModel& model, const std::vector<WeightedInstance>& universe,
                                               std::size_t n, const Trainer& trainer, const std::string& learner) {
    if (universe.empty() || n == 0) throw std::invalid_argument("verify_generalization_bound: empty universe or n = 0");
    std::size_t combos = 1;
    for (std::size_t i = 0; i < n; ++i) {
        combos *= universe.size();
        if (combos > 1'000'000) throw BudgetExceededError("verify_generalization_bound: too many sets", combos);
    }

    double signed_gap = 0.0, abs_gap = 0.0, total_p = 0.0;
    std::vector<std::pair<GreedyTablePolicy, double>> tables;
    std::vector<std::size_t> digits(n, 0);
    for (std::size_t c = 0; c < combos; ++c) {
        std::size_t rest = c;
        double p = 1.0;
        std::vector<Instance> members;
        for (std::size_t i = 0; i < n; ++i) {
            digits[i] = rest % universe.size();
            rest /= universe.size();
            p *= universe[digits[i]].weight;
            members.push_back(universe[digits[i]].instance);
        }
        if (p <= 0.0) continue;
        const InstanceSet set = InstanceSet::multiset(model, std::move(members));
        const auto trained = trainer(set);
        GreedyTablePolicy canon = canonicalize(model, *trained);
        const double v_set = evaluate_policy_on_instances(set, canon, {}).value;
        const double v_model = evaluate_policy_on_model(model, canon, {}).value;
        signed_gap += p * (v_set - v_model);
        abs_gap += p * std::abs(v_set - v_model);
        total_p += p;
        auto it = std::find_if(tables.begin(), tables.end(), [&](const auto& e) { return e.first == canon; });
        if (it == tables.end()) tables.emplace_back(std::move(canon), p);
        else it->second += p;
    }

    // The trained policy is a deterministic function of I, so MI(I, pi) = H(pi).
    double mi = 0.0;
    for (const auto& [table, q] : tables) {
        const double qn = q / total_p;
        if (qn > 0.0) mi -= qn * std::log(qn);
    }
    mi = std::max(mi, 0.0);
    const double C = 2.0 * model.max_abs_reward() * discounted_horizon(model.discount(), model.horizon());
    const double bound = std::sqrt(2.0 * C * C * mi / static_cast<double>(n));
    const double lhs = std::abs(signed_gap / total_p);

    VerificationReport r;
    r.check = "generalization-bound";
    r.value = lhs;
    r.reference = bound;
    r.tolerance = 1e-12;
    r.pass = lhs <= bound + r.tolerance;
    r.details = {{"learner", learner},
                 {"n", n},
                 {"mutual_information_nats", mi},
                 {"C", C},
                 {"expected_abs_gap", abs_gap / total_p},
                 {"sets_enumerated", combos},
                 {"distinct_policies", tables.size()},
                 {"universe_size", universe.size()}};
    return r;
}

BanditClosedForms bandit_closed_forms(double p_hi, double p_lo, std::size_t num_actions, std::size_t horizon,
                                      double discount, std::optional<double> pi0) {
    if (!(p_hi > p_lo)) throw std::invalid_argument("bandit: p_hi must exceed p_lo");
    if (num_actions < 2) throw std::invalid_argument("bandit: need at least two actions");
    const double geom = discounted_horizon(discount, horizon);
    const double p0 = pi0.value_or(1.0 / static_cast<double>(num_actions));
    BanditClosedForms f;
    f.v_state_opt = p_hi * geom;
    f.v_instance_lower_bound =
        (1.0 - (1.0 - p_hi) * std::pow(1.0 - p_lo, static_cast<double>(num_actions - 1))) * geom;
    f.v_policy = (p0 * p_hi + (1.0 - p0) * p_lo) * geom;
    return f;
}

}  // namespace instlab
