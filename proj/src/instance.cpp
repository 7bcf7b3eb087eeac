#include "instlab/instance.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <unordered_set>

#include "instlab/errors.hpp"

namespace instlab {

Instance::Instance(const PomdpModel& model, std::uint64_t instance_seed)
    : model_(&model), seed_(instance_seed) {
    if (model.num_actions() > 0xFFFF) throw std::invalid_argument("instance: too many actions");
    root_.key = splitmix64(instance_seed ^ hash_label("root"));
    root_.depth = 0;
    Stream stream(root_.key);
    const InitialDraw d = sample_initial(model, stream);
    modality_ = d.modality;
    root_.record.state = d.state;
    root_.record.observation = d.observation;
    root_.record.terminal = model.is_terminal(d.state);
}

NodeCursor Instance::child(const NodeCursor& parent, std::size_t action) const {
    if (parent.record.terminal) throw UsageError("instance: cannot extend past a terminal node");
    if (action >= model_->num_actions()) throw UsageError("instance: action out of range");
    NodeCursor c;
    c.key = child_key(parent.key, parent.depth, action);
    c.depth = parent.depth + 1;
    Stream stream(c.key);
    const StepOutcome out = draw_transition(*model_, parent.record.state, modality_, action, stream);
    c.record.state = out.next_state;
    c.record.observation = out.observation;
    c.record.reward_index = out.reward_index;
    c.record.reward = out.reward;
    c.record.terminal = out.terminal;
    return c;
}

NodeCursor Instance::walk(std::span<const std::size_t> actions) const {
    if (actions.size() > model_->horizon()) throw UsageError("instance: action sequence exceeds horizon");
    NodeCursor cur = root_;
    std::u16string prefix;
    prefix.reserve(actions.size());
    for (std::size_t a : actions) {
        if (cur.record.terminal) throw UsageError("instance: cannot extend past a terminal node");
        prefix.push_back(static_cast<char16_t>(a));
        if (auto it = memo_.find(prefix); it != memo_.end()) {
            cur.key = child_key(cur.key, cur.depth, a);
            cur.depth += 1;
            cur.record = it->second;
        } else {
            cur = child(cur, a);
            memo_.emplace(prefix, cur.record);
        }
    }
    return cur;
}

std::vector<NodeRecord> Instance::query(std::span<const std::size_t> actions) const {
    if (actions.size() > model_->horizon()) throw UsageError("instance: action sequence exceeds horizon");
    std::vector<NodeRecord> path;
    path.reserve(actions.size() + 1);
    path.push_back(root_.record);
    for (std::size_t t = 1; t <= actions.size(); ++t)
        path.push_back(walk(actions.first(t)).record);
    return path;
}

Instance spawn_instance(const PomdpModel& model, std::uint64_t instance_seed) {
    return Instance(model, instance_seed);
}

InstanceSet::InstanceSet(const PomdpModel& model, std::uint64_t set_seed, std::size_t size)
    : model_(&model), set_seed_(set_seed) {
    std::unordered_set<std::uint64_t> seen;
    instances_.reserve(size);
    for (std::uint64_t j = 0; instances_.size() < size; ++j) {
        const std::uint64_t s = derive_seed(set_seed, "instance", j);
        if (!seen.insert(s).second) continue;
        instances_.emplace_back(model, s);
    }
}

InstanceSet InstanceSet::from_seeds(const PomdpModel& model, std::span<const std::uint64_t> seeds) {
    std::unordered_set<std::uint64_t> seen;
    std::vector<Instance> v;
    v.reserve(seeds.size());
    for (auto s : seeds) {
        if (!seen.insert(s).second) throw std::invalid_argument("instance set: repeated seed");
        v.emplace_back(model, s);
    }
    return InstanceSet(model, 0, std::move(v));
}

InstanceSet InstanceSet::multiset(const PomdpModel& model, std::vector<Instance> instances) {
    if (instances.empty()) throw std::invalid_argument("instance set: empty multiset");
    return InstanceSet(model, 0, std::move(instances));
}

bool compatible(const Instance& instance, const ObservableHistory& h) {
    if (!h.well_formed()) throw UsageError("observable history is malformed");
    NodeCursor cur = instance.root_cursor();
    if (cur.record.observation != h.observations[0]) return false;
    for (std::size_t t = 0; t < h.actions.size(); ++t) {
        if (cur.record.terminal) return false;
        cur = instance.child(cur, h.actions[t]);
        if (cur.record.observation != h.observations[t + 1] || cur.record.reward_index != h.rewards[t])
            return false;
    }
    return true;
}

bool compatible(const Instance& instance, const FullHistory& h) {
    if (!h.well_formed()) throw UsageError("history is malformed");
    const auto& o = h.observable;
    NodeCursor cur = instance.root_cursor();
    if (cur.record.state != h.states[0] || cur.record.observation != o.observations[0]) return false;
    for (std::size_t t = 0; t < o.actions.size(); ++t) {
        if (cur.record.terminal) return false;
        cur = instance.child(cur, o.actions[t]);
        if (cur.record.state != h.states[t + 1] || cur.record.observation != o.observations[t + 1] ||
            cur.record.reward_index != o.rewards[t])
            return false;
    }
    return true;
}

std::vector<TransitionOutcome> instance_set_transition(const InstanceSet& set, const FullHistory& history,
                                                       std::size_t action) {
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> counts;
    std::size_t n = 0;
    for (const Instance& inst : set.instances()) {
        if (!compatible(inst, history)) continue;
        const NodeCursor node = inst.walk(history.observable.actions);
        const NodeCursor next = inst.child(node, action);
        ++counts[{next.record.reward_index, next.record.state}];
        ++n;
    }
    if (n == 0) throw NoCompatibleInstanceError("no compatible instance for history");
    std::vector<TransitionOutcome> out;
    for (const auto& [key, c] : counts)
        out.push_back({key.first, key.second, static_cast<double>(c) / static_cast<double>(n)});
    return out;
}

InstancePosterior instance_posterior(const InstanceSet& set, const ObservableHistory& history) {
    InstancePosterior post;
    post.weights.assign(set.size(), 0.0);
    std::size_t n = 0;
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (compatible(set[i], history)) {
            post.weights[i] = 1.0;
            ++n;
        }
    }
    if (n == 0) return post;
    post.empty = false;
    for (double& w : post.weights) w /= static_cast<double>(n);
    return post;
}

namespace {

using PathLaw = std::map<std::vector<std::size_t>, double>;

void extend_exact(const PomdpModel& model, std::size_t state, std::size_t k, double weight,
                  std::vector<std::size_t>& path, std::span<const std::size_t> actions,
                  std::size_t step, PathLaw& law) {
    if (step == actions.size() || model.is_terminal(state)) {
        law[path] += weight;
        return;
    }
    const std::size_t a = actions[step];
    for (const auto& e : model.transition(state, a)) {
        if (e.prob <= 0.0) continue;
        const auto obs = model.observation(e.next_state, a, k);
        for (std::size_t o = 0; o < obs.size(); ++o) {
            if (obs[o] <= 0.0) continue;
            path.insert(path.end(), {e.reward_index, e.next_state, o});
            extend_exact(model, e.next_state, k, weight * e.prob * obs[o], path, actions, step + 1, law);
            path.resize(path.size() - 3);
        }
    }
}

std::vector<std::size_t> empirical_path(const Instance& inst, const NodeCursor& start, bool include_root,
                                        std::span<const std::size_t> actions) {
    std::vector<std::size_t> path;
    if (include_root) path = {start.record.state, start.record.observation};
    NodeCursor cur = start;
    for (std::size_t a : actions) {
        if (cur.record.terminal) break;
        cur = inst.child(cur, a);
        path.insert(path.end(), {cur.record.reward_index, cur.record.state, cur.record.observation});
    }
    return path;
}

}  // namespace

std::vector<std::pair<std::vector<std::size_t>, double>> exact_path_law(
    const PomdpModel& model, const FullHistory& tmpl, std::span<const std::size_t> actions) {
    PathLaw law;
    const std::size_t K = model.num_modalities();
    std::vector<std::size_t> path;
    if (tmpl.states.empty()) {
        const auto mu = model.initial_dist();
        for (std::size_t s = 0; s < model.num_states(); ++s) {
            if (mu[s] <= 0.0) continue;
            for (std::size_t k = 0; k < K; ++k) {
                const auto obs = model.observation(s, model.no_action(), k);
                for (std::size_t o = 0; o < obs.size(); ++o) {
                    if (obs[o] <= 0.0) continue;
                    path = {s, o};
                    extend_exact(model, s, k, mu[s] / static_cast<double>(K) * obs[o], path, actions, 0, law);
                }
            }
        }
    } else {
        if (!tmpl.well_formed()) throw UsageError("history template is malformed");
        const auto& h = tmpl.observable;
        std::vector<double> pk(K, 0.0);
        double z = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            double w = model.observation(tmpl.states[0], model.no_action(), k)[h.observations[0]];
            for (std::size_t t = 0; t < h.actions.size(); ++t)
                w *= model.observation(tmpl.states[t + 1], h.actions[t], k)[h.observations[t + 1]];
            pk[k] = w;
            z += w;
        }
        if (z <= 0.0) throw ZeroLikelihoodError("history template has zero likelihood");
        for (std::size_t k = 0; k < K; ++k) {
            if (pk[k] <= 0.0) continue;
            path.clear();
            extend_exact(model, tmpl.states.back(), k, pk[k] / z, path, actions, 0, law);
        }
    }
    return {law.begin(), law.end()};
}

VerificationReport verify_expected_transition(const PomdpModel& model, const FullHistory& tmpl,
                                              std::span<const std::size_t> actions,
                                              std::size_t n_instances, std::uint64_t seed) {
    if (n_instances == 0) throw std::invalid_argument("verify_expected_transition: n_instances = 0");
    const auto exact = exact_path_law(model, tmpl, actions);
    const bool conditional = !tmpl.states.empty();

    PathLaw counts;
    std::size_t drawn = 0, accepted = 0;
    const std::size_t max_draws = 1000 * n_instances;
    while (accepted < n_instances) {
        if (drawn >= max_draws)
            throw std::runtime_error("verify_expected_transition: template too unlikely to sample");
        const Instance inst(model, derive_seed(seed, "expected-transition", drawn++));
        NodeCursor start = inst.root_cursor();
        if (conditional) {
            if (!compatible(inst, tmpl)) continue;
            start = inst.walk(tmpl.observable.actions);
        }
        counts[empirical_path(inst, start, !conditional, actions)] += 1.0;
        ++accepted;
    }

    double l1 = 0.0;
    std::size_t support = 0;
    PathLaw exact_map(exact.begin(), exact.end());
    for (const auto& [path, p] : exact_map) {
        if (p > 0.0) ++support;
        const auto it = counts.find(path);
        const double q = it == counts.end() ? 0.0 : it->second / static_cast<double>(n_instances);
        l1 += std::abs(q - p);
    }
    for (const auto& [path, c] : counts)
        if (!exact_map.count(path)) l1 += c / static_cast<double>(n_instances);

    VerificationReport r;
    r.check = "expected-transition";
    r.value = l1;
    r.reference = 0.0;
    r.tolerance = 3.0 * std::sqrt(static_cast<double>(support) / static_cast<double>(n_instances));
    r.pass = l1 <= r.tolerance;
    r.seed = seed;
    r.details = {{"support", support},
                 {"n_instances", n_instances},
                 {"draws", drawn},
                 {"steps", actions.size()},
                 {"conditional", conditional}};
    return r;
}

}  // namespace instlab
