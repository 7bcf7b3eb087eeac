#include "instlab/belief.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "instlab/errors.hpp"

namespace instlab {
namespace {

void normalize_or_throw(std::vector<double>& v, const char* where) {
    double z = 0.0;
    for (double x : v) z += x;
    if (!(z > 0.0)) throw ZeroLikelihoodError(std::string(where) + ": observation has zero likelihood");
    for (double& x : v) x /= z;
}

}  // namespace

std::vector<double> ExactBelief::state_marginal() const {
    std::vector<double> m(num_states, 0.0);
    for (std::size_t s = 0; s < num_states; ++s)
        for (std::size_t k = 0; k < num_modalities; ++k) m[s] += at(s, k);
    return m;
}

std::vector<double> ExactBelief::modality_marginal() const {
    std::vector<double> m(num_modalities, 0.0);
    for (std::size_t s = 0; s < num_states; ++s)
        for (std::size_t k = 0; k < num_modalities; ++k) m[k] += at(s, k);
    return m;
}

bool ExactBelief::all_terminal(const PomdpModel& model) const {
    for (std::size_t s = 0; s < num_states; ++s) {
        if (model.is_terminal(s)) continue;
        for (std::size_t k = 0; k < num_modalities; ++k)
            if (at(s, k) > 0.0) return false;
    }
    return true;
}

ExactBelief init_belief(const PomdpModel& model, std::size_t initial_observation) {
    if (initial_observation >= model.num_observations()) throw UsageError("init_belief: observation out of range");
    ExactBelief b;
    b.num_states = model.num_states();
    b.num_modalities = model.num_modalities();
    b.joint.assign(b.num_states * b.num_modalities, 0.0);
    const auto mu = model.initial_dist();
    const double pk = 1.0 / static_cast<double>(b.num_modalities);
    for (std::size_t s = 0; s < b.num_states; ++s) {
        if (mu[s] <= 0.0) continue;
        for (std::size_t k = 0; k < b.num_modalities; ++k)
            b.joint[s * b.num_modalities + k] =
                mu[s] * pk * model.observation(s, model.no_action(), k)[initial_observation];
    }
    normalize_or_throw(b.joint, "init_belief");
    return b;
}

std::vector<double> propagate_joint(const PomdpModel& model, const std::vector<double>& joint,
                                    std::size_t action, std::size_t observation, std::size_t reward_index) {
    const std::size_t S = model.num_states(), K = model.num_modalities();
    std::vector<double> next(S * K, 0.0);
    for (std::size_t s = 0; s < S; ++s) {
        bool any = false;
        for (std::size_t k = 0; k < K; ++k) any = any || joint[s * K + k] > 0.0;
        if (!any) continue;
        for (const auto& e : model.transition(s, action)) {
            if (e.reward_index != reward_index || e.prob <= 0.0) continue;
            for (std::size_t k = 0; k < K; ++k) {
                const double w = joint[s * K + k];
                if (w <= 0.0) continue;
                next[e.next_state * K + k] += w * e.prob * model.observation(e.next_state, action, k)[observation];
            }
        }
    }
    return next;
}

ExactBelief update_belief(const PomdpModel& model, const ExactBelief& belief, std::size_t action,
                          std::size_t observation, std::size_t reward_index) {
    if (action >= model.num_actions() || observation >= model.num_observations() ||
        reward_index >= model.reward_support().size())
        throw UsageError("update_belief: index out of range");
    ExactBelief out;
    out.num_states = belief.num_states;
    out.num_modalities = belief.num_modalities;
    out.joint = propagate_joint(model, belief.joint, action, observation, reward_index);
    normalize_or_throw(out.joint, "update_belief");
    return out;
}

ExactBelief belief_from_history(const PomdpModel& model, const ObservableHistory& h) {
    if (!h.well_formed()) throw UsageError("belief_from_history: malformed history");
    ExactBelief b = init_belief(model, h.observations[0]);
    for (std::size_t t = 0; t < h.actions.size(); ++t)
        b = update_belief(model, b, h.actions[t], h.observations[t + 1], h.rewards[t]);
    return b;
}

double belief_distance(const ExactBelief& a, const ExactBelief& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.joint.size(); ++i) d = std::max(d, std::abs(a.joint[i] - b.joint[i]));
    return d;
}

}  // namespace instlab
