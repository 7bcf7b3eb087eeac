#pragma once

#include <cstddef>
#include <vector>

#include "instlab/env.hpp"
#include "instlab/history.hpp"

namespace instlab {

/// Joint posterior over (hidden state, modality), stored as joint[s * K + k].
struct ExactBelief {
    std::size_t num_states = 0;
    std::size_t num_modalities = 0;
    std::vector<double> joint;

    double at(std::size_t s, std::size_t k) const { return joint[s * num_modalities + k]; }
    std::vector<double> state_marginal() const;
    std::vector<double> modality_marginal() const;
    /// Every state with positive mass is terminal.
    bool all_terminal(const PomdpModel& model) const;
};

/// Prior mu(s) / |K| conditioned on o_0. Throws ZeroLikelihoodError if o_0 is impossible.
ExactBelief init_belief(const PomdpModel& model, std::size_t initial_observation);

/// joint'[s'][k] ∝ sum_s joint[s][k] T[s][a](r, s') Obs[s'][a][k](o).
/// Throws ZeroLikelihoodError when the update has no mass.
ExactBelief update_belief(const PomdpModel& model, const ExactBelief& belief, std::size_t action,
                          std::size_t observation, std::size_t reward_index);

/// Left fold of init_belief / update_belief over the history.
ExactBelief belief_from_history(const PomdpModel& model, const ObservableHistory& history);

/// Unnormalized version of the update, used by the exact evaluators.
std::vector<double> propagate_joint(const PomdpModel& model, const std::vector<double>& joint,
                                    std::size_t action, std::size_t observation,
                                    std::size_t reward_index);

/// L-infinity distance between two beliefs of the same model.
double belief_distance(const ExactBelief& a, const ExactBelief& b);

}  // namespace instlab
