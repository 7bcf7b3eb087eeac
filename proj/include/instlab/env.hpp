#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "instlab/random.hpp"

namespace instlab {

struct TransitionEntry {
    std::size_t reward_index;
    std::size_t next_state;
    double prob;
};

/// Raw tables for a tabular POMDP. Validated when wrapped in a PomdpModel.
///
/// Observation rows are laid out as observation[(s' * (A + 1) + a) * K + k];
/// the action slot a == A is the reserved "no-action" slot used for o_0.
struct PomdpTables {
    std::string name;
    std::size_t num_states = 0;
    std::size_t num_actions = 0;
    std::size_t num_modalities = 1;
    std::size_t num_observations = 0;
    std::vector<double> reward_support;
    std::vector<double> initial_dist;
    std::vector<std::vector<TransitionEntry>> transition;  // [s * A + a]
    std::vector<std::vector<double>> observation;
    std::vector<char> terminal;  // per state
    double discount = 1.0;
    std::size_t horizon = 1;
};

class PomdpModel {
public:
    /// Throws std::invalid_argument when any invariant of the tables fails.
    explicit PomdpModel(PomdpTables tables);

    const std::string& name() const noexcept { return t_.name; }
    std::size_t num_states() const noexcept { return t_.num_states; }
    std::size_t num_actions() const noexcept { return t_.num_actions; }
    std::size_t num_modalities() const noexcept { return t_.num_modalities; }
    std::size_t num_observations() const noexcept { return t_.num_observations; }
    std::size_t no_action() const noexcept { return t_.num_actions; }
    double discount() const noexcept { return t_.discount; }
    std::size_t horizon() const noexcept { return t_.horizon; }

    std::span<const double> reward_support() const noexcept { return t_.reward_support; }
    double reward(std::size_t index) const { return t_.reward_support.at(index); }
    double max_abs_reward() const noexcept;
    std::span<const double> initial_dist() const noexcept { return t_.initial_dist; }

    std::span<const TransitionEntry> transition(std::size_t s, std::size_t a) const {
        return t_.transition[s * t_.num_actions + a];
    }
    /// Distribution over observations; pass no_action() for the initial observation.
    std::span<const double> observation(std::size_t next_state, std::size_t a,
                                        std::size_t k) const {
        return t_.observation[(next_state * (t_.num_actions + 1) + a) * t_.num_modalities + k];
    }
    bool is_terminal(std::size_t s) const { return t_.terminal[s] != 0; }

    const PomdpTables& tables() const noexcept { return t_; }

private:
    PomdpTables t_;
};

struct InitialDraw {
    std::size_t state;
    std::size_t modality;
    std::size_t observation;
};

struct StepOutcome {
    double reward;
    std::size_t reward_index;
    std::size_t next_state;
    std::size_t observation;
    bool terminal;
};

/// s_0 ~ mu, k ~ U_K, o_0 ~ Obs[s_0][no-action][k], drawn in that order.
InitialDraw sample_initial(const PomdpModel& model, Stream& stream);

/// Throws UsageError when `state` is terminal or any index is out of range.
StepOutcome step(const PomdpModel& model, std::size_t state, std::size_t modality,
                 std::size_t action, Stream& stream);

/// First draw of a transition: the (reward, next state) entry of `row`.
inline const TransitionEntry& draw_entry(std::span<const TransitionEntry> row, Stream& stream) {
    const double u = stream.uniform();
    double acc = 0.0;
    const TransitionEntry* chosen = nullptr;
    for (const auto& e : row) {
        if (e.prob <= 0.0) continue;
        acc += e.prob;
        chosen = &e;
        if (u < acc) break;
    }
    return *chosen;
}

/// Draws the (reward, next state, observation) triple of one transition.
/// Shared by `step` and by instance node generation.
StepOutcome draw_transition(const PomdpModel& model, std::size_t state, std::size_t modality,
                            std::size_t action, Stream& stream);

// --- concrete environments ---------------------------------------------------

/// Single-state sequential bandit: arm 0 pays 1 w.p. p_hi, other arms w.p. p_lo.
PomdpModel build_bandit(double p_hi, double p_lo, std::size_t num_actions, std::size_t horizon,
                        double discount);

struct CorridorParams {
    std::size_t length = 8;
    double hazard_prob = 0.35;
    std::size_t num_modalities = 3;
    std::size_t horizon = 16;
    double discount = 0.9;
};

/// Gated corridor, a desk-scale platformer analogue.
///
/// Walkable cells 0..L-1, goal at cell L. Hidden state (position, hazard flag
/// of the next cell) plus absorbing dead/goal states. Hazards never occupy two
/// consecutive cells. Actions:
///   advance  move one cell; dies if the next cell is a hazard.
///   jump     move two cells; clears a hazard in the next cell, but dies if the
///            landing cell (never observed beforehand) is a hazard.
///   wait     no-op.
/// Reaching the goal pays 10. The initial observation is a theme card that
/// reveals the modality k only; later observations reveal the hazard flag and
/// the position shifted cyclically by k.
PomdpModel build_gated_corridor(const CorridorParams& params);

namespace corridor {
inline constexpr std::size_t kAdvance = 0;
inline constexpr std::size_t kJump = 1;
inline constexpr std::size_t kWait = 2;
inline constexpr double kGoalReward = 10.0;

inline std::size_t state_of(std::size_t pos, bool hazard) { return pos * 2 + (hazard ? 1 : 0); }
inline std::size_t dead_state(std::size_t length) { return 2 * length; }
inline std::size_t goal_state(std::size_t length) { return 2 * length + 1; }
}  // namespace corridor

/// JSON description of every table, row-major, numbers printed with 17
/// significant digits.
std::string model_to_json(const PomdpModel& model);

}  // namespace instlab
