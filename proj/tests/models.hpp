#pragma once

#include "instlab/env.hpp"

namespace testmodels {

// Three-state ring: action 0 advances (reward 1 when wrapping), action 1 stays.
// Observation = state, single modality, fully deterministic.
inline instlab::PomdpModel ring(std::size_t horizon = 4, double discount = 0.9) {
    instlab::PomdpTables t;
    t.name = "ring";
    t.num_states = 3;
    t.num_actions = 2;
    t.num_modalities = 1;
    t.num_observations = 3;
    t.reward_support = {0.0, 1.0};
    t.initial_dist = {1.0, 0.0, 0.0};
    t.terminal = {0, 0, 0};
    t.discount = discount;
    t.horizon = horizon;
    t.transition.resize(6);
    for (std::size_t s = 0; s < 3; ++s) {
        t.transition[s * 2 + 0] = {{s == 2 ? 1u : 0u, (s + 1) % 3, 1.0}};
        t.transition[s * 2 + 1] = {{0, s, 1.0}};
    }
    t.observation.resize(3 * 3);
    for (std::size_t s = 0; s < 3; ++s)
        for (std::size_t a = 0; a < 3; ++a) {
            std::vector<double> row(3, 0.0);
            row[s] = 1.0;
            t.observation[s * 3 + a] = row;
        }
    return instlab::PomdpModel(std::move(t));
}

// Two hidden states, two modalities, noisy observations, a terminal sink.
inline instlab::PomdpModel noisy(std::size_t horizon = 5) {
    instlab::PomdpTables t;
    t.name = "noisy";
    t.num_states = 3;
    t.num_actions = 2;
    t.num_modalities = 2;
    t.num_observations = 3;
    t.reward_support = {-1.0, 0.0, 2.0};
    t.initial_dist = {0.6, 0.4, 0.0};
    t.terminal = {0, 0, 1};
    t.discount = 0.95;
    t.horizon = horizon;
    t.transition = {
        {{1, 0, 0.5}, {1, 1, 0.3}, {2, 1, 0.2}},  // s0 a0
        {{0, 2, 0.1}, {1, 0, 0.9}},               // s0 a1
        {{2, 0, 0.4}, {1, 1, 0.6}},               // s1 a0
        {{0, 2, 0.3}, {2, 2, 0.2}, {1, 1, 0.5}},  // s1 a1
        {{1, 2, 1.0}},
        {{1, 2, 1.0}},
    };
    t.observation.resize(3 * 3 * 2);
    for (std::size_t s = 0; s < 3; ++s)
        for (std::size_t a = 0; a < 3; ++a)
            for (std::size_t k = 0; k < 2; ++k) {
                std::vector<double> row;
                if (s == 2) row = {0.0, 0.0, 1.0};
                else if ((s + k) % 2 == 0) row = {0.7, 0.3, 0.0};
                else row = {0.2, 0.8, 0.0};
                t.observation[(s * 3 + a) * 2 + k] = row;
            }
    return instlab::PomdpModel(std::move(t));
}

}  // namespace testmodels
