#pragma once

#include <cstddef>
#include <vector>

namespace instlab {

/// H^o_t: actions a_{0:t-1}, observations o_{0:t}, rewards r_{1:t}.
/// Rewards are kept as indices into the model's reward support.
struct ObservableHistory {
    std::vector<std::size_t> actions;
    std::vector<std::size_t> observations;
    std::vector<std::size_t> rewards;

    std::size_t length() const noexcept { return actions.size(); }
    bool well_formed() const noexcept {
        return observations.size() == actions.size() + 1 && rewards.size() == actions.size();
    }
};

/// H_t: the observable history plus hidden states s_{0:t}.
struct FullHistory {
    ObservableHistory observable;
    std::vector<std::size_t> states;

    std::size_t length() const noexcept { return observable.length(); }
    bool well_formed() const noexcept {
        return observable.well_formed() && states.size() == observable.observations.size();
    }
};

}  // namespace instlab
