#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace instlab {

/// Caller broke an operation contract (stepping a terminal state, querying
/// past a terminal node, shape mismatch).
class UsageError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Observable history has zero probability under the model.
class ZeroLikelihoodError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NoCompatibleInstanceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Exact solver or evaluator would exceed its node budget.
class BudgetExceededError : public std::runtime_error {
public:
    BudgetExceededError(const std::string& what, std::size_t nodes)
        : std::runtime_error(what + " (nodes: " + std::to_string(nodes) + ")"), nodes_(nodes) {}
    std::size_t nodes() const noexcept { return nodes_; }

private:
    std::size_t nodes_;
};

/// Non-finite value encountered during training.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace instlab
