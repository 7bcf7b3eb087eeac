#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

namespace instlab {

/// Outcome of an oracle or statistical check.
struct VerificationReport {
    std::string check;
    double value = 0.0;      // the tested statistic (distance, z-score, gap, ...)
    double reference = 0.0;  // what the statistic is compared against
    double std_error = 0.0;
    double tolerance = 0.0;
    bool pass = false;
    std::size_t nodes_expanded = 0;
    std::uint64_t seed = 0;
    nlohmann::json details = nlohmann::json::object();
};

/// Exact or Monte-Carlo value of a policy.
struct ValueReport {
    double value = 0.0;
    double std_error = 0.0;
    std::size_t nodes_expanded = 0;
    std::size_t depth = 0;
    std::size_t episodes = 0;
    std::uint64_t seed = 0;
    bool exact = true;
};

nlohmann::json to_json(const VerificationReport& r);
nlohmann::json to_json(const ValueReport& r);

}  // namespace instlab
