#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "instlab/env.hpp"
#include "instlab/iape.hpp"

namespace instlab {

/// Malformed or invalid run configuration. `line` is 0 when the field kept its default.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::size_t line, std::string field, const std::string& what, const std::string& source = "");
    std::size_t line() const noexcept { return line_; }
    const std::string& field() const noexcept { return field_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    std::size_t line_;
    std::string field_;
    std::string detail_;
};

struct BanditParams {
    double p_hi = 0.9;
    double p_lo = 0.1;
    std::size_t num_actions = 4;
    std::size_t horizon = 10;
    double discount = 0.9;
};

struct VerifyConfig {
    std::size_t action = 0;  // lemma1
    std::size_t n_instances = 10'000;
    std::size_t repeats = 20;
    std::vector<std::size_t> sweep = {100, 1000, 10'000};
    std::vector<std::size_t> sequence = {0, 1, 0};  // corollary1
    std::size_t set_size = 1;                       // lemma2
    std::size_t n_sets = 2000;
    std::size_t lemma3_sets = 200;
    double universe_p_hi = 0.7;  // lemma4: bandit universe
    double universe_p_lo = 0.4;
    std::size_t universe_horizon = 1;
    std::size_t universe_max = 16;
    std::vector<std::size_t> universe_sizes = {1, 2};
    std::size_t learner_steps = 3000;
    std::size_t gradcheck_draws = 50;
    double gradcheck_tolerance = 1e-4;
    std::size_t segments = 1000;  // eq15-degenerate
};

struct EvaluateConfig {
    std::vector<std::string> checkpoints;
    std::vector<std::string> pools = {"train", "test"};
    std::size_t episodes = 1000;
    std::size_t test_instances = 200;
    std::size_t signature_episodes = 1;
    std::size_t bins = 20;
};

struct ContinualConfig {
    std::string checkpoint;
    std::size_t steps = 200'000;
    std::string shift = "fresh";  // fresh | identity
};

struct DumpConfig {
    std::uint64_t instance_seed = 0;
    std::size_t depth = 3;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    std::string env = "bandit";
    BanditParams bandit;
    CorridorParams corridor;
    TrainConfig train;
    VerifyConfig verify;
    EvaluateConfig evaluate;
    ContinualConfig continual;
    DumpConfig dump;
};

/// Parses sectioned `key = value` text. Unknown sections or keys, duplicates,
/// type mismatches and invalid values raise ConfigError with the line number.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

/// Every field with its current value, in a form parse_config reads back exactly.
std::string dump_config(const RunConfig& cfg);

/// Range and consistency checks on a config assembled in code.
void validate(const RunConfig& cfg);

PomdpModel build_env(const RunConfig& cfg);

}  // namespace instlab
