#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "instlab/instance.hpp"
#include "instlab/learner.hpp"
#include "instlab/policy.hpp"

namespace instlab {

/// Time-averaged action distribution of a policy on one instance.
struct PolicySignature {
    std::size_t instance = 0;
    std::vector<double> probs;
    std::size_t steps = 0;
};

/// Mean of pi(.|H^o_t) over every step of `episodes` sampled episodes
/// (streams derive_seed(seed, "signature", e)).
PolicySignature time_averaged_policy(const Policy& policy, const Instance& instance, std::uint64_t seed,
                                     std::size_t episodes = 1, std::size_t instance_id = 0);

/// KL(p || q) = sum p ln(p / q), 0 ln 0 = 0. Returns +infinity when q has a
/// zero where p does not.
double kl_divergence(std::span<const double> p, std::span<const double> q);

/// KL(signature of `reference` || signature of `policy`) per pool instance,
/// both signatures drawn with the same per-instance seed.
std::vector<double> per_instance_kl(const Policy& reference, const Policy& policy, const InstanceSet& pool,
                                    std::uint64_t seed, std::size_t episodes = 1);

struct EpisodeStat {
    std::size_t instance = 0;
    double ret = 0.0;  // discounted return
    bool success = false;
    std::size_t steps_to_reward = 0;  // steps until the terminal R_max reward, if successful
};

/// One episode on a single instance; success means a terminal reward equal to R_max.
EpisodeStat episode_stat(const Policy& policy, const Instance& instance, std::uint64_t seed,
                         std::size_t instance_id = 0);

struct DeltaTimeStats {
    std::vector<double> deltas;  // steps(policy) - steps(base), jointly successful episodes
    std::vector<std::size_t> instances;
    double mean = 0.0;
    double sd = 0.0;
    bool empty = true;
};

/// Paired episodes (equal seeds) of both policies on every pool instance.
DeltaTimeStats delta_time_to_reward(const Policy& policy, const Policy& base, const InstanceSet& pool,
                                    std::size_t episodes, std::uint64_t seed);

/// Symmetric M x M matrix; undefined entries (a zero-norm head) are flagged.
struct CosineMatrix {
    std::size_t size = 0;
    std::vector<double> values;
    std::vector<char> defined;
    double at(std::size_t i, std::size_t j) const { return values[i * size + j]; }
    bool is_defined(std::size_t i, std::size_t j) const { return defined[i * size + j] != 0; }
};

struct HeadSimilarity {
    CosineMatrix policy;
    CosineMatrix value;
};

/// Cosine similarity of flattened (weights, bias) per head pair. Throws
/// std::invalid_argument when M < 2.
HeadSimilarity cosine_similarity_heads(const EnsembleNet& net);

/// Median over defined off-diagonal entries (i < j); NaN when none.
double median_off_diagonal(const CosineMatrix& m);

struct AgreementReport {
    double mean_kl = 0.0;
    bool infinite = false;  // some KL(consensus || head) diverged
    std::size_t terms = 0;
};

/// Mean over heads of KL(consensus || head) for one set of signatures.
AgreementReport agreement_from_signatures(std::span<const double> consensus,
                                          const std::vector<std::vector<double>>& heads);

/// Averages KL(consensus signature || head signature) over pool instances and
/// heads. Signatures are taken along consensus-driven episodes.
AgreementReport ensemble_agreement(const EnsembleNet& net, const InstanceSet& pool, std::uint64_t seed,
                                   std::size_t episodes = 1);

struct Summary {
    double mean = 0.0;
    double sd = 0.0;
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
    std::size_t n = 0;
};

/// Sample statistics; quartiles by linear interpolation between order statistics.
Summary summarize(std::vector<double> xs);

/// Standalone SVG histogram with the binning recorded in a header comment.
std::string histogram_svg(const std::vector<double>& values, std::size_t bins, double lo, double hi,
                          const std::string& title);

/// Standalone SVG line chart; one polyline per series.
std::string line_chart_svg(const std::vector<double>& x, const std::vector<std::vector<double>>& series,
                           const std::vector<std::string>& names, const std::string& title);

}  // namespace instlab
