#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace instlab {

// SplitMix64 finalizer (Steele, Lea & Flood 2014). Every seed derivation in
// the project goes through this function so results are platform independent.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

constexpr std::uint64_t hash_label(std::string_view label) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ull;  // FNV-1a
    for (char c : label) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ull;
    }
    return splitmix64(h);
}

/// Named derivation: child seed for (component label, index) under a parent seed.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view label,
                                    std::uint64_t index = 0) noexcept {
    return splitmix64(splitmix64(seed ^ hash_label(label)) + index);
}

/// Deterministic pseudo-random stream. All distributions are implemented here
/// rather than through <random> distributions, whose output is
/// implementation-defined.
class Stream {
public:
    explicit Stream(std::uint64_t seed) noexcept : state_(seed) {}

    std::uint64_t next() noexcept {
        state_ += 0x9E3779B97F4A7C15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform on [0, 1) with 53 bits of resolution.
    double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::size_t below(std::size_t n) noexcept {
        const auto wide = static_cast<unsigned __int128>(next()) * n;
        return static_cast<std::size_t>(wide >> 64);
    }

    bool bernoulli(double p) noexcept { return uniform() < p; }

    /// Inverse-CDF draw from a probability vector. Never returns an index with
    /// zero probability.
    std::size_t categorical(std::span<const double> probs) noexcept {
        const double u = uniform();
        double acc = 0.0;
        std::size_t last_positive = 0;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            if (probs[i] <= 0.0) continue;
            acc += probs[i];
            last_positive = i;
            if (u < acc) return i;
        }
        return last_positive;
    }

    std::uint64_t state() const noexcept { return state_; }

private:
    std::uint64_t state_;
};

}  // namespace instlab
