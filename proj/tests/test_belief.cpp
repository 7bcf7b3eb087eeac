#include <doctest.h>

#include <cmath>
#include <functional>

#include "instlab/belief.hpp"
#include "instlab/errors.hpp"
#include "instlab/instance.hpp"
#include "models.hpp"

using namespace instlab;

namespace {

// Posterior over (s_t, k) by summing over every hidden state sequence.
std::vector<double> enumerate_posterior(const PomdpModel& m, const ObservableHistory& h) {
    const std::size_t S = m.num_states(), K = m.num_modalities(), T = h.actions.size();
    std::vector<double> post(S * K, 0.0);
    std::function<void(std::size_t, std::size_t, std::size_t, double)> rec = [&](std::size_t t, std::size_t s,
                                                                                std::size_t k, double w) {
        if (w == 0.0) return;
        if (t == T) {
            post[s * K + k] += w;
            return;
        }
        const std::size_t a = h.actions[t];
        for (std::size_t s2 = 0; s2 < S; ++s2) {
            double p = 0.0;
            for (const auto& e : m.transition(s, a))
                if (e.next_state == s2 && e.reward_index == h.rewards[t]) p += e.prob;
            rec(t + 1, s2, k, w * p * m.observation(s2, a, k)[h.observations[t + 1]]);
        }
    };
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t k = 0; k < K; ++k)
            rec(0, s, k, m.initial_dist()[s] / K * m.observation(s, m.no_action(), k)[h.observations[0]]);
    double z = 0.0;
    for (double x : post) z += x;
    for (double& x : post) x /= z;
    return post;
}

ObservableHistory sample_history(const PomdpModel& m, std::uint64_t seed, std::size_t len) {
    const Instance inst(m, seed);
    Stream s(seed ^ 0xABCDEF);
    ObservableHistory h;
    NodeCursor cur = inst.root_cursor();
    h.observations.push_back(cur.record.observation);
    while (h.actions.size() < len && !cur.record.terminal) {
        const std::size_t a = s.below(m.num_actions());
        cur = inst.child(cur, a);
        h.actions.push_back(a);
        h.rewards.push_back(cur.record.reward_index);
        h.observations.push_back(cur.record.observation);
    }
    return h;
}

}  // namespace

TEST_CASE("single state and modality gives a point mass") {
    const auto m = build_bandit(0.9, 0.1, 3, 5, 0.9);
    const auto b = init_belief(m, 0);
    REQUIRE(b.joint.size() == 1);
    CHECK(b.joint[0] == 1.0);
}

TEST_CASE("corridor theme card reveals k and leaves s at mu") {
    const auto m = build_gated_corridor({});
    const std::size_t L = 8;
    for (std::size_t k = 0; k < m.num_modalities(); ++k) {
        const auto b = init_belief(m, 2 * L + 2 + k);
        const auto pk = b.modality_marginal();
        for (std::size_t j = 0; j < pk.size(); ++j) CHECK(pk[j] == doctest::Approx(j == k ? 1.0 : 0.0));
        const auto ps = b.state_marginal();
        for (std::size_t s = 0; s < ps.size(); ++s) CHECK(ps[s] == doctest::Approx(m.initial_dist()[s]));
    }
}

TEST_CASE("uninformative initial observation keeps mu times uniform") {
    const auto m = testmodels::ring();
    const auto b = init_belief(m, 0);
    CHECK(b.at(0, 0) == 1.0);
    PomdpTables t = testmodels::noisy().tables();
    for (auto& row : t.observation) row = {1.0, 0.0, 0.0};
    const PomdpModel flat(t);
    const auto fb = init_belief(flat, 0);
    for (std::size_t s = 0; s < 3; ++s)
        for (std::size_t k = 0; k < 2; ++k) CHECK(fb.at(s, k) == doctest::Approx(flat.initial_dist()[s] / 2));
}

TEST_CASE("impossible observations raise zero-likelihood") {
    const auto m = testmodels::ring();
    CHECK_THROWS_AS(init_belief(m, 1), ZeroLikelihoodError);
    const auto b = init_belief(m, 0);
    CHECK_THROWS_AS(update_belief(m, b, 0, 0, 0), ZeroLikelihoodError);
}

TEST_CASE("deterministic chain belief tracks the true state") {
    const auto m = testmodels::ring();
    auto b = init_belief(m, 0);
    std::size_t s = 0;
    for (int t = 0; t < 6; ++t) {
        const std::size_t a = t % 3 == 2 ? 1 : 0;
        const std::size_t r = a == 0 && s == 2 ? 1 : 0;
        if (a == 0) s = (s + 1) % 3;
        b = update_belief(m, b, a, s, r);
        CHECK(b.at(s, 0) == 1.0);
    }
}

TEST_CASE("bandit belief is a delta for every history") {
    const auto m = build_bandit(0.9, 0.1, 4, 10, 0.9);
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const auto b = belief_from_history(m, sample_history(m, seed, 10));
        CHECK(b.joint[0] == 1.0);
    }
}

TEST_CASE("recursive filter equals brute-force enumeration") {
    for (const auto& m : {testmodels::noisy(6), build_gated_corridor({})}) {
        for (std::uint64_t seed = 0; seed < 60; ++seed) {
            const auto h = sample_history(m, seed, seed % 6);
            const auto b = belief_from_history(m, h);
            const auto ref = enumerate_posterior(m, h);
            double sum = 0.0;
            for (std::size_t i = 0; i < ref.size(); ++i) {
                CHECK(std::abs(b.joint[i] - ref[i]) <= 1e-10);
                CHECK(b.joint[i] >= 0.0);
                sum += b.joint[i];
            }
            CHECK(std::abs(sum - 1.0) <= 1e-10);
        }
    }
}

TEST_CASE("exhaustive fold check on all short histories") {
    const auto m = testmodels::noisy(5);
    std::function<void(ObservableHistory, ExactBelief)> walk = [&](ObservableHistory h, ExactBelief b) {
        const auto ref = enumerate_posterior(m, h);
        for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(b.joint[i] - ref[i]) <= 1e-10);
        if (h.actions.size() == 4 || b.all_terminal(m)) return;
        for (std::size_t a = 0; a < m.num_actions(); ++a)
            for (std::size_t r = 0; r < m.reward_support().size(); ++r)
                for (std::size_t o = 0; o < m.num_observations(); ++o) {
                    ExactBelief next;
                    try {
                        next = update_belief(m, b, a, o, r);
                    } catch (const ZeroLikelihoodError&) {
                        continue;
                    }
                    auto h2 = h;
                    h2.actions.push_back(a);
                    h2.rewards.push_back(r);
                    h2.observations.push_back(o);
                    walk(h2, next);
                }
    };
    for (std::size_t o = 0; o < 2; ++o) {
        ObservableHistory h;
        h.observations = {o};
        walk(h, init_belief(m, o));
    }
}

TEST_CASE("empty history folds to init_belief") {
    const auto m = testmodels::noisy();
    ObservableHistory h;
    h.observations = {1};
    CHECK(belief_distance(belief_from_history(m, h), init_belief(m, 1)) == 0.0);
}
