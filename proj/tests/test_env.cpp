#include <doctest.h>

#include <cmath>
#include <map>

#include "instlab/env.hpp"
#include "instlab/errors.hpp"
#include "instlab/oracle.hpp"
#include "models.hpp"

using namespace instlab;

TEST_CASE("degenerate initial distribution always starts in state 0") {
    const auto m = testmodels::ring();
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        Stream s(seed);
        CHECK(sample_initial(m, s).state == 0);
    }
}

TEST_CASE("bandit initial draw is state 0, observation 0") {
    const auto m = build_bandit(0.9, 0.1, 4, 10, 0.9);
    CHECK(m.num_states() == 1);
    CHECK(m.num_actions() == 4);
    CHECK(m.num_observations() == 1);
    Stream s(3);
    for (int i = 0; i < 100; ++i) {
        const auto d = sample_initial(m, s);
        CHECK(d.state == 0);
        CHECK(d.observation == 0);
    }
}

TEST_CASE("corridor initial states match mu") {
    const auto m = build_gated_corridor({});
    const std::size_t n = 100'000;
    std::vector<double> freq(m.num_states(), 0.0);
    Stream s(11);
    for (std::size_t i = 0; i < n; ++i) freq[sample_initial(m, s).state] += 1.0 / n;
    double l1 = 0.0;
    for (std::size_t i = 0; i < freq.size(); ++i) l1 += std::abs(freq[i] - m.initial_dist()[i]);
    CHECK(l1 <= 0.01);
}

TEST_CASE("step on a deterministic row returns that outcome") {
    const auto m = testmodels::ring();
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Stream s(seed);
        const auto out = step(m, 2, 0, 0, s);
        CHECK(out.next_state == 0);
        CHECK(out.reward == 1.0);
        CHECK(out.observation == 0);
        CHECK_FALSE(out.terminal);
    }
}

TEST_CASE("bandit arm 0 pays with frequency p_hi") {
    const auto m = build_bandit(0.9, 0.1, 4, 10, 0.9);
    Stream s(5);
    double hits = 0.0;
    const int n = 100'000;
    for (int i = 0; i < n; ++i) hits += step(m, 0, 0, 0, s).reward;
    CHECK(std::abs(hits / n - 0.9) <= 0.01);
}

TEST_CASE("empirical (r, s') joint of a row matches the table") {
    const auto m = testmodels::noisy();
    const auto row = m.transition(0, 0);
    std::map<std::pair<std::size_t, std::size_t>, double> freq;
    Stream s(9);
    const int n = 100'000;
    for (int i = 0; i < n; ++i) {
        const auto out = step(m, 0, 1, 0, s);
        freq[{out.reward_index, out.next_state}] += 1.0 / n;
    }
    double l1 = 0.0;
    for (const auto& e : row) l1 += std::abs(freq[{e.reward_index, e.next_state}] - e.prob);
    CHECK(l1 <= 0.01);
    const double tol = 3.0 * std::sqrt(static_cast<double>(row.size()) / n);
    CHECK(l1 <= tol);
}

TEST_CASE("corridor rows sample within the stated L1 tolerance") {
    const auto m = build_gated_corridor({});
    using namespace corridor;
    const std::size_t s0 = state_of(2, false);
    const auto row = m.transition(s0, kJump);
    std::map<std::pair<std::size_t, std::size_t>, double> freq;
    Stream s(21);
    const int n = 100'000;
    for (int i = 0; i < n; ++i) {
        const auto out = step(m, s0, 0, kJump, s);
        freq[{out.reward_index, out.next_state}] += 1.0 / n;
    }
    double l1 = 0.0, listed = 0.0;
    for (const auto& e : row) {
        l1 += std::abs(freq[{e.reward_index, e.next_state}] - e.prob);
        listed += freq[{e.reward_index, e.next_state}];
    }
    l1 += 1.0 - listed;
    CHECK(l1 <= 3.0 * std::sqrt(static_cast<double>(row.size()) / n));
}

TEST_CASE("stepping a terminal state is a usage error") {
    const auto m = testmodels::noisy();
    Stream s(1);
    CHECK_THROWS_AS(step(m, 2, 0, 0, s), UsageError);
    CHECK_THROWS_AS(step(m, 0, 0, 5, s), UsageError);
}

TEST_CASE("sampling is a pure function of the stream state") {
    const auto m = build_gated_corridor({});
    Stream a(77), b(77);
    for (int i = 0; i < 100; ++i) {
        const auto x = sample_initial(m, a);
        const auto y = sample_initial(m, b);
        CHECK(x.state == y.state);
        CHECK(x.observation == y.observation);
        CHECK(x.modality == y.modality);
    }
}

TEST_CASE("build_bandit rejects p_hi <= p_lo and too few arms") {
    CHECK_THROWS_AS(build_bandit(0.5, 0.5, 2, 1, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(build_bandit(0.9, 0.1, 1, 1, 1.0), std::invalid_argument);
}

TEST_CASE("deterministic bandit: always arm 0 returns the horizon") {
    const auto m = build_bandit(1.0, 0.0, 2, 3, 1.0);
    const auto v = evaluate_policy_on_model(m, ConstantPolicy::delta(2, 0), {});
    CHECK(v.value == 3.0);
}

TEST_CASE("model construction validates probability rows") {
    PomdpTables t = testmodels::ring().tables();
    t.transition[0][0].prob = 0.9;
    CHECK_THROWS_AS(PomdpModel{t}, std::invalid_argument);
    t = testmodels::ring().tables();
    t.initial_dist = {0.5, 0.5};
    CHECK_THROWS_AS(PomdpModel{t}, std::invalid_argument);
    t = testmodels::ring().tables();
    t.discount = 1.5;
    CHECK_THROWS_AS(PomdpModel{t}, std::invalid_argument);
    t = testmodels::ring().tables();
    t.reward_support = {1.0, 0.0};
    CHECK_THROWS_AS(PomdpModel{t}, std::invalid_argument);
}

namespace {

double run_corridor(const PomdpModel& m, std::size_t length, bool jump_on_hazard, std::uint64_t seed,
                    std::size_t* steps) {
    using namespace corridor;
    Stream s(seed);
    auto init = sample_initial(m, s);
    std::size_t state = init.state;
    double ret = 0.0;
    *steps = 0;
    for (std::size_t t = 0; t < m.horizon() && !m.is_terminal(state); ++t) {
        const bool hazard = state % 2 == 1 && state < dead_state(length);
        const std::size_t a = jump_on_hazard && hazard ? kJump : kAdvance;
        const auto out = step(m, state, init.modality, a, s);
        ret += out.reward;
        state = out.next_state;
        ++*steps;
    }
    return ret;
}

}  // namespace

TEST_CASE("corridor without hazards: always advance earns 10 in `length` steps") {
    CorridorParams p;
    p.hazard_prob = 0.0;
    p.discount = 1.0;
    const auto m = build_gated_corridor(p);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::size_t steps = 0;
        CHECK(run_corridor(m, p.length, false, seed, &steps) == 10.0);
        CHECK(steps == p.length);
    }
    const auto opt = solve_pomdp_optimal(m, m.horizon());
    CHECK(opt.report.value == doctest::Approx(10.0));
}

TEST_CASE("fully hazarded corridor: jumping hazards earns 10") {
    CorridorParams p;
    p.hazard_prob = 1.0;
    p.discount = 1.0;
    const auto m = build_gated_corridor(p);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::size_t steps = 0;
        CHECK(run_corridor(m, p.length, true, seed, &steps) == 10.0);
        CHECK(run_corridor(m, p.length, false, seed, &steps) == 0.0);
    }
}

TEST_CASE("corridor parameter checks") {
    CorridorParams p;
    p.length = 2;
    CHECK_THROWS_AS(build_gated_corridor(p), std::invalid_argument);
    p = {};
    p.num_modalities = 1;
    CHECK_THROWS_AS(build_gated_corridor(p), std::invalid_argument);
    p = {};
    p.hazard_prob = 1.5;
    CHECK_THROWS_AS(build_gated_corridor(p), std::invalid_argument);
}

TEST_CASE("corridor modality only changes observations") {
    const auto m = build_gated_corridor({});
    for (std::size_t s = 0; s < m.num_states(); ++s)
        for (std::size_t a = 0; a < m.num_actions(); ++a)
            for (std::size_t k = 1; k < m.num_modalities(); ++k) {
                const auto o0 = m.observation(s, a, 0);
                const auto ok = m.observation(s, a, k);
                CHECK(std::equal(o0.begin(), o0.end(), ok.begin()) == (m.is_terminal(s)));
            }
}

TEST_CASE("model JSON dump carries every table") {
    const auto j = nlohmann::json::parse(model_to_json(build_bandit(0.9, 0.1, 3, 4, 0.9)));
    CHECK(j["num_actions"] == 3);
    CHECK(j["reward_support"].size() == 2);
    CHECK(j["transition"].size() == 3);
}
