#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "instlab/errors.hpp"
#include "instlab/instance.hpp"
#include "models.hpp"

using namespace instlab;

namespace {

std::vector<std::size_t> seq(std::initializer_list<std::size_t> a) { return a; }

}  // namespace

TEST_CASE("same seed gives identical roots and deep trees") {
    const auto m = build_gated_corridor({});
    const Instance a(m, 1234), b(m, 1234);
    CHECK(a.root() == b.root());
    CHECK(a.modality() == b.modality());
    Stream s(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::size_t> actions;
        NodeCursor cur = a.root_cursor();
        while (actions.size() < m.horizon() && !cur.record.terminal) {
            actions.push_back(s.below(m.num_actions()));
            cur = a.child(cur, actions.back());
        }
        CHECK(a.query(actions) == b.query(actions));
    }
}

TEST_CASE("clearing the memo reproduces identical records") {
    const auto m = build_gated_corridor({});
    const Instance inst(m, 99);
    const auto acts = seq({2, 2, 0, 1, 2});
    std::vector<NodeRecord> first;
    try {
        first = inst.query(acts);
    } catch (const UsageError&) {
        return;
    }
    CHECK(inst.memo_size() > 0);
    inst.clear_memo();
    CHECK(inst.memo_size() == 0);
    CHECK(inst.query(acts) == first);
}

TEST_CASE("bandit roots are state 0, observation 0") {
    const auto m = build_bandit(0.9, 0.1, 4, 10, 0.9);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto inst = spawn_instance(m, seed);
        CHECK(inst.root().state == 0);
        CHECK(inst.root().observation == 0);
    }
}

TEST_CASE("corridor root states over fresh seeds match mu") {
    const auto m = build_gated_corridor({});
    const std::size_t n = 100'000;
    std::vector<double> freq(m.num_states(), 0.0);
    for (std::size_t j = 0; j < n; ++j) freq[Instance(m, derive_seed(5, "t", j)).root().state] += 1.0 / n;
    double l1 = 0.0;
    for (std::size_t s = 0; s < freq.size(); ++s) l1 += std::abs(freq[s] - m.initial_dist()[s]);
    CHECK(l1 <= 0.01);
}

TEST_CASE("query of the empty sequence is the root") {
    const auto m = build_gated_corridor({});
    const Instance inst(m, 7);
    const auto path = inst.query({});
    REQUIRE(path.size() == 1);
    CHECK(path[0] == inst.root());
}

TEST_CASE("queries sharing a prefix agree along it") {
    const auto m = build_bandit(0.9, 0.1, 4, 10, 0.9);
    const Instance inst(m, 42);
    const auto p1 = inst.query(seq({1, 2, 3, 0}));
    const auto p2 = inst.query(seq({1, 2, 0, 0, 1}));
    for (std::size_t t = 0; t < 3; ++t) CHECK(p1[t] == p2[t]);
    inst.clear_memo();
    CHECK(inst.query(seq({1, 2, 3, 0})) == p1);
}

TEST_CASE("query rejects sequences beyond the horizon or past terminals") {
    const auto m = build_bandit(0.9, 0.1, 2, 3, 0.9);
    const Instance inst(m, 1);
    CHECK_THROWS_AS(inst.query(seq({0, 0, 0, 0})), UsageError);
    const auto c = build_gated_corridor({});
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const Instance ci(c, seed);
        const auto path = ci.query(seq({corridor::kAdvance}));
        if (!path.back().terminal) continue;
        CHECK_THROWS_AS(ci.query(seq({corridor::kAdvance, corridor::kWait})), UsageError);
        return;
    }
    FAIL("no instance died on the first advance");
}

TEST_CASE("bandit instances pay on arm 0 with frequency p_hi") {
    const auto m = build_bandit(0.9, 0.1, 4, 10, 0.9);
    const std::size_t n = 100'000;
    double hits = 0.0;
    for (std::size_t j = 0; j < n; ++j) hits += Instance(m, derive_seed(8, "b", j)).query(seq({0}))[1].reward;
    CHECK(std::abs(hits / n - 0.9) <= 0.01);
}

TEST_CASE("instance sets have distinct seeds and uniform sampling") {
    const auto m = build_bandit(0.9, 0.1, 4, 10, 0.9);
    const InstanceSet set(m, 17, 32);
    std::set<std::uint64_t> seeds;
    for (const auto& inst : set.instances()) seeds.insert(inst.seed());
    CHECK(seeds.size() == 32);
    const std::uint64_t dup[] = {1, 2, 1};
    CHECK_THROWS_AS(InstanceSet::from_seeds(m, dup), std::invalid_argument);
}

namespace {

FullHistory history_of(const Instance& inst, const std::vector<std::size_t>& actions) {
    FullHistory h;
    const auto path = inst.query(actions);
    h.states.push_back(path[0].state);
    h.observable.observations.push_back(path[0].observation);
    for (std::size_t t = 0; t < actions.size(); ++t) {
        h.observable.actions.push_back(actions[t]);
        h.observable.rewards.push_back(path[t + 1].reward_index);
        h.observable.observations.push_back(path[t + 1].observation);
        h.states.push_back(path[t + 1].state);
    }
    return h;
}

}  // namespace

TEST_CASE("singleton set transition is a delta at the next record") {
    const auto m = build_bandit(0.9, 0.1, 4, 10, 0.9);
    const std::uint64_t seeds[] = {555};
    const auto set = InstanceSet::from_seeds(m, seeds);
    const auto h = history_of(set[0], seq({0, 1}));
    const auto law = instance_set_transition(set, h, 2);
    REQUIRE(law.size() == 1);
    CHECK(law[0].prob == 1.0);
    CHECK(law[0].reward_index == set[0].query(seq({0, 1, 2}))[3].reward_index);
}

TEST_CASE("two compatible instances with differing outcomes mix 0.5/0.5") {
    const auto m = build_bandit(0.9, 0.1, 4, 10, 0.9);
    std::vector<std::uint64_t> chosen;
    std::size_t first_r = 0;
    for (std::uint64_t seed = 0; chosen.size() < 2; ++seed) {
        const auto r = Instance(m, seed).query(seq({0}))[1].reward_index;
        if (chosen.empty()) {
            chosen.push_back(seed);
            first_r = r;
        } else if (r != first_r) {
            chosen.push_back(seed);
        }
    }
    const auto set = InstanceSet::from_seeds(m, chosen);
    FullHistory empty;
    empty.states = {0};
    empty.observable.observations = {0};
    const auto law = instance_set_transition(set, empty, 0);
    REQUIRE(law.size() == 2);
    CHECK(law[0].prob == 0.5);
    CHECK(law[1].prob == 0.5);
}

TEST_CASE("large bandit set recovers T on the empty history") {
    const auto m = build_bandit(0.9, 0.1, 4, 10, 0.9);
    const InstanceSet set(m, 3, 10'000);
    FullHistory empty;
    empty.states = {0};
    empty.observable.observations = {0};
    double p1 = 0.0;
    for (const auto& o : instance_set_transition(set, empty, 0))
        if (o.reward_index == 1) p1 = o.prob;
    CHECK(std::abs(p1 - 0.9) <= 0.01);
}

TEST_CASE("incompatible history raises no-compatible-instance") {
    const auto m = build_bandit(0.9, 0.1, 4, 10, 0.9);
    const InstanceSet set(m, 3, 4);
    FullHistory h;
    h.states = {0};
    h.observable.observations = {1};
    CHECK_THROWS_AS(instance_set_transition(set, h, 0), NoCompatibleInstanceError);
}

TEST_CASE("instance-set transition equals brute-force averaging on small sets") {
    const auto m = testmodels::noisy(4);
    Stream s(12);
    for (int trial = 0; trial < 40; ++trial) {
        const InstanceSet set(m, 1000 + trial, 1 + s.below(16));
        const Instance& ref = set[s.below(set.size())];
        std::vector<std::size_t> actions;
        NodeCursor cur = ref.root_cursor();
        const std::size_t t = s.below(4);
        while (actions.size() < t && !cur.record.terminal) {
            actions.push_back(s.below(2));
            cur = ref.child(cur, actions.back());
        }
        if (cur.record.terminal || actions.size() >= m.horizon()) continue;
        const auto h = history_of(ref, actions);
        const std::size_t a = s.below(2);
        std::map<std::pair<std::size_t, std::size_t>, double> brute;
        double n = 0.0;
        for (const auto& inst : set.instances()) {
            if (!compatible(inst, h)) continue;
            auto path = actions;
            path.push_back(a);
            const auto rec = inst.query(path).back();
            brute[{rec.reward_index, rec.state}] += 1.0;
            n += 1.0;
        }
        const auto law = instance_set_transition(set, h, a);
        REQUIRE(law.size() == brute.size());
        for (const auto& o : law) CHECK(o.prob == doctest::Approx(brute[{o.reward_index, o.next_state}] / n));
    }
}

TEST_CASE("posterior on the empty history is uniform") {
    const auto m = build_bandit(0.9, 0.1, 4, 10, 0.9);
    const InstanceSet set(m, 9, 5);
    ObservableHistory h;
    h.observations = {0};
    const auto post = instance_posterior(set, h);
    CHECK_FALSE(post.empty);
    for (double w : post.weights) CHECK(w == doctest::Approx(0.2));
}

TEST_CASE("posterior is empty for an observation no instance emits") {
    const auto m = build_bandit(0.9, 0.1, 4, 10, 0.9);
    const InstanceSet set(m, 9, 5);
    ObservableHistory h;
    h.observations = {3};
    const auto post = instance_posterior(set, h);
    CHECK(post.empty);
    for (double w : post.weights) CHECK(w == 0.0);
}

TEST_CASE("corridor set with distinct first steps has a point-mass posterior after one step") {
    const auto m = build_gated_corridor({});
    using Sig = std::tuple<std::size_t, std::size_t, std::size_t>;
    std::set<Sig> seen;
    std::vector<std::uint64_t> seeds;
    for (std::uint64_t seed = 0; seeds.size() < 8 && seed < 10'000; ++seed) {
        const Instance inst(m, seed);
        const auto path = inst.query(seq({corridor::kJump}));
        const Sig sig{path[0].observation, path[1].reward_index, path[1].observation};
        if (seen.insert(sig).second) seeds.push_back(seed);
    }
    REQUIRE(seeds.size() == 8);
    const auto set = InstanceSet::from_seeds(m, seeds);
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto h = history_of(set[i], seq({corridor::kJump})).observable;
        const auto post = instance_posterior(set, h);
        for (std::size_t j = 0; j < set.size(); ++j) CHECK(post.weights[j] == (i == j ? 1.0 : 0.0));
    }
}

TEST_CASE("expected transition: deterministic model has zero distance") {
    const auto m = testmodels::ring();
    const auto r = verify_expected_transition(m, {}, seq({0, 1, 0}), 50, 1);
    CHECK(r.value == 0.0);
    CHECK(r.pass);
}

TEST_CASE("expected transition: bandit one step at n = 1e4") {
    const auto m = build_bandit(0.9, 0.1, 4, 10, 0.9);
    const auto r = verify_expected_transition(m, {}, seq({0}), 10'000, 2);
    CHECK(r.value <= 0.03);
    CHECK(r.pass);
    const auto law = exact_path_law(m, {}, seq({0}));
    REQUIRE(law.size() == 2);
    CHECK(law[0].second == doctest::Approx(0.1));
    CHECK(law[1].second == doctest::Approx(0.9));
}

TEST_CASE("expected transition: corridor three steps at n = 1e5") {
    const auto m = build_gated_corridor({});
    using namespace corridor;
    const auto r = verify_expected_transition(m, {}, seq({kAdvance, kJump, kAdvance}), 100'000, 3);
    CHECK(r.pass);
}

TEST_CASE("expected transition conditioned on a history template") {
    const auto m = build_gated_corridor({});
    using namespace corridor;
    FullHistory tmpl;
    for (std::uint64_t seed = 0;; ++seed) {
        const Instance inst(m, seed);
        if (!inst.query(seq({kWait})).back().terminal) {
            tmpl = history_of(inst, seq({kWait}));
            break;
        }
    }
    const auto r = verify_expected_transition(m, tmpl, seq({kAdvance, kAdvance}), 5'000, 4);
    CHECK(r.pass);
    double total = 0.0;
    for (const auto& [path, p] : exact_path_law(m, tmpl, seq({kAdvance, kAdvance}))) total += p;
    CHECK(total == doctest::Approx(1.0));
}
