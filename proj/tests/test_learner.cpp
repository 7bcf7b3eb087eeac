#include <doctest.h>

#include <cmath>
#include <vector>

#include "instlab/errors.hpp"
#include "instlab/learner.hpp"
#include "models.hpp"

using namespace instlab;

namespace {

NetShape small_shape(std::size_t heads = 2) {
    NetShape s;
    s.num_observations = 4;
    s.num_actions = 3;
    s.hidden = 5;
    s.num_heads = heads;
    s.reward_scale = 0.5;
    return s;
}

EnsembleNet random_net(const NetShape& shape, std::uint64_t seed) {
    EnsembleNet net = EnsembleNet::initialized(shape, seed);
    Stream rng(seed + 1);
    for (double& p : net.params()) p += rng.uniform(-0.4, 0.4);
    return net;
}

// Straightforward matrices rebuilt from the documented parameter layout.
std::vector<double> naive_encode(const EnsembleNet& net, std::size_t o, double r, std::size_t a,
                                 const std::vector<double>& prev) {
    const auto& s = net.shape();
    const std::size_t d = s.hidden, O = s.num_observations, A1 = s.num_actions + 1;
    const auto& p = net.params();
    std::vector<std::vector<double>> Wo(d, std::vector<double>(O)), Wa(d, std::vector<double>(A1)),
        Wh(d, std::vector<double>(d));
    std::vector<double> wr(d), b(d);
    std::size_t k = 0;
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < O; ++j) Wo[i][j] = p[k++];
    for (std::size_t i = 0; i < d; ++i) wr[i] = p[k++];
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < A1; ++j) Wa[i][j] = p[k++];
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) Wh[i][j] = p[k++];
    for (std::size_t i = 0; i < d; ++i) b[i] = p[k++];
    std::vector<double> h(d);
    for (std::size_t i = 0; i < d; ++i) {
        double z = b[i] + Wo[i][o] + wr[i] * r * s.reward_scale + Wa[i][a];
        for (std::size_t j = 0; j < d; ++j) z += Wh[i][j] * prev[j];
        h[i] = std::tanh(z);
    }
    return h;
}

TrajectoryInput random_traj(const NetShape& s, std::size_t T, Stream& rng) {
    TrajectoryInput tr;
    tr.observations.push_back(rng.below(s.num_observations));
    for (std::size_t t = 0; t < T; ++t) {
        tr.actions.push_back(rng.below(s.num_actions));
        tr.rewards.push_back(rng.uniform(-1.0, 2.0));
        tr.observations.push_back(rng.below(s.num_observations));
    }
    return tr;
}

// Scalar loss sum_t c . logits_t + e_t v_t of head m, the linear functional
// whose gradient backward() receives as upstream.
double linear_loss(const EnsembleNet& net, const TrajectoryInput& tr, const HeadGradients& up) {
    const std::size_t d = net.shape().hidden, A = net.shape().num_actions;
    const auto h = forward_hidden(net, tr);
    double L = 0.0;
    std::vector<double> logits(A);
    for (std::size_t t = 0; t < tr.length(); ++t) {
        const std::span<const double> ht(h.data() + t * d, d);
        policy_logits(net, up.head, ht, logits);
        for (std::size_t a = 0; a < A; ++a) L += up.dlogits[t * A + a] * logits[a];
        L += up.dvalue[t] * value_estimate(net, up.head, ht);
    }
    return L;
}

}  // namespace

TEST_CASE("encode_step with zero parameters gives the zero hidden state") {
    const EnsembleNet net(small_shape());
    const std::vector<double> prev = {0.3, -0.2, 0.9, 0.0, 0.5};
    const auto h = encode_step(net, 2, 10.0, 1, prev);
    for (double x : h) CHECK(x == 0.0);
}

TEST_CASE("encode_step is a pure function") {
    const auto net = random_net(small_shape(), 3);
    const std::vector<double> prev = {0.1, 0.2, 0.3, 0.4, 0.5};
    CHECK(encode_step(net, 1, 1.0, 2, prev) == encode_step(net, 1, 1.0, 2, prev));
}

TEST_CASE("encode_step matches a naive re-implementation") {
    Stream rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        const auto net = random_net(small_shape(), 100 + trial);
        std::vector<double> prev(5);
        for (double& x : prev) x = rng.uniform(-1.0, 1.0);
        const std::size_t o = rng.below(4), a = rng.below(4);
        const double r = rng.uniform(-3.0, 3.0);
        const auto got = encode_step(net, o, r, a, prev);
        const auto want = naive_encode(net, o, r, a, prev);
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(std::abs(got[i] - want[i]) <= 1e-12);
            CHECK(std::abs(got[i]) < 1.0);
        }
    }
}

TEST_CASE("encode_step rejects bad indices") {
    const EnsembleNet net(small_shape());
    const std::vector<double> prev(5, 0.0);
    CHECK_THROWS_AS(encode_step(net, 4, 0.0, 0, prev), UsageError);
    CHECK_THROWS_AS(encode_step(net, 0, 0.0, 4, prev), UsageError);
    CHECK_THROWS_AS(encode_step(net, 0, 0.0, 0, std::vector<double>(3, 0.0)), UsageError);
    CHECK_NOTHROW(encode_step(net, 0, 0.0, net.no_action(), prev));
}

TEST_CASE("policy heads: zero head is uniform, softmax is shift invariant and normalized") {
    const EnsembleNet zero(small_shape());
    const std::vector<double> h = {0.5, -0.5, 0.2, 0.1, -0.9};
    for (double p : policy_probs(zero, 1, h)) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    auto net = random_net(small_shape(), 5);
    const auto before = policy_probs(net, 0, h);
    for (std::size_t a = 0; a < 3; ++a) net.params()[net.off_bpi(0) + a] += 7.25;
    const auto after = policy_probs(net, 0, h);
    for (std::size_t a = 0; a < 3; ++a) CHECK(after[a] == doctest::Approx(before[a]).epsilon(1e-12));

    Stream rng(8);
    for (int trial = 0; trial < 200; ++trial) {
        const auto n2 = random_net(small_shape(), 200 + trial);
        std::vector<double> x(5);
        for (double& v : x) v = rng.uniform(-1.0, 1.0);
        double sum = 0.0;
        for (double p : policy_probs(n2, trial % 2, x)) {
            CHECK(p > 0.0);
            sum += p;
        }
        CHECK(std::abs(sum - 1.0) <= 1e-12);
    }

    std::vector<double> big = {1000.0, 999.0, -1000.0};
    softmax(big);
    CHECK(std::isfinite(big[0]));
    CHECK(big[0] + big[1] + big[2] == doctest::Approx(1.0));
}

TEST_CASE("value heads: zero head, linearity and duplicate arithmetic") {
    const EnsembleNet zero(small_shape());
    const std::vector<double> h = {0.5, -0.5, 0.2, 0.1, -0.9};
    CHECK(value_estimate(zero, 0, h) == 0.0);

    const auto net = random_net(small_shape(), 9);
    const std::vector<double> z(5, 0.0);
    const double v0 = value_estimate(net, 1, z), v1 = value_estimate(net, 1, h);
    for (double alpha : {-2.0, 0.5, 3.0}) {
        std::vector<double> ah(h);
        for (double& x : ah) x *= alpha;
        CHECK(value_estimate(net, 1, ah) - v0 == doctest::Approx(alpha * (v1 - v0)).epsilon(1e-12));
    }

    double want = net.params()[net.off_bv(1)];
    for (std::size_t i = 0; i < 5; ++i) want += net.params()[net.off_wv(1) + i] * h[i];
    CHECK(std::abs(v1 - want) <= 1e-12);
}

TEST_CASE("consensus of one head is that head; of equal heads, any head") {
    const auto one = random_net(small_shape(1), 4);
    const std::vector<double> h = {0.5, -0.5, 0.2, 0.1, -0.9};
    CHECK(consensus_probs(one, h) == policy_probs(one, 0, h));

    auto net = random_net(small_shape(3), 4);
    const std::size_t len = net.head_size();
    for (std::size_t m = 1; m < 3; ++m)
        for (std::size_t i = 0; i < len; ++i) net.params()[net.head_offset(m) + i] = net.params()[net.head_offset(0) + i];
    const auto c = consensus_probs(net, h), p = policy_probs(net, 2, h);
    for (std::size_t a = 0; a < 3; ++a) CHECK(c[a] == doctest::Approx(p[a]).epsilon(1e-15));
}

TEST_CASE("consensus of two opposite deltas is uniform") {
    NetShape s = small_shape(2);
    s.num_actions = 2;
    EnsembleNet net(s);
    net.params()[net.off_bpi(0) + 0] = 800.0;
    net.params()[net.off_bpi(1) + 1] = 800.0;
    const auto c = consensus_probs(net, std::vector<double>(5, 0.0));
    CHECK(c[0] == doctest::Approx(0.5));
    CHECK(c[1] == doctest::Approx(0.5));
}

TEST_CASE("initialization: Glorot bounds, zero biases, seed determinism") {
    const auto s = small_shape(2);
    const auto a = EnsembleNet::initialized(s, 42), b = EnsembleNet::initialized(s, 42);
    CHECK(a.params() == b.params());
    CHECK(a.params() != EnsembleNet::initialized(s, 43).params());
    const double lim_h = std::sqrt(6.0 / 10.0);
    for (std::size_t i = 0; i < 25; ++i) CHECK(std::abs(a.params()[a.off_wh() + i]) <= lim_h);
    for (std::size_t i = 0; i < 5; ++i) CHECK(a.params()[a.off_b() + i] == 0.0);
    for (std::size_t m = 0; m < 2; ++m) {
        for (std::size_t i = 0; i < 3; ++i) CHECK(a.params()[a.off_bpi(m) + i] == 0.0);
        CHECK(a.params()[a.off_bv(m)] == 0.0);
    }
    CHECK(a.size() == 5 * 4 + 5 + 5 * 4 + 25 + 5 + 2 * (15 + 3 + 5 + 1));
}

TEST_CASE("net_shape_for scales rewards by the largest magnitude") {
    const auto m = testmodels::noisy();
    const auto s = net_shape_for(m, 8, 3);
    CHECK(s.num_observations == 3);
    CHECK(s.num_actions == 2);
    CHECK(s.num_heads == 3);
    CHECK(s.reward_scale == doctest::Approx(0.5));
}

TEST_CASE("backward: zero upstream gives zero gradients") {
    const auto net = random_net(small_shape(), 12);
    Stream rng(1);
    const auto tr = random_traj(net.shape(), 6, rng);
    const auto h = forward_hidden(net, tr);
    HeadGradients up{1, std::vector<double>(18, 0.0), std::vector<double>(6, 0.0)};
    std::vector<double> g(net.size(), 0.0);
    backward(net, tr, h, up, g);
    for (double x : g) CHECK(x == 0.0);
}

TEST_CASE("backward: single-step squared value error matches the closed form") {
    const auto net = random_net(small_shape(), 13);
    const std::size_t d = 5, O = 4, A1 = 4;
    TrajectoryInput tr{{2, 1}, {0}, {1.0}};
    const auto h = forward_hidden(net, tr);
    const std::span<const double> h0(h.data(), d);
    const double y = 0.7;
    const double v = value_estimate(net, 0, h0);
    HeadGradients up{0, std::vector<double>(3, 0.0), {v - y}};
    std::vector<double> g(net.size(), 0.0);
    backward(net, tr, h, up, g);

    const auto& p = net.params();
    CHECK(g[net.off_bv(0)] == doctest::Approx(v - y).epsilon(1e-12));
    for (std::size_t i = 0; i < d; ++i) {
        CHECK(g[net.off_wv(0) + i] == doctest::Approx((v - y) * h0[i]).epsilon(1e-12));
        const double dz = (v - y) * p[net.off_wv(0) + i] * (1.0 - h0[i] * h0[i]);
        CHECK(g[net.off_b() + i] == doctest::Approx(dz).epsilon(1e-12));
        CHECK(g[net.off_wo() + i * O + 2] == doctest::Approx(dz).epsilon(1e-12));
        CHECK(g[net.off_wa() + i * A1 + 3] == doctest::Approx(dz).epsilon(1e-12));
        CHECK(g[net.off_wr() + i] == 0.0);
        for (std::size_t j = 0; j < d; ++j) CHECK(g[net.off_wh() + i * d + j] == 0.0);
    }
    for (std::size_t i = 0; i < net.head_size(); ++i) CHECK(g[net.head_offset(1) + i] == 0.0);
}

TEST_CASE("backward matches central finite differences on random linear losses") {
    Stream rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        auto net = random_net(small_shape(3), 300 + trial);
        const std::size_t T = 8, A = 3;
        const auto tr = random_traj(net.shape(), T, rng);
        HeadGradients up{rng.below(3), std::vector<double>(T * A), std::vector<double>(T)};
        for (double& x : up.dlogits) x = rng.uniform(-1.0, 1.0);
        for (double& x : up.dvalue) x = rng.uniform(-1.0, 1.0);
        std::vector<double> g(net.size(), 0.0);
        backward(net, tr, forward_hidden(net, tr), up, g);
        double worst = 0.0;
        for (std::size_t i = 0; i < net.size(); ++i) {
            const double x = net.params()[i];
            net.params()[i] = x + 1e-5;
            const double lp = linear_loss(net, tr, up);
            net.params()[i] = x - 1e-5;
            const double lm = linear_loss(net, tr, up);
            net.params()[i] = x;
            const double num = (lp - lm) / 2e-5;
            worst = std::max(worst, std::abs(num - g[i]) / std::max({std::abs(num), std::abs(g[i]), 1e-3}));
        }
        CHECK(worst <= 1e-6);
    }
}

TEST_CASE("backward rejects shape mismatches") {
    const auto net = random_net(small_shape(), 14);
    TrajectoryInput tr{{0, 1}, {0}, {1.0}};
    const auto h = forward_hidden(net, tr);
    std::vector<double> g(net.size(), 0.0);
    CHECK_THROWS_AS(backward(net, tr, h, HeadGradients{0, {0.0, 0.0}, {0.0}}, g), UsageError);
    CHECK_THROWS_AS(backward(net, tr, h, HeadGradients{2, {0.0, 0.0, 0.0}, {0.0}}, g), UsageError);
    TrajectoryInput bad{{0}, {0}, {1.0}};
    CHECK_THROWS_AS(forward_hidden(net, bad), UsageError);
}

TEST_CASE("adam: zero gradients keep parameters, first step is -lr sign(g)") {
    std::vector<double> p = {1.0, -2.0, 0.5};
    const auto orig = p;
    AdamState st;
    adam_update(p, std::vector<double>(3, 0.0), st, 1e-2);
    CHECK(p == orig);

    std::vector<double> q = {1.0, -2.0, 0.5, 3.0};
    const auto q0 = q;
    AdamState s2;
    const std::vector<double> g = {0.3, -4.0, 1e-2, -7e-3};
    adam_update(q, g, s2, 1e-3);
    for (std::size_t i = 0; i < q.size(); ++i) {
        const double expect = -1e-3 * (g[i] > 0 ? 1.0 : -1.0);
        CHECK(std::abs((q[i] - q0[i]) - expect) <= 1e-3 * 1e-5);
    }
    CHECK(s2.step == 1);
}

TEST_CASE("adam: equal inputs give bitwise equal trajectories; non-finite gradients abort") {
    auto run = [] {
        std::vector<double> p = {0.1, 0.2, 0.3};
        AdamState st;
        Stream rng(5);
        for (int k = 0; k < 50; ++k) {
            std::vector<double> g(3);
            for (double& x : g) x = rng.uniform(-1.0, 1.0);
            adam_update(p, g, st, 1e-2);
        }
        return p;
    };
    CHECK(run() == run());

    std::vector<double> p = {0.0, 0.0};
    AdamState st;
    try {
        adam_update(p, std::vector<double>{0.0, std::nan("")}, st, 1e-3);
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("coordinate 1") != std::string::npos);
    }
}

TEST_CASE("network and optimizer state round-trip through JSON") {
    const auto net = random_net(small_shape(2), 31);
    const auto back = net_from_json(nlohmann::json::parse(net_to_json(net).dump()));
    CHECK(back.shape() == net.shape());
    CHECK(back.params() == net.params());

    std::vector<double> p = {0.1, 0.2};
    AdamState st;
    adam_update(p, std::vector<double>{0.3, -0.1}, st, 1e-3);
    const auto st2 = adam_from_json(nlohmann::json::parse(adam_to_json(st).dump()));
    CHECK(st2.m == st.m);
    CHECK(st2.v == st.v);
    CHECK(st2.step == st.step);
}

TEST_CASE("NetworkPolicy follows the recurrent encoder") {
    auto shared = std::make_shared<EnsembleNet>(random_net(small_shape(2), 41));
    const NetworkPolicy cons(shared, {0.0, 2.0});
    const NetworkPolicy head1(shared, {0.0, 2.0}, 1);
    auto st = cons.start(3);
    auto h = encode_step(*shared, 3, 0.0, shared->no_action(), std::vector<double>(5, 0.0));
    CHECK(st->action_probs() == consensus_probs(*shared, h));
    st->observe(2, 1, 1);
    h = encode_step(*shared, 1, 2.0, 2, h);
    CHECK(st->action_probs() == consensus_probs(*shared, h));
    auto s1 = head1.start(3);
    s1->observe(2, 1, 1);
    CHECK(s1->action_probs() == policy_probs(*shared, 1, h));
}
