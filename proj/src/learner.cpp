#include "instlab/learner.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "instlab/errors.hpp"
#include "instlab/random.hpp"

namespace instlab {

NetShape net_shape_for(const PomdpModel& model, std::size_t hidden, std::size_t num_heads) {
    NetShape s;
    s.num_observations = model.num_observations();
    s.num_actions = model.num_actions();
    s.hidden = hidden;
    s.num_heads = num_heads;
    const double rmax = model.max_abs_reward();
    s.reward_scale = rmax > 0.0 ? 1.0 / rmax : 1.0;
    return s;
}

EnsembleNet::EnsembleNet(const NetShape& shape) : shape_(shape) {
    if (shape.hidden == 0 || shape.num_actions == 0 || shape.num_observations == 0 || shape.num_heads == 0)
        throw std::invalid_argument("network shape has a zero dimension");
    params_.assign(head_offset(shape.num_heads), 0.0);
}

EnsembleNet EnsembleNet::initialized(const NetShape& shape, std::uint64_t seed) {
    EnsembleNet net(shape);
    Stream rng(derive_seed(seed, "net-init"));
    auto& p = net.params_;
    const std::size_t d = shape.hidden, O = shape.num_observations, A = shape.num_actions;
    auto fill = [&](std::size_t off, std::size_t count, std::size_t fan_in, std::size_t fan_out) {
        const double lim = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (std::size_t i = 0; i < count; ++i) p[off + i] = rng.uniform(-lim, lim);
    };
    fill(net.off_wo(), d * O, O, d);
    fill(net.off_wr(), d, 1, d);
    fill(net.off_wa(), d * (A + 1), A + 1, d);
    fill(net.off_wh(), d * d, d, d);
    for (std::size_t m = 0; m < shape.num_heads; ++m) {
        fill(net.off_wpi(m), A * d, d, A);
        fill(net.off_wv(m), d, d, 1);
    }
    return net;
}

void encode_step(const EnsembleNet& net, std::size_t observation, double reward, std::size_t prev_action,
                 std::span<const double> prev_hidden, std::span<double> hidden) {
    const auto& s = net.shape();
    const std::size_t d = s.hidden, O = s.num_observations, A1 = s.num_actions + 1;
    if (observation >= O) throw UsageError("encode_step: observation out of range");
    if (prev_action >= A1) throw UsageError("encode_step: previous action out of range");
    if (prev_hidden.size() != d || hidden.size() != d) throw UsageError("encode_step: hidden width mismatch");
    const double* p = net.params().data();
    const double r = reward * s.reward_scale;
    for (std::size_t i = 0; i < d; ++i) {
        double z = p[net.off_wo() + i * O + observation] + p[net.off_wr() + i] * r +
                   p[net.off_wa() + i * A1 + prev_action] + p[net.off_b() + i];
        const double* wh = p + net.off_wh() + i * d;
        for (std::size_t j = 0; j < d; ++j) z += wh[j] * prev_hidden[j];
        hidden[i] = std::tanh(z);
    }
}

std::vector<double> encode_step(const EnsembleNet& net, std::size_t observation, double reward,
                                std::size_t prev_action, std::span<const double> prev_hidden) {
    std::vector<double> h(net.shape().hidden);
    encode_step(net, observation, reward, prev_action, prev_hidden, h);
    return h;
}

void softmax(std::span<double> x) {
    const double mx = *std::max_element(x.begin(), x.end());
    double z = 0.0;
    for (double& v : x) {
        v = std::exp(v - mx);
        z += v;
    }
    for (double& v : x) v /= z;
}

void policy_logits(const EnsembleNet& net, std::size_t head, std::span<const double> hidden, std::span<double> out) {
    const std::size_t d = net.shape().hidden, A = net.shape().num_actions;
    if (head >= net.shape().num_heads) throw UsageError("policy head out of range");
    const double* w = net.params().data() + net.off_wpi(head);
    const double* b = net.params().data() + net.off_bpi(head);
    for (std::size_t a = 0; a < A; ++a) {
        double z = b[a];
        for (std::size_t i = 0; i < d; ++i) z += w[a * d + i] * hidden[i];
        out[a] = z;
    }
}

std::vector<double> policy_probs(const EnsembleNet& net, std::size_t head, std::span<const double> hidden) {
    std::vector<double> p(net.shape().num_actions);
    policy_logits(net, head, hidden, p);
    softmax(p);
    return p;
}

double value_estimate(const EnsembleNet& net, std::size_t head, std::span<const double> hidden) {
    if (head >= net.shape().num_heads) throw UsageError("value head out of range");
    const double* w = net.params().data() + net.off_wv(head);
    double v = net.params()[net.off_bv(head)];
    for (std::size_t i = 0; i < net.shape().hidden; ++i) v += w[i] * hidden[i];
    return v;
}

std::vector<double> consensus_probs(const EnsembleNet& net, std::span<const double> hidden) {
    const std::size_t M = net.shape().num_heads;
    std::vector<double> acc(net.shape().num_actions, 0.0);
    for (std::size_t m = 0; m < M; ++m) {
        const auto p = policy_probs(net, m, hidden);
        for (std::size_t a = 0; a < acc.size(); ++a) acc[a] += p[a];
    }
    for (double& x : acc) x /= static_cast<double>(M);
    return acc;
}

std::vector<double> forward_hidden(const EnsembleNet& net, const TrajectoryInput& traj) {
    const std::size_t d = net.shape().hidden, T = traj.length();
    if (traj.observations.size() != T + 1 || traj.rewards.size() != T)
        throw UsageError("forward_hidden: malformed trajectory");
    std::vector<double> h((T + 1) * d, 0.0);
    const std::vector<double> zero(d, 0.0);
    for (std::size_t t = 0; t <= T; ++t) {
        const std::span<const double> prev = t == 0 ? std::span<const double>(zero)
                                                    : std::span<const double>(h.data() + (t - 1) * d, d);
        encode_step(net, traj.observations[t], t == 0 ? 0.0 : traj.rewards[t - 1],
                    t == 0 ? net.no_action() : traj.actions[t - 1], prev, std::span<double>(h.data() + t * d, d));
    }
    return h;
}

void backward(const EnsembleNet& net, const TrajectoryInput& traj, std::span<const double> hiddens,
              const HeadGradients& up, std::span<double> grad) {
    const auto& s = net.shape();
    const std::size_t d = s.hidden, A = s.num_actions, O = s.num_observations, A1 = A + 1, T = traj.length();
    const std::size_t m = up.head;
    if (grad.size() != net.size() || hiddens.size() != (T + 1) * d || up.dlogits.size() != T * A ||
        up.dvalue.size() != T || m >= s.num_heads)
        throw UsageError("backward: shape mismatch");
    const double* p = net.params().data();
    const double* wpi = p + net.off_wpi(m);
    const double* wv = p + net.off_wv(m);
    const double* wh = p + net.off_wh();

    std::vector<double> dh(d, 0.0), dz(d), carry(d, 0.0);
    for (std::size_t t = T + 1; t-- > 0;) {
        const double* h = hiddens.data() + t * d;
        std::copy(carry.begin(), carry.end(), dh.begin());
        if (t < T) {
            const double* dl = up.dlogits.data() + t * A;
            const double dv = up.dvalue[t];
            for (std::size_t a = 0; a < A; ++a) {
                if (dl[a] == 0.0) continue;
                grad[net.off_bpi(m) + a] += dl[a];
                double* gw = grad.data() + net.off_wpi(m) + a * d;
                for (std::size_t i = 0; i < d; ++i) {
                    gw[i] += dl[a] * h[i];
                    dh[i] += dl[a] * wpi[a * d + i];
                }
            }
            if (dv != 0.0) {
                grad[net.off_bv(m)] += dv;
                for (std::size_t i = 0; i < d; ++i) {
                    grad[net.off_wv(m) + i] += dv * h[i];
                    dh[i] += dv * wv[i];
                }
            }
        }
        bool any = false;
        for (std::size_t i = 0; i < d; ++i) {
            dz[i] = dh[i] * (1.0 - h[i] * h[i]);
            any = any || dz[i] != 0.0;
        }
        std::fill(carry.begin(), carry.end(), 0.0);
        if (!any) continue;
        const std::size_t o = traj.observations[t];
        const std::size_t a_prev = t == 0 ? A : traj.actions[t - 1];
        const double r = t == 0 ? 0.0 : traj.rewards[t - 1] * s.reward_scale;
        const double* hp = t == 0 ? nullptr : hiddens.data() + (t - 1) * d;
        for (std::size_t i = 0; i < d; ++i) {
            const double g = dz[i];
            if (g == 0.0) continue;
            grad[net.off_wo() + i * O + o] += g;
            grad[net.off_wr() + i] += g * r;
            grad[net.off_wa() + i * A1 + a_prev] += g;
            grad[net.off_b() + i] += g;
            if (hp) {
                double* gw = grad.data() + net.off_wh() + i * d;
                const double* w = wh + i * d;
                for (std::size_t j = 0; j < d; ++j) {
                    gw[j] += g * hp[j];
                    carry[j] += g * w[j];
                }
            }
        }
    }
}

void adam_update(std::vector<double>& params, std::span<const double> grads, AdamState& st, double lr) {
    if (grads.size() != params.size()) throw UsageError("adam_update: gradient size mismatch");
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (!std::isfinite(grads[i])) {
            std::ostringstream os;
            os << "adam_update: non-finite gradient " << grads[i] << " at coordinate " << i << " (step "
               << st.step + 1 << ")";
            throw NumericalError(os.str());
        }
    }
    if (st.m.size() != params.size()) {
        st.m.assign(params.size(), 0.0);
        st.v.assign(params.size(), 0.0);
    }
    ++st.step;
    const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grads[i];
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grads[i] * grads[i];
        const double mhat = st.m[i] / c1;
        const double vhat = st.v[i] / c2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + st.eps);
    }
}

nlohmann::json net_to_json(const EnsembleNet& net) {
    const auto& s = net.shape();
    return {{"num_observations", s.num_observations},
            {"num_actions", s.num_actions},
            {"hidden", s.hidden},
            {"num_heads", s.num_heads},
            {"reward_scale", s.reward_scale},
            {"params", net.params()}};
}

EnsembleNet net_from_json(const nlohmann::json& j) {
    NetShape s;
    s.num_observations = j.at("num_observations").get<std::size_t>();
    s.num_actions = j.at("num_actions").get<std::size_t>();
    s.hidden = j.at("hidden").get<std::size_t>();
    s.num_heads = j.at("num_heads").get<std::size_t>();
    s.reward_scale = j.at("reward_scale").get<double>();
    EnsembleNet net(s);
    auto p = j.at("params").get<std::vector<double>>();
    if (p.size() != net.size()) throw std::invalid_argument("checkpoint parameter count does not match its shape");
    net.params() = std::move(p);
    return net;
}

nlohmann::json adam_to_json(const AdamState& s) {
    return {{"m", s.m}, {"v", s.v}, {"step", s.step}, {"beta1", s.beta1}, {"beta2", s.beta2}, {"eps", s.eps}};
}

AdamState adam_from_json(const nlohmann::json& j) {
    AdamState s;
    s.m = j.at("m").get<std::vector<double>>();
    s.v = j.at("v").get<std::vector<double>>();
    s.step = j.at("step").get<std::uint64_t>();
    s.beta1 = j.at("beta1").get<double>();
    s.beta2 = j.at("beta2").get<double>();
    s.eps = j.at("eps").get<double>();
    return s;
}

namespace {

class NetworkPolicyState final : public PolicyState {
public:
    NetworkPolicyState(const NetworkPolicy* policy, std::vector<double> hidden)
        : policy_(policy), hidden_(std::move(hidden)) {}
    std::unique_ptr<PolicyState> clone() const override { return std::make_unique<NetworkPolicyState>(*this); }
    void observe(std::size_t a, std::size_t o, std::size_t r) override {
        hidden_ = encode_step(policy_->net(), o, policy_->reward_value(r), a, hidden_);
    }
    std::vector<double> action_probs() const override { return policy_->probs_at(hidden_); }

private:
    const NetworkPolicy* policy_;
    std::vector<double> hidden_;
};

}  // namespace

NetworkPolicy::NetworkPolicy(std::shared_ptr<const EnsembleNet> net, std::vector<double> reward_support,
                             std::optional<std::size_t> head)
    : net_(std::move(net)), rewards_(std::move(reward_support)), head_(head) {
    if (head_ && *head_ >= net_->shape().num_heads) throw UsageError("network policy: head out of range");
}

std::unique_ptr<PolicyState> NetworkPolicy::start(std::size_t o0) const {
    const std::vector<double> zero(net_->shape().hidden, 0.0);
    return std::make_unique<NetworkPolicyState>(this, encode_step(*net_, o0, 0.0, net_->no_action(), zero));
}

std::vector<double> NetworkPolicy::probs_at(std::span<const double> hidden) const {
    return head_ ? policy_probs(*net_, *head_, hidden) : consensus_probs(*net_, hidden);
}

}  // namespace instlab
