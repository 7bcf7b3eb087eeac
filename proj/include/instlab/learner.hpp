#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "instlab/env.hpp"
#include "instlab/policy.hpp"

namespace instlab {

struct NetShape {
    std::size_t num_observations = 1;
    std::size_t num_actions = 2;
    std::size_t hidden = 32;
    std::size_t num_heads = 1;
    double reward_scale = 1.0;  // rewards are multiplied by this before encoding

    friend bool operator==(const NetShape&, const NetShape&) = default;
};

NetShape net_shape_for(const PomdpModel& model, std::size_t hidden, std::size_t num_heads);

/// Shared tanh recurrent encoder with M softmax policy heads and M value heads,
/// stored in one flat parameter vector:
///
///   W_o [d x |O|]  w_r [d]  W_a [d x (|A|+1)]  W_h [d x d]  b [d]
///   per head: W_pi [|A| x d]  b_pi [|A|]  w_v [d]  b_v
///
/// The encoder block (theta) ends at head_offset(0).
class EnsembleNet {
public:
    EnsembleNet() = default;
    explicit EnsembleNet(const NetShape& shape);
    /// Glorot-uniform weights, zero biases.
    static EnsembleNet initialized(const NetShape& shape, std::uint64_t seed);

    const NetShape& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return params_.size(); }
    std::vector<double>& params() noexcept { return params_; }
    const std::vector<double>& params() const noexcept { return params_; }

    std::size_t off_wo() const noexcept { return 0; }
    std::size_t off_wr() const noexcept { return shape_.hidden * shape_.num_observations; }
    std::size_t off_wa() const noexcept { return off_wr() + shape_.hidden; }
    std::size_t off_wh() const noexcept { return off_wa() + shape_.hidden * (shape_.num_actions + 1); }
    std::size_t off_b() const noexcept { return off_wh() + shape_.hidden * shape_.hidden; }
    std::size_t encoder_size() const noexcept { return off_b() + shape_.hidden; }
    std::size_t head_size() const noexcept {
        return shape_.num_actions * shape_.hidden + shape_.num_actions + shape_.hidden + 1;
    }
    std::size_t head_offset(std::size_t m) const noexcept { return encoder_size() + m * head_size(); }
    std::size_t off_wpi(std::size_t m) const noexcept { return head_offset(m); }
    std::size_t off_bpi(std::size_t m) const noexcept { return off_wpi(m) + shape_.num_actions * shape_.hidden; }
    std::size_t off_wv(std::size_t m) const noexcept { return off_bpi(m) + shape_.num_actions; }
    std::size_t off_bv(std::size_t m) const noexcept { return off_wv(m) + shape_.hidden; }

    std::size_t no_action() const noexcept { return shape_.num_actions; }

private:
    NetShape shape_;
    std::vector<double> params_;
};

/// b_t = tanh(W_o onehot(o) + w_r * scale * r + W_a onehot(a_prev) + W_h b_{t-1} + b).
/// Pass net.no_action() as `prev_action` at t = 0. Throws UsageError on bad indices.
void encode_step(const EnsembleNet& net, std::size_t observation, double reward, std::size_t prev_action,
                 std::span<const double> prev_hidden, std::span<double> hidden);
std::vector<double> encode_step(const EnsembleNet& net, std::size_t observation, double reward,
                                std::size_t prev_action, std::span<const double> prev_hidden);

void policy_logits(const EnsembleNet& net, std::size_t head, std::span<const double> hidden, std::span<double> out);
std::vector<double> policy_probs(const EnsembleNet& net, std::size_t head, std::span<const double> hidden);
double value_estimate(const EnsembleNet& net, std::size_t head, std::span<const double> hidden);
/// pi_bar = sum_m pi_m / M.
std::vector<double> consensus_probs(const EnsembleNet& net, std::span<const double> hidden);

/// In-place numerically stable softmax.
void softmax(std::span<double> x);

/// Observable inputs of one episode: o_0..o_T, a_0..a_{T-1}, r_1..r_T (reward values).
struct TrajectoryInput {
    std::vector<std::size_t> observations;
    std::vector<std::size_t> actions;
    std::vector<double> rewards;
    std::size_t length() const noexcept { return actions.size(); }
};

/// Hidden states b_0..b_T, flattened row-major (T+1) x d.
std::vector<double> forward_hidden(const EnsembleNet& net, const TrajectoryInput& traj);

/// Upstream gradients of one episode's loss with respect to the outputs of head m:
/// dlogits[t * |A| + a] and dvalue[t] for t in [0, T).
struct HeadGradients {
    std::size_t head = 0;
    std::vector<double> dlogits;
    std::vector<double> dvalue;
};

/// Reverse-mode gradients through the heads and the unrolled encoder,
/// accumulated into `grad` (same layout as the parameters).
void backward(const EnsembleNet& net, const TrajectoryInput& traj, std::span<const double> hiddens,
              const HeadGradients& upstream, std::span<double> grad);

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Bias-corrected Adam step. Throws NumericalError naming the first non-finite coordinate.
void adam_update(std::vector<double>& params, std::span<const double> grads, AdamState& state, double lr);

nlohmann::json net_to_json(const EnsembleNet& net);
EnsembleNet net_from_json(const nlohmann::json& j);
nlohmann::json adam_to_json(const AdamState& s);
AdamState adam_from_json(const nlohmann::json& j);

/// Policy view of a network: one head, or the consensus when head is nullopt.
class NetworkPolicy final : public Policy {
public:
    NetworkPolicy(std::shared_ptr<const EnsembleNet> net, std::vector<double> reward_support,
                  std::optional<std::size_t> head = std::nullopt);
    std::size_t num_actions() const override { return net_->shape().num_actions; }
    std::unique_ptr<PolicyState> start(std::size_t initial_observation) const override;
    const EnsembleNet& net() const noexcept { return *net_; }
    std::optional<std::size_t> head() const noexcept { return head_; }
    std::vector<double> probs_at(std::span<const double> hidden) const;
    double reward_value(std::size_t index) const { return rewards_.at(index); }

private:
    std::shared_ptr<const EnsembleNet> net_;
    std::vector<double> rewards_;
    std::optional<std::size_t> head_;
};

}  // namespace instlab
