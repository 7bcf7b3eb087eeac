#include "instlab/policy.hpp"

#include <cmath>
#include <stdexcept>

#include "instlab/random.hpp"

namespace instlab {
namespace {

class ConstantState final : public PolicyState {
public:
    explicit ConstantState(const std::vector<double>* probs) : probs_(probs) {}
    std::unique_ptr<PolicyState> clone() const override { return std::make_unique<ConstantState>(*this); }
    void observe(std::size_t, std::size_t, std::size_t) override {}
    std::vector<double> action_probs() const override { return *probs_; }
    std::optional<std::uint64_t> merge_key() const override { return 0; }

private:
    const std::vector<double>* probs_;
};

class HistoryState final : public PolicyState {
public:
    HistoryState(const HistoryFunctionPolicy::Fn* fn, std::size_t o0) : fn_(fn) { h_.observations.push_back(o0); }
    std::unique_ptr<PolicyState> clone() const override { return std::make_unique<HistoryState>(*this); }
    void observe(std::size_t a, std::size_t o, std::size_t r) override {
        h_.actions.push_back(a);
        h_.observations.push_back(o);
        h_.rewards.push_back(r);
    }
    std::vector<double> action_probs() const override { return (*fn_)(h_); }

private:
    const HistoryFunctionPolicy::Fn* fn_;
    ObservableHistory h_;
};

class TableState final : public PolicyState {
public:
    TableState(const GreedyTablePolicy* policy, std::size_t o0) : policy_(policy) { key_.push_back(o0); }
    std::unique_ptr<PolicyState> clone() const override { return std::make_unique<TableState>(*this); }
    void observe(std::size_t a, std::size_t o, std::size_t r) override { key_.insert(key_.end(), {a, r, o}); }
    std::vector<double> action_probs() const override {
        std::vector<double> p(policy_->num_actions(), 0.0);
        p[policy_->action_for(key_)] = 1.0;
        return p;
    }

private:
    const GreedyTablePolicy* policy_;
    GreedyTablePolicy::Key key_;
};

}  // namespace

ConstantPolicy::ConstantPolicy(std::vector<double> probs) : probs_(std::move(probs)) {
    double sum = 0.0;
    for (double p : probs_) {
        if (!(p >= 0.0)) throw std::invalid_argument("constant policy: negative probability");
        sum += p;
    }
    if (probs_.empty() || std::abs(sum - 1.0) > 1e-12)
        throw std::invalid_argument("constant policy: probabilities must sum to 1");
}

ConstantPolicy ConstantPolicy::uniform(std::size_t n) {
    return ConstantPolicy(std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

ConstantPolicy ConstantPolicy::delta(std::size_t n, std::size_t action) {
    std::vector<double> p(n, 0.0);
    p.at(action) = 1.0;
    return ConstantPolicy(std::move(p));
}

std::unique_ptr<PolicyState> ConstantPolicy::start(std::size_t) const {
    return std::make_unique<ConstantState>(&probs_);
}

std::unique_ptr<PolicyState> HistoryFunctionPolicy::start(std::size_t o0) const {
    return std::make_unique<HistoryState>(&fn_, o0);
}

std::unique_ptr<PolicyState> GreedyTablePolicy::start(std::size_t o0) const {
    return std::make_unique<TableState>(this, o0);
}

std::size_t GreedyTablePolicy::action_for(const Key& key) const {
    const auto it = table_.find(key);
    return it == table_.end() ? fallback_ : it->second;
}

GreedyTablePolicy::Key history_key(const ObservableHistory& h) {
    GreedyTablePolicy::Key key{h.observations.at(0)};
    for (std::size_t t = 0; t < h.actions.size(); ++t)
        key.insert(key.end(), {h.actions[t], h.rewards[t], h.observations[t + 1]});
    return key;
}

std::size_t greedy_action(const std::vector<double>& probs) {
    std::size_t best = 0;
    for (std::size_t a = 1; a < probs.size(); ++a)
        if (probs[a] > probs[best]) best = a;
    return best;
}

}  // namespace instlab
