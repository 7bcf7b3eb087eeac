#include "instlab/env.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "instlab/errors.hpp"

namespace instlab {
namespace {

constexpr double kSumTol = 1e-12;

void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("invalid POMDP: " + what);
}

void check_distribution(std::span<const double> p, const std::string& what) {
    double sum = 0.0;
    for (double v : p) {
        require(std::isfinite(v) && v >= 0.0, what + " has a negative or non-finite entry");
        sum += v;
    }
    require(std::abs(sum - 1.0) <= kSumTol, what + " does not sum to 1");
}

std::string fmt17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

PomdpModel::PomdpModel(PomdpTables tables) : t_(std::move(tables)) {
    const auto S = t_.num_states, A = t_.num_actions, K = t_.num_modalities, O = t_.num_observations;
    require(S >= 1 && A >= 1 && K >= 1 && O >= 1, "empty state/action/modality/observation space");
    require(!t_.reward_support.empty(), "empty reward support");
    require(std::is_sorted(t_.reward_support.begin(), t_.reward_support.end()),
            "reward support must be sorted");
    for (double r : t_.reward_support) require(std::isfinite(r), "non-finite reward");
    require(t_.horizon >= 1, "horizon must be >= 1");
    require(t_.discount >= 0.0 && t_.discount <= 1.0, "discount outside [0,1]");
    require(t_.initial_dist.size() == S, "initial distribution length");
    check_distribution(t_.initial_dist, "initial distribution");
    require(t_.terminal.size() == S, "terminal flags length");
    require(t_.transition.size() == S * A, "transition rows do not cover all (s,a)");
    for (std::size_t row = 0; row < t_.transition.size(); ++row) {
        double sum = 0.0;
        for (const auto& e : t_.transition[row]) {
            require(e.reward_index < t_.reward_support.size(), "reward index out of range");
            require(e.next_state < S, "next state out of range");
            require(std::isfinite(e.prob) && e.prob >= 0.0, "negative transition probability");
            sum += e.prob;
        }
        require(std::abs(sum - 1.0) <= kSumTol,
                "transition row " + std::to_string(row) + " does not sum to 1");
    }
    require(t_.observation.size() == S * (A + 1) * K, "observation rows do not cover all (s',a,k)");
    for (std::size_t row = 0; row < t_.observation.size(); ++row) {
        require(t_.observation[row].size() == O, "observation row length");
        check_distribution(t_.observation[row], "observation row " + std::to_string(row));
    }
}

double PomdpModel::max_abs_reward() const noexcept {
    double m = 0.0;
    for (double r : t_.reward_support) m = std::max(m, std::abs(r));
    return m;
}

InitialDraw sample_initial(const PomdpModel& model, Stream& stream) {
    InitialDraw d{};
    d.state = stream.categorical(model.initial_dist());
    d.modality = stream.below(model.num_modalities());
    d.observation = stream.categorical(model.observation(d.state, model.no_action(), d.modality));
    return d;
}

StepOutcome draw_transition(const PomdpModel& model, std::size_t state, std::size_t modality,
                            std::size_t action, Stream& stream) {
    const TransitionEntry* chosen = &draw_entry(model.transition(state, action), stream);
    StepOutcome out{};
    out.reward_index = chosen->reward_index;
    out.reward = model.reward(chosen->reward_index);
    out.next_state = chosen->next_state;
    out.observation = stream.categorical(model.observation(out.next_state, action, modality));
    out.terminal = model.is_terminal(out.next_state);
    return out;
}

StepOutcome step(const PomdpModel& model, std::size_t state, std::size_t modality,
                 std::size_t action, Stream& stream) {
    if (state >= model.num_states() || action >= model.num_actions() ||
        modality >= model.num_modalities())
        throw UsageError("step: index out of range");
    if (model.is_terminal(state)) throw UsageError("step: state " + std::to_string(state) + " is terminal");
    return draw_transition(model, state, modality, action, stream);
}

PomdpModel build_bandit(double p_hi, double p_lo, std::size_t num_actions, std::size_t horizon,
                        double discount) {
    if (!(p_hi > p_lo)) throw std::invalid_argument("bandit: p_hi must exceed p_lo");
    if (p_lo < 0.0 || p_hi > 1.0) throw std::invalid_argument("bandit: probabilities outside [0,1]");
    if (num_actions < 2) throw std::invalid_argument("bandit: need at least two actions");

    PomdpTables t;
    t.name = "bandit";
    t.num_states = 1;
    t.num_actions = num_actions;
    t.num_modalities = 1;
    t.num_observations = 1;
    t.reward_support = {0.0, 1.0};
    t.initial_dist = {1.0};
    t.terminal = {0};
    t.discount = discount;
    t.horizon = horizon;
    for (std::size_t a = 0; a < num_actions; ++a) {
        const double p = a == 0 ? p_hi : p_lo;
        std::vector<TransitionEntry> row;
        if (p < 1.0) row.push_back({0, 0, 1.0 - p});
        if (p > 0.0) row.push_back({1, 0, p});
        t.transition.push_back(std::move(row));
    }
    t.observation.assign(num_actions + 1, std::vector<double>{1.0});
    return PomdpModel(std::move(t));
}

PomdpModel build_gated_corridor(const CorridorParams& p) {
    using namespace corridor;
    if (p.length < 3) throw std::invalid_argument("corridor: length must be >= 3");
    if (!(p.hazard_prob >= 0.0 && p.hazard_prob <= 1.0))
        throw std::invalid_argument("corridor: hazard_prob outside [0,1]");
    if (p.num_modalities < 2) throw std::invalid_argument("corridor: need at least two modalities");
    if (p.horizon < 1) throw std::invalid_argument("corridor: horizon must be >= 1");

    const std::size_t L = p.length, K = p.num_modalities, A = 3;
    const double h = p.hazard_prob;
    const std::size_t dead = dead_state(L), goal = goal_state(L);
    const std::size_t R0 = 0, R10 = 1;

    PomdpTables t;
    t.name = "gated_corridor";
    t.num_states = 2 * L + 2;
    t.num_actions = A;
    t.num_modalities = K;
    t.num_observations = 2 * L + 2 + K;
    t.reward_support = {0.0, kGoalReward};
    t.discount = p.discount;
    t.horizon = p.horizon;
    t.terminal.assign(t.num_states, 0);
    t.terminal[dead] = 1;
    t.terminal[goal] = 1;

    t.initial_dist.assign(t.num_states, 0.0);
    t.initial_dist[state_of(0, false)] = 1.0 - h;
    t.initial_dist[state_of(0, true)] = h;

    // Landing safely on `pos` (< L): the hazard flag of cell pos + 1 is fresh,
    // except that the goal cell is never a hazard.
    auto land = [&](std::size_t pos, double prob, std::vector<TransitionEntry>& row) {
        if (pos >= L) {
            row.push_back({R10, goal, prob});
            return;
        }
        if (pos + 1 == L || h <= 0.0) {
            row.push_back({R0, state_of(pos, false), prob});
        } else if (h >= 1.0) {
            row.push_back({R0, state_of(pos, true), prob});
        } else {
            row.push_back({R0, state_of(pos, false), prob * (1.0 - h)});
            row.push_back({R0, state_of(pos, true), prob * h});
        }
    };

    t.transition.resize(t.num_states * A);
    for (std::size_t s = 0; s < t.num_states; ++s) {
        for (std::size_t a = 0; a < A; ++a) {
            auto& row = t.transition[s * A + a];
            if (s == dead || s == goal) {
                row.push_back({R0, s, 1.0});
                continue;
            }
            const std::size_t pos = s / 2;
            const bool hazard = (s % 2) == 1;
            if (a == kWait) {
                row.push_back({R0, s, 1.0});
            } else if (a == kAdvance) {
                if (hazard) row.push_back({R0, dead, 1.0});
                else land(pos + 1, 1.0, row);
            } else {  // jump
                if (hazard || pos + 2 >= L) {
                    // After a hazard the following cell is always safe.
                    land(pos + 2, 1.0, row);
                } else {
                    if (h > 0.0) row.push_back({R0, dead, h});
                    if (h < 1.0) land(pos + 2, 1.0 - h, row);
                }
            }
        }
    }

    const std::size_t O = t.num_observations;
    t.observation.assign(t.num_states * (A + 1) * K, std::vector<double>(O, 0.0));
    for (std::size_t s = 0; s < t.num_states; ++s) {
        for (std::size_t a = 0; a <= A; ++a) {
            for (std::size_t k = 0; k < K; ++k) {
                auto& row = t.observation[(s * (A + 1) + a) * K + k];
                std::size_t sym;
                if (a == A) sym = 2 * L + 2 + k;  // theme card
                else if (s == dead) sym = 2 * L;
                else if (s == goal) sym = 2 * L + 1;
                else sym = 2 * (((s / 2) + k) % L) + (s % 2);
                row[sym] = 1.0;
            }
        }
    }
    return PomdpModel(std::move(t));
}

std::string model_to_json(const PomdpModel& model) {
    const auto& t = model.tables();
    std::ostringstream os;
    auto list = [&](std::span<const double> v) {
        os << '[';
        for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << fmt17(v[i]);
        os << ']';
    };
    os << "{\n";
    os << "  \"name\": \"" << t.name << "\",\n";
    os << "  \"num_states\": " << t.num_states << ",\n";
    os << "  \"num_actions\": " << t.num_actions << ",\n";
    os << "  \"num_modalities\": " << t.num_modalities << ",\n";
    os << "  \"num_observations\": " << t.num_observations << ",\n";
    os << "  \"discount\": " << fmt17(t.discount) << ",\n";
    os << "  \"horizon\": " << t.horizon << ",\n";
    os << "  \"reward_support\": ";
    list(t.reward_support);
    os << ",\n  \"initial_dist\": ";
    list(t.initial_dist);
    os << ",\n  \"terminal\": [";
    for (std::size_t s = 0; s < t.num_states; ++s) os << (s ? "," : "") << (t.terminal[s] ? "true" : "false");
    os << "],\n  \"transition\": [";
    for (std::size_t row = 0; row < t.transition.size(); ++row) {
        os << (row ? "," : "") << "\n    [";
        const auto& entries = t.transition[row];
        for (std::size_t i = 0; i < entries.size(); ++i) {
            os << (i ? "," : "") << "{\"reward_index\":" << entries[i].reward_index
               << ",\"next_state\":" << entries[i].next_state << ",\"prob\":" << fmt17(entries[i].prob)
               << '}';
        }
        os << ']';
    }
    os << "\n  ],\n  \"observation\": [";
    for (std::size_t row = 0; row < t.observation.size(); ++row) {
        os << (row ? "," : "") << "\n    ";
        list(t.observation[row]);
    }
    os << "\n  ]\n}\n";
    return os.str();
}

}  // namespace instlab
