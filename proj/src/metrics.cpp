#include "instlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace instlab {

namespace {

// Runs one episode of `policy` on `instance`, calling visit(probs) at every decision.
template <typename Visit>
NodeCursor play(const Policy& policy, const Instance& instance, Stream& stream, double& ret, std::size_t& steps,
                Visit&& visit) {
    const PomdpModel& model = instance.model();
    NodeCursor cur = instance.root_cursor();
    auto state = policy.start(cur.record.observation);
    double disc = 1.0;
    ret = 0.0;
    steps = 0;
    while (steps < model.horizon() && !cur.record.terminal) {
        const auto probs = state->action_probs();
        visit(probs);
        const std::size_t a = stream.categorical(probs);
        cur = instance.child(cur, a);
        ret += disc * cur.record.reward;
        disc *= model.discount();
        ++steps;
        if (cur.record.terminal || steps == model.horizon()) break;
        state->observe(a, cur.record.observation, cur.record.reward_index);
    }
    return cur;
}

double max_reward(const PomdpModel& model) {
    const auto r = model.reward_support();
    return *std::max_element(r.begin(), r.end());
}

}  // namespace

PolicySignature time_averaged_policy(const Policy& policy, const Instance& instance, std::uint64_t seed,
                                     std::size_t episodes, std::size_t instance_id) {
    PolicySignature sig;
    sig.instance = instance_id;
    sig.probs.assign(policy.num_actions(), 0.0);
    for (std::size_t e = 0; e < episodes; ++e) {
        Stream stream(derive_seed(seed, "signature", e));
        double ret = 0.0;
        std::size_t steps = 0;
        play(policy, instance, stream, ret, steps, [&](const std::vector<double>& p) {
            for (std::size_t a = 0; a < p.size(); ++a) sig.probs[a] += p[a];
            ++sig.steps;
        });
    }
    if (sig.steps > 0)
        for (double& x : sig.probs) x /= static_cast<double>(sig.steps);
    return sig;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: size mismatch");
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        if (q[i] <= 0.0) return std::numeric_limits<double>::infinity();
        kl += p[i] * std::log(p[i] / q[i]);
    }
    return std::max(kl, 0.0);
}

std::vector<double> per_instance_kl(const Policy& reference, const Policy& policy, const InstanceSet& pool,
                                    std::uint64_t seed, std::size_t episodes) {
    std::vector<double> out;
    out.reserve(pool.size());
    for (std::size_t j = 0; j < pool.size(); ++j) {
        const std::uint64_t s = derive_seed(seed, "instance-signature", j);
        const auto ref = time_averaged_policy(reference, pool[j], s, episodes, j);
        const auto pol = time_averaged_policy(policy, pool[j], s, episodes, j);
        out.push_back(kl_divergence(ref.probs, pol.probs));
    }
    return out;
}

EpisodeStat episode_stat(const Policy& policy, const Instance& instance, std::uint64_t seed,
                         std::size_t instance_id) {
    EpisodeStat st;
    st.instance = instance_id;
    Stream stream(seed);
    std::size_t steps = 0;
    const NodeCursor last = play(policy, instance, stream, st.ret, steps, [](const std::vector<double>&) {});
    st.success = steps > 0 && last.record.terminal && last.record.reward == max_reward(instance.model());
    if (st.success) st.steps_to_reward = steps;
    return st;
}

DeltaTimeStats delta_time_to_reward(const Policy& policy, const Policy& base, const InstanceSet& pool,
                                    std::size_t episodes, std::uint64_t seed) {
    DeltaTimeStats out;
    for (std::size_t j = 0; j < pool.size(); ++j) {
        for (std::size_t e = 0; e < episodes; ++e) {
            const std::uint64_t s = derive_seed(seed, "delta-t", j * episodes + e);
            const auto a = episode_stat(policy, pool[j], s, j);
            const auto b = episode_stat(base, pool[j], s, j);
            if (!a.success || !b.success) continue;
            out.deltas.push_back(static_cast<double>(a.steps_to_reward) - static_cast<double>(b.steps_to_reward));
            out.instances.push_back(j);
        }
    }
    out.empty = out.deltas.empty();
    if (!out.empty) {
        const auto s = summarize(out.deltas);
        out.mean = s.mean;
        out.sd = s.sd;
    }
    return out;
}

HeadSimilarity cosine_similarity_heads(const EnsembleNet& net) {
    const std::size_t M = net.shape().num_heads, A = net.shape().num_actions, d = net.shape().hidden;
    if (M < 2) throw std::invalid_argument("cosine similarity needs at least two heads");
    const auto& p = net.params();
    auto matrix = [&](auto offset, std::size_t len) {
        CosineMatrix c;
        c.size = M;
        c.values.assign(M * M, std::numeric_limits<double>::quiet_NaN());
        c.defined.assign(M * M, 0);
        std::vector<double> norms(M);
        for (std::size_t m = 0; m < M; ++m) {
            const double* x = p.data() + offset(m);
            norms[m] = std::sqrt(std::inner_product(x, x + len, x, 0.0));
        }
        for (std::size_t i = 0; i < M; ++i) {
            for (std::size_t j = 0; j < M; ++j) {
                if (norms[i] == 0.0 || norms[j] == 0.0) continue;
                const double* x = p.data() + offset(i);
                const double* y = p.data() + offset(j);
                const double v = i == j ? 1.0 : std::inner_product(x, x + len, y, 0.0) / (norms[i] * norms[j]);
                c.values[i * M + j] = std::clamp(v, -1.0, 1.0);
                c.defined[i * M + j] = 1;
            }
        }
        return c;
    };
    HeadSimilarity out;
    out.policy = matrix([&](std::size_t m) { return net.off_wpi(m); }, A * d + A);
    out.value = matrix([&](std::size_t m) { return net.off_wv(m); }, d + 1);
    return out;
}

double median_off_diagonal(const CosineMatrix& m) {
    std::vector<double> xs;
    for (std::size_t i = 0; i < m.size; ++i)
        for (std::size_t j = i + 1; j < m.size; ++j)
            if (m.is_defined(i, j)) xs.push_back(m.at(i, j));
    if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
    return summarize(xs).median;
}

AgreementReport agreement_from_signatures(std::span<const double> consensus,
                                          const std::vector<std::vector<double>>& heads) {
    AgreementReport rep;
    double sum = 0.0;
    for (const auto& h : heads) {
        const double kl = kl_divergence(consensus, h);
        if (std::isinf(kl)) rep.infinite = true;
        sum += kl;
        ++rep.terms;
    }
    rep.mean_kl = rep.terms > 0 ? sum / static_cast<double>(rep.terms) : 0.0;
    return rep;
}

AgreementReport ensemble_agreement(const EnsembleNet& net, const InstanceSet& pool, std::uint64_t seed,
                                   std::size_t episodes) {
    const std::size_t M = net.shape().num_heads, A = net.shape().num_actions, d = net.shape().hidden;
    if (M < 2) throw std::invalid_argument("ensemble agreement needs at least two heads");
    AgreementReport total;
    double sum = 0.0;
    for (std::size_t j = 0; j < pool.size(); ++j) {
        const Instance& inst = pool[j];
        const PomdpModel& model = inst.model();
        std::vector<double> cons(A, 0.0);
        std::vector<std::vector<double>> heads(M, std::vector<double>(A, 0.0));
        std::size_t steps = 0;
        for (std::size_t e = 0; e < episodes; ++e) {
            Stream stream(derive_seed(derive_seed(seed, "agreement", j), "signature", e));
            NodeCursor cur = inst.root_cursor();
            std::vector<double> h(d, 0.0), next(d);
            encode_step(net, cur.record.observation, 0.0, net.no_action(), std::vector<double>(d, 0.0), h);
            for (std::size_t t = 0; t < model.horizon() && !cur.record.terminal; ++t) {
                const auto pc = consensus_probs(net, h);
                for (std::size_t a = 0; a < A; ++a) cons[a] += pc[a];
                for (std::size_t m = 0; m < M; ++m) {
                    const auto pm = policy_probs(net, m, h);
                    for (std::size_t a = 0; a < A; ++a) heads[m][a] += pm[a];
                }
                ++steps;
                const std::size_t a = stream.categorical(pc);
                cur = inst.child(cur, a);
                if (cur.record.terminal || t + 1 == model.horizon()) break;
                encode_step(net, cur.record.observation, cur.record.reward, a, h, next);
                std::swap(h, next);
            }
        }
        if (steps == 0) continue;
        for (double& x : cons) x /= static_cast<double>(steps);
        for (auto& hm : heads)
            for (double& x : hm) x /= static_cast<double>(steps);
        const auto rep = agreement_from_signatures(cons, heads);
        total.infinite = total.infinite || rep.infinite;
        sum += rep.mean_kl * static_cast<double>(rep.terms);
        total.terms += rep.terms;
    }
    total.mean_kl = total.terms > 0 ? sum / static_cast<double>(total.terms) : 0.0;
    return total;
}

Summary summarize(std::vector<double> xs) {
    Summary s;
    s.n = xs.size();
    if (xs.empty()) return s;
    std::sort(xs.begin(), xs.end());
    s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.sd = xs.size() > 1 ? std::sqrt(ss / static_cast<double>(xs.size() - 1)) : 0.0;
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(xs.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const std::size_t hi = std::min(lo + 1, xs.size() - 1);
        return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
    };
    s.q1 = quantile(0.25);
    s.median = quantile(0.5);
    s.q3 = quantile(0.75);
    return s;
}

namespace {

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else if (c == '&') out += "&amp;";
        else out += c;
    }
    return out;
}

}  // namespace

std::string histogram_svg(const std::vector<double>& values, std::size_t bins, double lo, double hi,
                          const std::string& title) {
    if (bins == 0 || !(hi > lo)) throw std::invalid_argument("histogram: need bins > 0 and hi > lo");
    std::vector<std::size_t> counts(bins, 0);
    std::size_t outside = 0;
    for (double v : values) {
        if (!(v >= lo && v <= hi)) {
            ++outside;
            continue;
        }
        auto b = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins));
        counts[std::min(b, bins - 1)]++;
    }
    const std::size_t peak = std::max<std::size_t>(1, *std::max_element(counts.begin(), counts.end()));
    const double W = 480, H = 240, left = 40, bottom = 200, top = 30;
    const double bw = (W - left - 20) / static_cast<double>(bins);
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    os << "<!-- bins=" << bins << " lo=" << lo << " hi=" << hi << " n=" << values.size() << " outside=" << outside
       << " -->\n";
    os << "<text x=\"" << left << "\" y=\"18\" font-size=\"13\">" << escape(title) << "</text>\n";
    for (std::size_t b = 0; b < bins; ++b) {
        const double h = (bottom - top) * static_cast<double>(counts[b]) / static_cast<double>(peak);
        os << "<rect x=\"" << left + bw * static_cast<double>(b) << "\" y=\"" << bottom - h << "\" width=\""
           << bw * 0.9 << "\" height=\"" << h << "\" fill=\"#4a78a8\"/>\n";
    }
    os << "<line x1=\"" << left << "\" y1=\"" << bottom << "\" x2=\"" << W - 20 << "\" y2=\"" << bottom
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << left << "\" y=\"" << bottom + 16 << "\" font-size=\"11\">" << lo << "</text>\n";
    os << "<text x=\"" << W - 50 << "\" y=\"" << bottom + 16 << "\" font-size=\"11\">" << hi << "</text>\n";
    os << "</svg>\n";
    return os.str();
}

std::string line_chart_svg(const std::vector<double>& x, const std::vector<std::vector<double>>& series,
                           const std::vector<std::string>& names, const std::string& title) {
    static const char* colors[] = {"#4a78a8", "#d0743c", "#5a9e4b", "#a04a8c", "#777777"};
    double xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;
    if (!x.empty()) {
        xmin = *std::min_element(x.begin(), x.end());
        xmax = *std::max_element(x.begin(), x.end());
    }
    bool first = true;
    for (const auto& s : series) {
        for (double v : s) {
            if (!std::isfinite(v)) continue;
            ymin = first ? v : std::min(ymin, v);
            ymax = first ? v : std::max(ymax, v);
            first = false;
        }
    }
    if (xmax <= xmin) xmax = xmin + 1.0;
    if (ymax <= ymin) ymax = ymin + 1.0;
    const double W = 520, H = 280, left = 50, right = 120, top = 30, bottom = 240;
    auto px = [&](double v) { return left + (v - xmin) / (xmax - xmin) * (W - left - right); };
    auto py = [&](double v) { return bottom - (v - ymin) / (ymax - ymin) * (bottom - top); };
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    os << "<!-- x=[" << xmin << "," << xmax << "] y=[" << ymin << "," << ymax << "] -->\n";
    os << "<text x=\"" << left << "\" y=\"18\" font-size=\"13\">" << escape(title) << "</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        os << "<polyline fill=\"none\" stroke=\"" << colors[k % 5] << "\" points=\"";
        for (std::size_t i = 0; i < std::min(x.size(), series[k].size()); ++i)
            os << px(x[i]) << "," << py(series[k][i]) << " ";
        os << "\"/>\n";
        os << "<text x=\"" << W - right + 8 << "\" y=\"" << top + 16.0 * static_cast<double>(k) << "\" font-size=\"11\" fill=\""
           << colors[k % 5] << "\">" << escape(k < names.size() ? names[k] : "") << "</text>\n";
    }
    os << "<line x1=\"" << left << "\" y1=\"" << bottom << "\" x2=\"" << W - right << "\" y2=\"" << bottom
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"4\" y=\"" << top + 4 << "\" font-size=\"11\">" << ymax << "</text>\n";
    os << "<text x=\"4\" y=\"" << bottom << "\" font-size=\"11\">" << ymin << "</text>\n";
    os << "</svg>\n";
    return os.str();
}

}  // namespace instlab
