#include "instlab/config.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace instlab {

ConfigError::ConfigError(std::size_t line, std::string field, const std::string& what, const std::string& source)
    : std::runtime_error((source.empty() ? std::string() : source + ":") +
                         (line ? (source.empty() ? "line " : "") + std::to_string(line) + ": "
                               : (source.empty() ? std::string() : std::string(" "))) +
                         (field.empty() ? std::string() : "field '" + field + "': ") + what),
      line_(line),
      field_(std::move(field)),
      detail_(what) {}

namespace {

struct Value {
    enum class Kind { string, number, boolean, array } kind = Kind::string;
    std::string text;
    std::vector<Value> items;
};

struct Binding {
    std::string section;
    std::string key;
    std::function<void(RunConfig&, const Value&)> set;  // throws std::invalid_argument on bad values
    std::function<std::string(const RunConfig&)> get;
};

std::string fmt_double(double x) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    std::string s(buf, res.ptr);
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
}

std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    return out + "\"";
}

const char* kind_name(Value::Kind k) {
    switch (k) {
        case Value::Kind::string: return "a string";
        case Value::Kind::number: return "a number";
        case Value::Kind::boolean: return "a boolean";
        case Value::Kind::array: return "an array";
    }
    return "?";
}

void expect(const Value& v, Value::Kind k) {
    if (v.kind != k) throw std::invalid_argument(std::string("expected ") + kind_name(k) + ", got " + kind_name(v.kind));
}

double to_double(const Value& v) {
    expect(v, Value::Kind::number);
    double x = 0.0;
    const auto* end = v.text.data() + v.text.size();
    auto [p, ec] = std::from_chars(v.text.data(), end, x);
    if (ec != std::errc() || p != end) throw std::invalid_argument("not a number: " + v.text);
    return x;
}

std::uint64_t to_u64(const Value& v) {
    expect(v, Value::Kind::number);
    std::uint64_t x = 0;
    const auto* end = v.text.data() + v.text.size();
    auto [p, ec] = std::from_chars(v.text.data(), end, x);
    if (ec != std::errc() || p != end) throw std::invalid_argument("expected a non-negative integer, got " + v.text);
    return x;
}

template <typename T>
using Access = std::function<T&(RunConfig&)>;

Binding real(std::string s, std::string k, Access<double> at) {
    return {std::move(s), std::move(k), [at](RunConfig& c, const Value& v) { at(c) = to_double(v); },
            [at](const RunConfig& c) { return fmt_double(at(const_cast<RunConfig&>(c))); }};
}

template <typename T>
Binding count(std::string s, std::string k, Access<T> at) {
    return {std::move(s), std::move(k), [at](RunConfig& c, const Value& v) { at(c) = static_cast<T>(to_u64(v)); },
            [at](const RunConfig& c) { return std::to_string(at(const_cast<RunConfig&>(c))); }};
}

Binding text(std::string s, std::string k, Access<std::string> at) {
    return {std::move(s), std::move(k),
            [at](RunConfig& c, const Value& v) {
                expect(v, Value::Kind::string);
                at(c) = v.text;
            },
            [at](const RunConfig& c) { return quote(at(const_cast<RunConfig&>(c))); }};
}

Binding counts(std::string s, std::string k, Access<std::vector<std::size_t>> at) {
    return {std::move(s), std::move(k),
            [at](RunConfig& c, const Value& v) {
                expect(v, Value::Kind::array);
                std::vector<std::size_t> out;
                for (const auto& item : v.items) out.push_back(static_cast<std::size_t>(to_u64(item)));
                at(c) = std::move(out);
            },
            [at](const RunConfig& c) {
                std::string out = "[";
                for (std::size_t x : at(const_cast<RunConfig&>(c))) out += (out.size() > 1 ? ", " : "") + std::to_string(x);
                return out + "]";
            }};
}

Binding texts(std::string s, std::string k, Access<std::vector<std::string>> at) {
    return {std::move(s), std::move(k),
            [at](RunConfig& c, const Value& v) {
                expect(v, Value::Kind::array);
                std::vector<std::string> out;
                for (const auto& item : v.items) {
                    expect(item, Value::Kind::string);
                    out.push_back(item.text);
                }
                at(c) = std::move(out);
            },
            [at](const RunConfig& c) {
                std::string out = "[";
                for (const auto& x : at(const_cast<RunConfig&>(c))) out += (out.size() > 1 ? ", " : "") + quote(x);
                return out + "]";
            }};
}

const std::vector<Binding>& bindings() {
    using C = RunConfig;
    static const std::vector<Binding> all = {
        count<std::uint64_t>("run", "seed", [](C& c) -> std::uint64_t& { return c.seed; }),
        count<std::size_t>("run", "workers", [](C& c) -> std::size_t& { return c.workers; }),
        text("env", "kind", [](C& c) -> std::string& { return c.env; }),

        real("bandit", "p_hi", [](C& c) -> double& { return c.bandit.p_hi; }),
        real("bandit", "p_lo", [](C& c) -> double& { return c.bandit.p_lo; }),
        count<std::size_t>("bandit", "num_actions", [](C& c) -> std::size_t& { return c.bandit.num_actions; }),
        count<std::size_t>("bandit", "horizon", [](C& c) -> std::size_t& { return c.bandit.horizon; }),
        real("bandit", "discount", [](C& c) -> double& { return c.bandit.discount; }),

        count<std::size_t>("corridor", "length", [](C& c) -> std::size_t& { return c.corridor.length; }),
        real("corridor", "hazard_prob", [](C& c) -> double& { return c.corridor.hazard_prob; }),
        count<std::size_t>("corridor", "num_modalities", [](C& c) -> std::size_t& { return c.corridor.num_modalities; }),
        count<std::size_t>("corridor", "horizon", [](C& c) -> std::size_t& { return c.corridor.horizon; }),
        real("corridor", "discount", [](C& c) -> double& { return c.corridor.discount; }),

        {"train", "algo",
         [](C& c, const Value& v) {
             expect(v, Value::Kind::string);
             c.train.algo = parse_algo(v.text);
         },
         [](const C& c) { return quote(algo_name(c.train.algo)); }},
        count<std::size_t>("train", "num_subsets", [](C& c) -> std::size_t& { return c.train.num_subsets; }),
        count<std::size_t>("train", "num_instances", [](C& c) -> std::size_t& { return c.train.num_instances; }),
        count<std::size_t>("train", "rollout_n", [](C& c) -> std::size_t& { return c.train.rollout_n; }),
        real("train", "w_lo", [](C& c) -> double& { return c.train.w_lo; }),
        real("train", "w_hi", [](C& c) -> double& { return c.train.w_hi; }),
        real("train", "learning_rate", [](C& c) -> double& { return c.train.learning_rate; }),
        real("train", "lambda_reg", [](C& c) -> double& { return c.train.lambda_reg; }),
        real("train", "lambda_theta", [](C& c) -> double& { return c.train.lambda_theta; }),
        count<std::size_t>("train", "minibatch", [](C& c) -> std::size_t& { return c.train.minibatch; }),
        count<std::size_t>("train", "total_steps", [](C& c) -> std::size_t& { return c.train.total_steps; }),
        count<std::size_t>("train", "hidden", [](C& c) -> std::size_t& { return c.train.hidden; }),
        count<std::size_t>("train", "eval_every", [](C& c) -> std::size_t& { return c.train.eval_every; }),
        count<std::size_t>("train", "eval_episodes", [](C& c) -> std::size_t& { return c.train.eval_episodes; }),

        count<std::size_t>("verify", "action", [](C& c) -> std::size_t& { return c.verify.action; }),
        count<std::size_t>("verify", "n_instances", [](C& c) -> std::size_t& { return c.verify.n_instances; }),
        count<std::size_t>("verify", "repeats", [](C& c) -> std::size_t& { return c.verify.repeats; }),
        counts("verify", "sweep", [](C& c) -> std::vector<std::size_t>& { return c.verify.sweep; }),
        counts("verify", "sequence", [](C& c) -> std::vector<std::size_t>& { return c.verify.sequence; }),
        count<std::size_t>("verify", "set_size", [](C& c) -> std::size_t& { return c.verify.set_size; }),
        count<std::size_t>("verify", "n_sets", [](C& c) -> std::size_t& { return c.verify.n_sets; }),
        count<std::size_t>("verify", "lemma3_sets", [](C& c) -> std::size_t& { return c.verify.lemma3_sets; }),
        real("verify", "universe_p_hi", [](C& c) -> double& { return c.verify.universe_p_hi; }),
        real("verify", "universe_p_lo", [](C& c) -> double& { return c.verify.universe_p_lo; }),
        count<std::size_t>("verify", "universe_horizon", [](C& c) -> std::size_t& { return c.verify.universe_horizon; }),
        count<std::size_t>("verify", "universe_max", [](C& c) -> std::size_t& { return c.verify.universe_max; }),
        counts("verify", "universe_sizes", [](C& c) -> std::vector<std::size_t>& { return c.verify.universe_sizes; }),
        count<std::size_t>("verify", "learner_steps", [](C& c) -> std::size_t& { return c.verify.learner_steps; }),
        count<std::size_t>("verify", "gradcheck_draws", [](C& c) -> std::size_t& { return c.verify.gradcheck_draws; }),
        real("verify", "gradcheck_tolerance", [](C& c) -> double& { return c.verify.gradcheck_tolerance; }),
        count<std::size_t>("verify", "segments", [](C& c) -> std::size_t& { return c.verify.segments; }),

        texts("evaluate", "checkpoints", [](C& c) -> std::vector<std::string>& { return c.evaluate.checkpoints; }),
        texts("evaluate", "pools", [](C& c) -> std::vector<std::string>& { return c.evaluate.pools; }),
        count<std::size_t>("evaluate", "episodes", [](C& c) -> std::size_t& { return c.evaluate.episodes; }),
        count<std::size_t>("evaluate", "test_instances", [](C& c) -> std::size_t& { return c.evaluate.test_instances; }),
        count<std::size_t>("evaluate", "signature_episodes",
                           [](C& c) -> std::size_t& { return c.evaluate.signature_episodes; }),
        count<std::size_t>("evaluate", "bins", [](C& c) -> std::size_t& { return c.evaluate.bins; }),

        text("continual", "checkpoint", [](C& c) -> std::string& { return c.continual.checkpoint; }),
        count<std::size_t>("continual", "steps", [](C& c) -> std::size_t& { return c.continual.steps; }),
        text("continual", "shift", [](C& c) -> std::string& { return c.continual.shift; }),

        count<std::uint64_t>("dump", "instance_seed", [](C& c) -> std::uint64_t& { return c.dump.instance_seed; }),
        count<std::size_t>("dump", "depth", [](C& c) -> std::size_t& { return c.dump.depth; }),
    };
    return all;
}

// --- lexer ----------------------------------------------------------------------

class LineParser {
public:
    LineParser(std::string_view s, std::size_t line) : s_(s), line_(line) {}

    Value value() {
        skip_ws();
        if (eof()) fail("missing value");
        const char c = s_[pos_];
        if (c == '"') return string();
        if (c == '[') return array();
        Value v;
        const std::size_t start = pos_;
        while (!eof() && !std::isspace(static_cast<unsigned char>(s_[pos_])) && s_[pos_] != ',' && s_[pos_] != ']' &&
               s_[pos_] != '#')
            ++pos_;
        std::string word(s_.substr(start, pos_ - start));
        if (word == "true" || word == "false") {
            v.kind = Value::Kind::boolean;
            v.text = word;
            return v;
        }
        if (word.empty()) fail("missing value");
        std::string digits;
        for (char ch : word)
            if (ch != '_') digits += ch;
        if (digits.find_first_not_of("0123456789+-.eE") != std::string::npos) fail("unquoted value '" + word + "'");
        if (digits.front() == '+') digits.erase(0, 1);
        v.kind = Value::Kind::number;
        v.text = digits;
        return v;
    }

    void finish() {
        skip_ws();
        if (!eof() && s_[pos_] != '#') fail("unexpected text after value: '" + std::string(s_.substr(pos_)) + "'");
    }

private:
    Value string() {
        Value v;
        ++pos_;
        while (true) {
            if (eof()) fail("unterminated string");
            char c = s_[pos_++];
            if (c == '"') break;
            if (c == '\\') {
                if (eof()) fail("unterminated string");
                c = s_[pos_++];
                if (c == 'n') c = '\n';
                else if (c == 't') c = '\t';
                else if (c != '"' && c != '\\') fail(std::string("unknown escape \\") + c);
            }
            v.text += c;
        }
        return v;
    }

    Value array() {
        Value v;
        v.kind = Value::Kind::array;
        ++pos_;
        skip_ws();
        if (!eof() && s_[pos_] == ']') {
            ++pos_;
            return v;
        }
        while (true) {
            v.items.push_back(value());
            if (v.items.back().kind == Value::Kind::array) fail("nested arrays are not supported");
            skip_ws();
            if (eof()) fail("unterminated array");
            if (s_[pos_] == ',') {
                ++pos_;
                skip_ws();
                if (!eof() && s_[pos_] == ']') {
                    ++pos_;
                    return v;
                }
                continue;
            }
            if (s_[pos_] == ']') {
                ++pos_;
                return v;
            }
            fail("expected ',' or ']' in array");
        }
    }

    void skip_ws() {
        while (!eof() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }
    bool eof() const { return pos_ >= s_.size(); }
    [[noreturn]] void fail(const std::string& what) const { throw ConfigError(line_, "", what); }

    std::string_view s_;
    std::size_t line_;
    std::size_t pos_ = 0;
};

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

bool valid_key(const std::string& k) {
    if (k.empty()) return false;
    for (char c : k)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
    return true;
}

void check(const RunConfig& cfg, const std::map<std::string, std::size_t>& lines) {
    auto line_of = [&](const std::string& field) {
        auto it = lines.find(field);
        return it == lines.end() ? std::size_t{0} : it->second;
    };
    auto fail = [&](const std::string& field, const std::string& what) { throw ConfigError(line_of(field), field, what); };

    if (cfg.workers == 0) fail("run.workers", "must be at least 1");
    if (cfg.env != "bandit" && cfg.env != "corridor") fail("env.kind", "expected \"bandit\" or \"corridor\", got \"" + cfg.env + "\"");
    try {
        build_env(cfg);
    } catch (const std::invalid_argument& e) {
        fail(cfg.env, e.what());
    }
    try {
        TrainConfig t = cfg.train;
        t.seed = cfg.seed;
        validate(t);
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        const auto colon = msg.find(':');
        if (colon != std::string::npos && msg.rfind("train.", 0) == 0)
            fail(msg.substr(0, colon), msg.substr(colon + 2));
        fail("train", msg);
    }
    const auto& v = cfg.verify;
    if (v.n_instances == 0) fail("verify.n_instances", "must be positive");
    if (v.repeats == 0) fail("verify.repeats", "must be positive");
    for (std::size_t n : v.sweep)
        if (n == 0) fail("verify.sweep", "sizes must be positive");
    if (v.set_size == 0) fail("verify.set_size", "must be positive");
    if (v.n_sets < 2) fail("verify.n_sets", "need at least two sets");
    if (v.lemma3_sets == 0) fail("verify.lemma3_sets", "must be positive");
    if (v.universe_horizon == 0) fail("verify.universe_horizon", "must be positive");
    for (std::size_t n : v.universe_sizes)
        if (n == 0) fail("verify.universe_sizes", "sizes must be positive");
    if (v.gradcheck_draws == 0) fail("verify.gradcheck_draws", "must be positive");
    if (!(v.gradcheck_tolerance > 0.0)) fail("verify.gradcheck_tolerance", "must be positive");
    const auto& e = cfg.evaluate;
    for (const auto& p : e.pools)
        if (p != "train" && p != "test") fail("evaluate.pools", "unknown pool \"" + p + "\" (expected train or test)");
    if (e.episodes == 0) fail("evaluate.episodes", "must be positive");
    if (e.test_instances == 0) fail("evaluate.test_instances", "must be positive");
    if (e.signature_episodes == 0) fail("evaluate.signature_episodes", "must be positive");
    if (e.bins == 0) fail("evaluate.bins", "must be positive");
    if (cfg.continual.shift != "fresh" && cfg.continual.shift != "identity")
        fail("continual.shift", "expected \"fresh\" or \"identity\"");
}

}  // namespace

RunConfig parse_config(std::string_view text) {
    RunConfig cfg;
    std::map<std::string, std::size_t> lines;
    std::set<std::string> sections;
    for (const auto& b : bindings()) sections.insert(b.section);

    std::string section;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        const std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        const std::string line = trim(raw);
        if (line.empty() || line[0] == '#') continue;
        if (line[0] == '[') {
            const auto close = line.find(']');
            if (close == std::string::npos) throw ConfigError(line_no, "", "unterminated section header");
            const std::string rest = trim(std::string_view(line).substr(close + 1));
            if (!rest.empty() && rest[0] != '#') throw ConfigError(line_no, "", "unexpected text after section header");
            section = trim(std::string_view(line).substr(1, close - 1));
            if (!sections.count(section)) throw ConfigError(line_no, section, "unknown section");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(line_no, "", "expected 'key = value'");
        const std::string key = trim(std::string_view(line).substr(0, eq));
        if (!valid_key(key)) throw ConfigError(line_no, "", "invalid key '" + key + "'");
        if (section.empty()) throw ConfigError(line_no, key, "key outside of any [section]");
        const std::string field = section + "." + key;
        const Binding* binding = nullptr;
        for (const auto& b : bindings())
            if (b.section == section && b.key == key) binding = &b;
        if (!binding) throw ConfigError(line_no, field, "unknown key");
        if (lines.count(field)) throw ConfigError(line_no, field, "duplicate key (first set on line " +
                                                                      std::to_string(lines[field]) + ")");
        LineParser p(std::string_view(line).substr(eq + 1), line_no);
        const Value v = p.value();
        p.finish();
        try {
            binding->set(cfg, v);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(line_no, field, e.what());
        }
        lines[field] = line_no;
    }
    check(cfg, lines);
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(0, "", "cannot read config file", path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return parse_config(ss.str());
    } catch (const ConfigError& e) {
        throw ConfigError(e.line(), e.field(), e.detail(), path.string());
    }
}

std::string dump_config(const RunConfig& cfg) {
    std::string out;
    std::string section;
    for (const auto& b : bindings()) {
        if (b.section != section) {
            if (!section.empty()) out += "\n";
            section = b.section;
            out += "[" + section + "]\n";
        }
        out += b.key + " = " + b.get(cfg) + "\n";
    }
    return out;
}

void validate(const RunConfig& cfg) { check(cfg, {}); }

PomdpModel build_env(const RunConfig& cfg) {
    if (cfg.env == "bandit") {
        const auto& b = cfg.bandit;
        return build_bandit(b.p_hi, b.p_lo, b.num_actions, b.horizon, b.discount);
    }
    if (cfg.env == "corridor") return build_gated_corridor(cfg.corridor);
    throw std::invalid_argument("unknown env \"" + cfg.env + "\"");
}

}  // namespace instlab
