#include "instlab/report.hpp"

namespace instlab {

nlohmann::json to_json(const VerificationReport& r) {
    return {{"check", r.check},         {"value", r.value},
            {"reference", r.reference}, {"stderr", r.std_error},
            {"tolerance", r.tolerance}, {"pass", r.pass},
            {"nodes_expanded", r.nodes_expanded}, {"seed", r.seed},
            {"details", r.details}};
}

nlohmann::json to_json(const ValueReport& r) {
    return {{"value", r.value},       {"stderr", r.std_error}, {"nodes_expanded", r.nodes_expanded},
            {"depth", r.depth},       {"episodes", r.episodes}, {"seed", r.seed},
            {"exact", r.exact}};
}

}  // namespace instlab
