#include "xnudge/combine.hpp"

#include <cmath>

namespace xnudge {

namespace {

int idx(Label l) { return l.is_positive() ? 1 : 0; }

Label builtin_target(const TaskInstance& inst) {
    const std::string& g = inst.group;
    switch (inst.kind) {
        case TaskKind::census:
            if (g == "male") return Label::positive();
            if (g == "female") return Label::negative();
            break;
        case TaskKind::recidivism:
            if (g == "black") return Label::positive();
            if (g == "white") return Label::negative();
            break;
        case TaskKind::bias:
            if (g == "dem" || g == "democratic") return Label::positive();
            if (g == "rep" || g == "republican") return Label::negative();
            break;
        case TaskKind::toxicity:
            if (g == "white") return Label::positive();
            if (g == "black") return Label::negative();
            break;
        case TaskKind::synthetic:
            throw VocabularyError(
                "synthetic tasks need an explicit adversarial group map in the config");
    }
    throw VocabularyError("group '" + g + "' is not in the " + to_string(inst.kind) +
                          " target vocabulary");
}

} // namespace

Label adversarial_target(const TaskInstance& instance, const std::map<std::string, int>& custom_map) {
    if (!custom_map.empty()) {
        auto it = custom_map.find(instance.group);
        if (it == custom_map.end())
            throw VocabularyError("group '" + instance.group + "' missing from the target map");
        return Label::from_int(it->second);
    }
    return builtin_target(instance);
}

CombineModel fit_combiner(const std::vector<CalibrationTriple>& calibration, double alpha) {
    require(!calibration.empty(), "fit_combiner: empty calibration set");
    require(alpha > 0.0, "fit_combiner: alpha must be > 0");

    double label_count[2] = {0.0, 0.0};
    double h_count[2][2] = {{0.0, 0.0}, {0.0, 0.0}};
    double m_count[2][2] = {{0.0, 0.0}, {0.0, 0.0}};
    for (const auto& c : calibration) {
        label_count[idx(c.truth)] += 1.0;
        h_count[idx(c.truth)][idx(c.human_indep)] += 1.0;
        m_count[idx(c.truth)][idx(c.ai)] += 1.0;
    }

    CombineModel cm;
    cm.alpha = alpha;
    const double total = static_cast<double>(calibration.size());
    cm.prior_pos = (label_count[1] + alpha) / (total + 2.0 * alpha);
    for (int t = 0; t < 2; ++t) {
        const double row = label_count[t];
        for (int p = 0; p < 2; ++p) {
            cm.h_conf[t][p] = (h_count[t][p] + alpha) / (row + 2.0 * alpha);
            cm.m_conf[t][p] = (m_count[t][p] + alpha) / (row + 2.0 * alpha);
        }
    }
    return cm;
}

Label combine(const CombineModel& cm, Label human_indep, Label ai) {
    const int h = idx(human_indep);
    const int m = idx(ai);
    const double lp_pos = std::log(cm.prior_pos) + std::log(cm.h_conf[1][h]) +
                          std::log(cm.m_conf[1][m]);
    const double lp_neg = std::log(1.0 - cm.prior_pos) + std::log(cm.h_conf[0][h]) +
                          std::log(cm.m_conf[0][m]);
    if (std::abs(lp_pos - lp_neg) < 1e-12) return ai; // tie: AI label anchors
    return lp_pos > lp_neg ? Label::positive() : Label::negative();
}

Label weighted_vote_baseline(Label human_indep, Label ai, double human_acc, double model_acc) {
    require(human_acc > 0.0 && human_acc < 1.0, "weighted_vote: human accuracy must be in (0,1)");
    require(model_acc > 0.0 && model_acc < 1.0, "weighted_vote: model accuracy must be in (0,1)");
    const double wh = std::log(human_acc / (1.0 - human_acc));
    const double wm = std::log(model_acc / (1.0 - model_acc));
    const double score = wh * static_cast<double>(human_indep.value()) +
                         wm * static_cast<double>(ai.value());
    if (std::abs(score) < 1e-12) return ai;
    return score > 0.0 ? Label::positive() : Label::negative();
}

} // namespace xnudge
