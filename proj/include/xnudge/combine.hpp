#pragma once

#include <map>
#include <string>
#include <vector>

#include "xnudge/data.hpp"

namespace xnudge {

/// Targeted decision for the adversarial recipes: a fixed map from the
/// instance's group tag to the label the manipulator wants. The built-in
/// tables cover the four named tasks; synthetic tasks take the map from
/// config.
Label adversarial_target(const TaskInstance& instance,
                         const std::map<std::string, int>& custom_map = {});

/// Naive-Bayes fusion of an independent human label and the AI label.
/// conf[t][p] = P(pred = p | truth = t) with index 0 = -1, 1 = +1.
struct CombineModel {
    double prior_pos = 0.5;
    double h_conf[2][2] = {{0.5, 0.5}, {0.5, 0.5}};
    double m_conf[2][2] = {{0.5, 0.5}, {0.5, 0.5}};
    double alpha = 1.0;
};

struct CalibrationTriple {
    Label truth;
    Label human_indep;
    Label ai;
};

/// Add-alpha smoothed confusion/prior estimates; smoothing keeps every entry
/// inside (0,1).
CombineModel fit_combiner(const std::vector<CalibrationTriple>& calibration, double alpha = 1.0);

/// Posterior argmax under conditional independence; ties resolve to the AI
/// label.
Label combine(const CombineModel& cm, Label human_indep, Label ai);

/// Log-odds weighted vote, weights ln(acc/(1-acc)); ties resolve to the AI
/// label.
Label weighted_vote_baseline(Label human_indep, Label ai, double human_acc, double model_acc);

} // namespace xnudge
