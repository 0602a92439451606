#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "xnudge/data.hpp"

namespace xnudge {

/// One evaluated decision: ground truth, AI recommendation, human choice.
struct DecisionOutcome {
    std::string dm_id;
    std::string instance_id;
    std::string group;
    Label truth;
    Label ai;
    Label human;
};

/// False positive / negative rates; empty when the group lacks the needed
/// ground-truth class (never a silent zero).
struct GroupRates {
    std::optional<double> fpr;
    std::optional<double> fnr;
};

GroupRates fpr_fnr(const std::vector<DecisionOutcome>& decisions, const std::string& group);

struct FairnessDiff {
    std::optional<double> fprd;
    std::optional<double> fnrd;
};

/// Signed group order (first - second) per task, fixed by convention:
/// census female-male, recidivism white-black, bias rep-dem, toxicity
/// black-white. Synthetic tasks must pass an explicit pair.
std::pair<std::string, std::string> fairness_group_order(TaskKind kind);

FairnessDiff fairness_diff(const std::vector<DecisionOutcome>& decisions,
                           const std::string& group_first, const std::string& group_second);
FairnessDiff fairness_diff(const std::vector<DecisionOutcome>& decisions, TaskKind kind);

struct RelianceStats {
    double accuracy = 0.0;
    std::optional<double> overreliance;  // agreed with a wrong AI
    std::optional<double> underreliance; // rejected a right AI
};

RelianceStats reliance(const std::vector<DecisionOutcome>& decisions);

/// Two-sided permutation test on the difference of means; add-one smoothed
/// p-value, deterministic given the seed.
double permutation_test(const std::vector<double>& a, const std::vector<double>& b, int num_perms,
                        uint64_t seed);

/// Mean with a 95% normal-approximation confidence interval.
struct Summary {
    double mean = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    size_t count = 0;
};

Summary summarize(const std::vector<double>& values);

} // namespace xnudge
