#include "xnudge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xnudge/rng.hpp"

namespace xnudge {

GroupRates fpr_fnr(const std::vector<DecisionOutcome>& decisions, const std::string& group) {
    double fp = 0, tn = 0, fn = 0, tp = 0;
    for (const auto& d : decisions) {
        if (d.group != group) continue;
        if (d.truth.is_positive())
            (d.human.is_positive() ? tp : fn) += 1.0;
        else
            (d.human.is_positive() ? fp : tn) += 1.0;
    }
    GroupRates rates;
    if (fp + tn > 0.0) rates.fpr = fp / (fp + tn);
    if (fn + tp > 0.0) rates.fnr = fn / (fn + tp);
    return rates;
}

std::pair<std::string, std::string> fairness_group_order(TaskKind kind) {
    switch (kind) {
        case TaskKind::census: return {"female", "male"};
        case TaskKind::recidivism: return {"white", "black"};
        case TaskKind::bias: return {"rep", "dem"};
        case TaskKind::toxicity: return {"black", "white"};
        case TaskKind::synthetic:
            throw ConfigError("synthetic tasks need an explicit fairness group order");
    }
    throw ConfigError("unknown task kind in fairness_group_order");
}

FairnessDiff fairness_diff(const std::vector<DecisionOutcome>& decisions,
                           const std::string& group_first, const std::string& group_second) {
    const GroupRates a = fpr_fnr(decisions, group_first);
    const GroupRates b = fpr_fnr(decisions, group_second);
    FairnessDiff diff;
    if (a.fpr && b.fpr) diff.fprd = *a.fpr - *b.fpr;
    if (a.fnr && b.fnr) diff.fnrd = *a.fnr - *b.fnr;
    return diff;
}

FairnessDiff fairness_diff(const std::vector<DecisionOutcome>& decisions, TaskKind kind) {
    const auto [first, second] = fairness_group_order(kind);
    return fairness_diff(decisions, first, second);
}

RelianceStats reliance(const std::vector<DecisionOutcome>& decisions) {
    require(!decisions.empty(), "reliance: empty decision set");
    double correct = 0;
    double ai_wrong = 0, follow_wrong = 0;
    double ai_right = 0, reject_right = 0;
    for (const auto& d : decisions) {
        if (d.human == d.truth) correct += 1.0;
        if (d.ai == d.truth) {
            ai_right += 1.0;
            if (d.human != d.ai) reject_right += 1.0;
        } else {
            ai_wrong += 1.0;
            if (d.human == d.ai) follow_wrong += 1.0;
        }
    }
    RelianceStats stats;
    stats.accuracy = correct / static_cast<double>(decisions.size());
    if (ai_wrong > 0.0) stats.overreliance = follow_wrong / ai_wrong;
    if (ai_right > 0.0) stats.underreliance = reject_right / ai_right;
    return stats;
}

double permutation_test(const std::vector<double>& a, const std::vector<double>& b, int num_perms,
                        uint64_t seed) {
    require(!a.empty() && !b.empty(), "permutation_test: empty condition sample");
    require(num_perms >= 1000, "permutation_test: num_perms must be >= 1000");

    const double mean_a = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
    const double mean_b = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(b.size());
    const double observed = std::abs(mean_a - mean_b);

    std::vector<double> pooled = a;
    pooled.insert(pooled.end(), b.begin(), b.end());
    Rng rng(derive_seed(seed, {stream::perm}));

    int at_least = 0;
    for (int p = 0; p < num_perms; ++p) {
        rng.shuffle(pooled);
        double sa = 0.0;
        for (size_t i = 0; i < a.size(); ++i) sa += pooled[i];
        double sb = 0.0;
        for (size_t i = a.size(); i < pooled.size(); ++i) sb += pooled[i];
        const double diff = std::abs(sa / static_cast<double>(a.size()) -
                                     sb / static_cast<double>(b.size()));
        if (diff >= observed - 1e-15) at_least++;
    }
    return static_cast<double>(at_least + 1) / static_cast<double>(num_perms + 1);
}

Summary summarize(const std::vector<double>& values) {
    Summary s;
    s.count = values.size();
    if (values.empty()) return s;
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) /
             static_cast<double>(values.size());
    if (values.size() == 1) {
        s.ci_lo = s.ci_hi = s.mean;
        return s;
    }
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
    const double half = 1.959963984540054 * sd / std::sqrt(static_cast<double>(values.size()));
    s.ci_lo = s.mean - half;
    s.ci_hi = s.mean + half;
    return s;
}

} // namespace xnudge
