#pragma once

#include <functional>
#include <vector>

#include "xnudge/data.hpp"
#include "xnudge/model.hpp"

namespace xnudge {

/// Model score the explainers attribute; returns a scalar for one input row.
using ValueFn = std::function<double(const Vec&)>;

ValueFn forest_value_fn(const ForestModel& model);
ValueFn logistic_value_fn(const LogisticModel& model);
ValueFn logistic_linear_value_fn(const LogisticModel& model); // pre-sigmoid score

/// First `cap` rows of a dataset as raw background vectors.
std::vector<Vec> background_rows(const Dataset& ds, size_t cap);
Vec background_mean(const std::vector<Vec>& rows);

struct ShapleyOptions {
    size_t max_n = 15;
    size_t background_cap = 64;
};

/// Exact Shapley attributions by full coalition enumeration with
/// interventional background replacement. Refuses n > max_n.
Explanation exact_shapley(const ValueFn& value, const Vec& x, const std::vector<Vec>& background,
                          const ShapleyOptions& opts = {});

struct LimeOptions {
    size_t num_samples = 0; // 0: 50 * n
    double kernel_width = 0.75;
    double ridge = 1e-3;
    uint64_t seed = 0;
};

struct LimeResult {
    Explanation explanation;
    double r2 = 0.0;     // surrogate fit on its own perturbation sample
    int ridge_boosts = 0;
};

/// LIME-style surrogate: mask coordinates to the background mean with
/// probability 1/2, fit a weighted ridge regression of the model score on
/// the mask indicators. Deterministic given the seed.
LimeResult lime_explain(const ValueFn& value, const Vec& x, const Vec& bg_mean,
                        const LimeOptions& opts);

struct AugmentParams {
    double mask_frac = 0.3;
    double amp_frac = 0.2;
    double amp_factor = 2.0;
};

/// Randomly mask some attributions to zero and amplify others (disjoint
/// index sets).
Explanation augment(const Explanation& e, double mask_frac, double amp_frac, double amp_factor,
                    uint64_t seed);

/// Display scale: largest |attribution| becomes 1. Zero vectors pass through.
Explanation rescale_max_abs(Explanation e);

// --- Batch kernels (parallel across instances) ------------------------------

std::vector<Explanation> shapley_batch(const ValueFn& value, const Dataset& ds,
                                       const std::vector<Vec>& background,
                                       const ShapleyOptions& opts, int threads);

std::vector<LimeResult> lime_batch(const ValueFn& value, const Dataset& ds, const Vec& bg_mean,
                                   const LimeOptions& opts, uint64_t seed, int threads);

} // namespace xnudge
