#include "xnudge/explain.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "xnudge/parallel.hpp"
#include "xnudge/rng.hpp"

namespace xnudge {

ValueFn forest_value_fn(const ForestModel& model) {
    return [&model](const Vec& x) { return predict(model, x).prob; };
}

ValueFn logistic_value_fn(const LogisticModel& model) {
    return [&model](const Vec& x) { return predict(model, x).prob; };
}

ValueFn logistic_linear_value_fn(const LogisticModel& model) {
    return [&model](const Vec& x) { return linear_score(model, x); };
}

std::vector<Vec> background_rows(const Dataset& ds, size_t cap) {
    std::vector<Vec> rows;
    const size_t count = std::min(cap, ds.size());
    rows.reserve(count);
    for (size_t i = 0; i < count; ++i) rows.push_back(ds.instances[i].features);
    return rows;
}

Vec background_mean(const std::vector<Vec>& rows) {
    require(!rows.empty(), "background is empty");
    Vec mean(rows[0].size(), 0.0);
    for (const auto& r : rows)
        for (size_t c = 0; c < mean.size(); ++c) mean[c] += r[c];
    for (auto& v : mean) v /= static_cast<double>(rows.size());
    return mean;
}

Explanation exact_shapley(const ValueFn& value, const Vec& x, const std::vector<Vec>& background,
                          const ShapleyOptions& opts) {
    const size_t n = x.size();
    if (n > opts.max_n)
        throw ContractError("exact_shapley refuses n=" + std::to_string(n) + " > max_n=" +
                            std::to_string(opts.max_n) + "; use lime_explain instead");
    require(!background.empty(), "exact_shapley needs a nonempty background");
    require(all_finite(x), "non-finite features in exact_shapley");

    const size_t bg_count = std::min(opts.background_cap, background.size());

    // v(S) for every coalition mask: mean model score with features in S from
    // x and the rest from the background row (interventional replacement).
    const size_t num_masks = size_t{1} << n;
    Vec v(num_masks, 0.0);
    Vec blended(n);
    for (size_t mask = 0; mask < num_masks; ++mask) {
        double acc = 0.0;
        for (size_t b = 0; b < bg_count; ++b) {
            for (size_t i = 0; i < n; ++i)
                blended[i] = (mask >> i) & 1u ? x[i] : background[b][i];
            acc += value(blended);
        }
        v[mask] = acc / static_cast<double>(bg_count);
    }

    // Coalition weights |S|! (n-|S|-1)! / n!; exact in double for n <= 20.
    Vec fact(n + 1, 1.0);
    for (size_t k = 1; k <= n; ++k) fact[k] = fact[k - 1] * static_cast<double>(k);
    Vec weight(n, 0.0);
    for (size_t s = 0; s < n; ++s) weight[s] = fact[s] * fact[n - s - 1] / fact[n];

    Explanation e;
    e.kind = ExplKind::shapley;
    e.attributions.assign(n, 0.0);
    for (size_t i = 0; i < n; ++i) {
        const size_t bit = size_t{1} << i;
        double phi = 0.0;
        for (size_t mask = 0; mask < num_masks; ++mask) {
            if (mask & bit) continue;
            phi += weight[static_cast<size_t>(std::popcount(mask))] * (v[mask | bit] - v[mask]);
        }
        e.attributions[i] = phi;
    }
    return e;
}

namespace {

// Solve A b = y for symmetric positive definite A via Cholesky. Returns false
// when a pivot collapses.
bool cholesky_solve(std::vector<Vec>& a, Vec& y) {
    const size_t d = y.size();
    for (size_t i = 0; i < d; ++i) {
        for (size_t j = 0; j <= i; ++j) {
            double sum = a[i][j];
            for (size_t k = 0; k < j; ++k) sum -= a[i][k] * a[j][k];
            if (i == j) {
                if (sum <= 1e-12) return false;
                a[i][i] = std::sqrt(sum);
            } else {
                a[i][j] = sum / a[j][j];
            }
        }
    }
    for (size_t i = 0; i < d; ++i) {
        double sum = y[i];
        for (size_t k = 0; k < i; ++k) sum -= a[i][k] * y[k];
        y[i] = sum / a[i][i];
    }
    for (size_t ii = d; ii-- > 0;) {
        double sum = y[ii];
        for (size_t k = ii + 1; k < d; ++k) sum -= a[k][ii] * y[k];
        y[ii] = sum / a[ii][ii];
    }
    return true;
}

} // namespace

LimeResult lime_explain(const ValueFn& value, const Vec& x, const Vec& bg_mean,
                        const LimeOptions& opts) {
    const size_t n = x.size();
    require(bg_mean.size() == n, "background mean dimension mismatch in lime_explain");
    require(opts.ridge > 0.0, "lime_explain: ridge strength must be > 0");
    const size_t samples = opts.num_samples == 0 ? 50 * n : opts.num_samples;
    if (samples < 10 * n)
        throw ContractError("lime_explain needs num_samples >= 10*n, got " +
                            std::to_string(samples));

    Rng rng(derive_seed(opts.seed, {stream::lime}));
    std::vector<std::vector<uint8_t>> masks(samples, std::vector<uint8_t>(n));
    Vec response(samples), sample_weight(samples);
    Vec perturbed(n);
    for (size_t s = 0; s < samples; ++s) {
        size_t masked = 0;
        for (size_t i = 0; i < n; ++i) {
            const bool keep = rng.uniform01() < 0.5;
            masks[s][i] = keep ? 1 : 0;
            if (!keep) masked++;
            perturbed[i] = keep ? x[i] : bg_mean[i];
        }
        response[s] = value(perturbed);
        const double d = static_cast<double>(masked) / static_cast<double>(n);
        sample_weight[s] = std::exp(-(d * d) / (opts.kernel_width * opts.kernel_width));
    }

    // Weighted ridge on [1, z]: penalize the coefficients, not the intercept.
    const size_t d = n + 1;
    std::vector<Vec> xtx(d, Vec(d, 0.0));
    Vec xty(d, 0.0);
    Vec row(d);
    for (size_t s = 0; s < samples; ++s) {
        row[0] = 1.0;
        for (size_t i = 0; i < n; ++i) row[i + 1] = static_cast<double>(masks[s][i]);
        const double w = sample_weight[s];
        for (size_t i = 0; i < d; ++i) {
            xty[i] += w * row[i] * response[s];
            for (size_t j = 0; j <= i; ++j) xtx[i][j] += w * row[i] * row[j];
        }
    }
    for (size_t i = 0; i < d; ++i)
        for (size_t j = i + 1; j < d; ++j) xtx[i][j] = xtx[j][i];

    double ridge = opts.ridge;
    Vec beta;
    int boosts = 0;
    for (;; ++boosts) {
        std::vector<Vec> a = xtx;
        for (size_t i = 1; i < d; ++i) a[i][i] += ridge;
        Vec y = xty;
        if (cholesky_solve(a, y) && all_finite(y)) {
            beta = std::move(y);
            break;
        }
        if (boosts >= 3)
            throw NumericsError("lime_explain: degenerate design matrix after 3 ridge boosts");
        ridge *= 10.0;
    }

    // Surrogate fit on its own perturbation sample (weighted R^2).
    double wsum = 0.0, wmean = 0.0;
    for (size_t s = 0; s < samples; ++s) {
        wsum += sample_weight[s];
        wmean += sample_weight[s] * response[s];
    }
    wmean /= wsum;
    double ss_res = 0.0, ss_tot = 0.0;
    for (size_t s = 0; s < samples; ++s) {
        double pred = beta[0];
        for (size_t i = 0; i < n; ++i) pred += beta[i + 1] * static_cast<double>(masks[s][i]);
        ss_res += sample_weight[s] * (response[s] - pred) * (response[s] - pred);
        ss_tot += sample_weight[s] * (response[s] - wmean) * (response[s] - wmean);
    }

    LimeResult result;
    result.explanation.kind = ExplKind::lime;
    result.explanation.attributions.assign(beta.begin() + 1, beta.end());
    result.r2 = ss_tot < 1e-12 ? 1.0 : 1.0 - ss_res / ss_tot;
    result.ridge_boosts = boosts;
    return result;
}

Explanation augment(const Explanation& e, double mask_frac, double amp_frac, double amp_factor,
                    uint64_t seed) {
    require(mask_frac >= 0.0 && mask_frac <= 1.0, "mask_frac must be in [0,1]");
    require(amp_frac >= 0.0 && amp_frac <= 1.0, "amp_frac must be in [0,1]");
    if (mask_frac + amp_frac > 1.0 + 1e-12)
        throw ContractError("augment: mask_frac + amp_frac exceeds 1");

    const size_t n = e.attributions.size();
    size_t n_mask = static_cast<size_t>(std::lround(mask_frac * static_cast<double>(n)));
    size_t n_amp = static_cast<size_t>(std::lround(amp_frac * static_cast<double>(n)));
    if (n_mask + n_amp > n) n_amp = n - n_mask; // rounding collision

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    Rng rng(derive_seed(seed, {stream::augment}));
    rng.shuffle(order);

    Explanation out = e;
    out.kind = ExplKind::augmented;
    for (size_t k = 0; k < n_mask; ++k) out.attributions[order[k]] = 0.0;
    for (size_t k = n_mask; k < n_mask + n_amp; ++k) out.attributions[order[k]] *= amp_factor;
    return out;
}

Explanation rescale_max_abs(Explanation e) {
    double peak = 0.0;
    for (double v : e.attributions) peak = std::max(peak, std::abs(v));
    if (peak > 0.0)
        for (double& v : e.attributions) v /= peak;
    return e;
}

std::vector<Explanation> shapley_batch(const ValueFn& value, const Dataset& ds,
                                       const std::vector<Vec>& background,
                                       const ShapleyOptions& opts, int threads) {
    std::vector<Explanation> out(ds.size());
    parallel_for(ds.size(), threads, [&](size_t i) {
        out[i] = exact_shapley(value, ds.instances[i].features, background, opts);
    });
    return out;
}

std::vector<LimeResult> lime_batch(const ValueFn& value, const Dataset& ds, const Vec& bg_mean,
                                   const LimeOptions& opts, uint64_t seed, int threads) {
    std::vector<LimeResult> out(ds.size());
    parallel_for(ds.size(), threads, [&](size_t i) {
        LimeOptions o = opts;
        o.seed = derive_seed(seed, {stream::lime, fnv1a64(ds.instances[i].id)});
        out[i] = lime_explain(value, ds.instances[i].features, bg_mean, o);
    });
    return out;
}

} // namespace xnudge
