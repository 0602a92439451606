#include <doctest.h>

#include <cmath>

#include "xnudge/data.hpp"
#include "xnudge/explain.hpp"
#include "xnudge/model.hpp"
#include "xnudge/rng.hpp"

using namespace xnudge;

namespace {

std::vector<Vec> random_background(size_t rows, size_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<Vec> bg(rows, Vec(n));
    for (auto& row : bg)
        for (auto& v : row) v = rng.uniform01();
    return bg;
}

Dataset separable_census(size_t count, uint64_t seed) {
    SynthConfig sc = default_synth_config(TaskKind::census);
    sc.num_instances = count;
    sc.seed = seed;
    return gen_synthetic(sc).dataset;
}

double pearson(const Vec& a, const Vec& b) {
    const size_t n = a.size();
    double ma = 0, mb = 0;
    for (size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sa = 0, sb = 0, sab = 0;
    for (size_t i = 0; i < n; ++i) {
        sa += (a[i] - ma) * (a[i] - ma);
        sb += (b[i] - mb) * (b[i] - mb);
        sab += (a[i] - ma) * (b[i] - mb);
    }
    return sab / std::sqrt(sa * sb);
}

} // namespace

TEST_CASE("exact shapley on a linear value function matches the closed form") {
    // With an additive value function, phi_i = w_i (x_i - mean background x_i).
    Rng rng(31);
    for (int rep = 0; rep < 25; ++rep) {
        const size_t n = 2 + rng.uniform_index(7); // 2..8
        LogisticModel lm;
        lm.weights.resize(n);
        for (auto& w : lm.weights) w = rng.uniform(-2.0, 2.0);
        lm.bias = rng.uniform(-1.0, 1.0);
        Vec x(n);
        for (auto& v : x) v = rng.uniform01();
        const auto bg = random_background(16, n, 1000 + rep);
        const Vec mean = background_mean(bg);

        const Explanation e = exact_shapley(logistic_linear_value_fn(lm), x, bg);
        for (size_t i = 0; i < n; ++i)
            CHECK(e.attributions[i] ==
                  doctest::Approx(lm.weights[i] * (x[i] - mean[i])).epsilon(1e-9));
    }
}

TEST_CASE("shapley symmetry: identical features get identical attributions") {
    LogisticModel lm;
    lm.weights = {1.3, 1.3, -0.4};
    lm.bias = 0.1;
    const Vec x{0.8, 0.8, 0.3};
    std::vector<Vec> bg = random_background(20, 3, 7);
    for (auto& row : bg) row[1] = row[0]; // columns 0 and 1 identical
    const Explanation e = exact_shapley(logistic_value_fn(lm), x, bg);
    CHECK(e.attributions[0] == doctest::Approx(e.attributions[1]).epsilon(1e-9));
}

TEST_CASE("shapley dummy: an unread feature attributes zero") {
    LogisticModel lm;
    lm.weights = {0.9, 0.0, -1.2}; // feature 1 never read
    lm.bias = 0.0;
    Rng rng(5);
    const auto bg = random_background(12, 3, 9);
    for (int rep = 0; rep < 10; ++rep) {
        const Vec x{rng.uniform01(), rng.uniform01(), rng.uniform01()};
        const Explanation e = exact_shapley(logistic_value_fn(lm), x, bg);
        CHECK(std::abs(e.attributions[1]) <= 1e-9);
    }
}

TEST_CASE("shapley additivity over summed value functions") {
    LogisticModel a, b;
    a.weights = {0.7, -0.3, 0.2};
    b.weights = {-0.1, 0.8, 0.5};
    a.bias = 0.2;
    b.bias = -0.4;
    const auto bg = random_background(10, 3, 13);
    const Vec x{0.2, 0.9, 0.5};
    const ValueFn fa = logistic_linear_value_fn(a);
    const ValueFn fb = logistic_linear_value_fn(b);
    const ValueFn fsum = [&](const Vec& v) { return fa(v) + fb(v); };
    const Explanation ea = exact_shapley(fa, x, bg);
    const Explanation eb = exact_shapley(fb, x, bg);
    const Explanation es = exact_shapley(fsum, x, bg);
    for (size_t i = 0; i < 3; ++i)
        CHECK(es.attributions[i] ==
              doctest::Approx(ea.attributions[i] + eb.attributions[i]).epsilon(1e-9));
}

TEST_CASE("shapley efficiency holds on forest models") {
    const Dataset ds = separable_census(150, 23);
    const ForestModel forest = train_forest(ds, 40, 6, 3);
    const ValueFn value = forest_value_fn(forest);
    const auto bg = background_rows(ds, 32);

    for (size_t pick : {0u, 7u, 33u}) {
        const Vec& x = ds.instances[pick].features;
        const Explanation e = exact_shapley(value, x, bg);
        double total = 0.0;
        for (double phi : e.attributions) total += phi;

        // v(full) - v(empty) by direct evaluation
        double v_full = 0.0, v_empty = 0.0;
        const size_t cap = std::min<size_t>(64, bg.size());
        for (size_t b = 0; b < cap; ++b) {
            v_full += value(x);
            v_empty += value(bg[b]);
        }
        v_full /= cap;
        v_empty /= cap;
        CHECK(std::abs(total - (v_full - v_empty)) <= 1e-9);
    }
}

TEST_CASE("exact shapley refuses oversized inputs") {
    LogisticModel lm;
    lm.weights.assign(16, 0.1);
    const Vec x(16, 0.5);
    const auto bg = random_background(4, 16, 3);
    CHECK_THROWS_WITH_AS(exact_shapley(logistic_value_fn(lm), x, bg),
                         doctest::Contains("lime_explain"), ContractError);
}

TEST_CASE("lime correlates with exact shapley on smooth models") {
    Rng rng(41);
    const size_t n = 6;
    LogisticModel lm;
    lm.weights.resize(n);
    for (auto& w : lm.weights) w = rng.uniform(-2.0, 2.0);
    lm.bias = 0.3;
    const auto bg = random_background(32, n, 17);
    const Vec mean = background_mean(bg);

    const Vec x{0.9, 0.1, 0.7, 0.3, 0.8, 0.2};
    const Explanation shap = exact_shapley(logistic_value_fn(lm), x, bg);

    LimeOptions opts;
    opts.num_samples = 4000;
    opts.seed = 5;
    const LimeResult lime = lime_explain(logistic_value_fn(lm), x, mean, opts);
    CHECK(pearson(shap.attributions, lime.explanation.attributions) >= 0.95);
    CHECK(lime.r2 >= 0.8); // surrogate fidelity on smooth models
}

TEST_CASE("lime on a constant model attributes nothing") {
    const ValueFn constant = [](const Vec&) { return 0.7; };
    LimeOptions opts;
    opts.num_samples = 200;
    opts.seed = 2;
    const Vec x(4, 0.5);
    const Vec mean(4, 0.4);
    const LimeResult r = lime_explain(constant, x, mean, opts);
    for (double a : r.explanation.attributions) CHECK(std::abs(a) <= 1e-6);
}

TEST_CASE("lime is deterministic given the seed") {
    LogisticModel lm;
    lm.weights = {1.0, -0.5, 0.25};
    const Vec x{0.9, 0.2, 0.6};
    const Vec mean{0.5, 0.5, 0.5};
    LimeOptions opts;
    opts.num_samples = 300;
    opts.seed = 9;
    const LimeResult a = lime_explain(logistic_value_fn(lm), x, mean, opts);
    const LimeResult b = lime_explain(logistic_value_fn(lm), x, mean, opts);
    CHECK(a.explanation.attributions == b.explanation.attributions);
    opts.seed = 10;
    const LimeResult c = lime_explain(logistic_value_fn(lm), x, mean, opts);
    CHECK(a.explanation.attributions != c.explanation.attributions);
}

TEST_CASE("lime enforces the sample-count precondition") {
    LogisticModel lm;
    lm.weights = {1.0, 1.0, 1.0, 1.0};
    LimeOptions opts;
    opts.num_samples = 12; // < 10 * n
    CHECK_THROWS_AS(lime_explain(logistic_value_fn(lm), Vec(4, 0.5), Vec(4, 0.5), opts),
                    ContractError);
}

TEST_CASE("augment masks and amplifies disjoint index sets") {
    const Explanation e{{0.2, -0.4}, ExplKind::shapley};

    const Explanation identity = augment(e, 0.0, 0.0, 2.0, 1);
    CHECK(identity.attributions == e.attributions);
    CHECK(identity.kind == ExplKind::augmented);

    const Explanation zeroed = augment(e, 1.0, 0.0, 2.0, 1);
    CHECK(zeroed.attributions == Vec{0.0, 0.0});

    // amp set {1}, factor 2: [0.2, -0.8]
    const Explanation amped = augment(e, 0.0, 0.5, 2.0, 4);
    const bool first = amped.attributions == Vec{0.4, -0.4};
    const bool second = amped.attributions == Vec{0.2, -0.8};
    CHECK((first || second)); // one index amplified, the other untouched

    CHECK_THROWS_AS(augment(e, 0.7, 0.7, 2.0, 1), ContractError);
}

TEST_CASE("rescale_max_abs normalizes the display scale") {
    Explanation e{{0.5, -2.0, 1.0}, ExplKind::shapley};
    const Explanation r = rescale_max_abs(e);
    CHECK(r.attributions == Vec{0.25, -1.0, 0.5});
    Explanation zero{{0.0, 0.0}, ExplKind::lime};
    CHECK(rescale_max_abs(zero).attributions == Vec{0.0, 0.0});
}
