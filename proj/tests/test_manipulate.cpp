#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "xnudge/manipulate.hpp"
#include "xnudge/rng.hpp"

using namespace xnudge;

namespace {

// Behavior model computing logit = gain * sum(x * e): two hidden units
// realize the identity relu(s) - relu(-s) = s. Probability rises
// monotonically with the explanation's alignment to x.
BehaviorModel planted_monotone_model(size_t n, double gain) {
    BehaviorModel m;
    m.n = n;
    m.hidden = 2;
    m.config.hidden_dim = 2;
    m.w1.assign(2 * (3 * n + 1), 0.0);
    for (size_t i = 0; i < n; ++i) {
        m.w1[2 * n + 1 + i] = 1.0;                  // unit 0: +sum(x*e)
        m.w1[(3 * n + 1) + 2 * n + 1 + i] = -1.0;   // unit 1: -sum(x*e)
    }
    m.b1 = {0.0, 0.0};
    m.w2 = {gain, -gain};
    m.b2 = 0.0;
    return m;
}

BehaviorModel zero_model(size_t n) {
    BehaviorModel m;
    m.n = n;
    m.hidden = 2;
    m.config.hidden_dim = 2;
    m.w1.assign(2 * (3 * n + 1), 0.0);
    m.b1 = {0.0, 0.0};
    m.w2 = {0.0, 0.0};
    m.b2 = 0.0;
    return m;
}

BehaviorModel random_behavior(size_t n, int hidden, uint64_t seed) {
    BehaviorModel m;
    m.n = n;
    m.hidden = hidden;
    m.config.hidden_dim = hidden;
    Rng rng(seed);
    m.w1.resize(static_cast<size_t>(hidden) * (3 * n + 1));
    m.b1.resize(hidden);
    m.w2.resize(hidden);
    for (auto& w : m.w1) w = rng.uniform(-0.5, 0.5);
    for (auto& w : m.b1) w = rng.uniform(-0.2, 0.2);
    for (auto& w : m.w2) w = rng.uniform(-0.5, 0.5);
    m.b2 = rng.uniform(-0.2, 0.2);
    return m;
}

} // namespace

TEST_CASE("consistency loss is the exact sign-agreement indicator") {
    CHECK(consistency_loss({0.5, -0.2}, Label::positive()) == 0);
    CHECK(consistency_loss({-0.5, 0.2}, Label::positive()) == 1);
    CHECK(consistency_loss({0.3, -0.3}, Label::negative()) == 1); // zero sum: strict
    CHECK(consistency_loss({0.3, -0.3}, Label::positive()) == 1);
    CHECK(consistency_loss({-0.4, -0.1}, Label::negative()) == 0);
}

TEST_CASE("consistency surrogate is the hinge on the signed sum") {
    CHECK(consistency_surrogate({0.3, 0.2}, Label::positive(), 0.05) == 0.0);
    CHECK(consistency_surrogate({-0.1, -0.1}, Label::positive(), 0.05) ==
          doctest::Approx(0.25));
    // zero surrogate with positive margin implies the exact indicator is zero
    Rng rng(3);
    for (int rep = 0; rep < 200; ++rep) {
        Vec e(4);
        for (auto& v : e) v = rng.uniform(-1.0, 1.0);
        const Label y = rep % 2 == 0 ? Label::positive() : Label::negative();
        if (consistency_surrogate(e, y, 0.05) == 0.0) CHECK(consistency_loss(e, y) == 0);
    }
}

TEST_CASE("zero-gradient model runs all rounds at constant loss") {
    const size_t n = 5;
    const BehaviorModel m = zero_model(n);
    Vec x(n, 0.5);
    ManipulationConfig cfg;
    cfg.seed = 1;
    const ManipulationResult r = manipulate(m, x, Label::positive(), Label::positive(), cfg);
    for (const auto& ro : r.restarts) {
        CHECK(ro.rounds_used == cfg.max_rounds);
        CHECK_FALSE(ro.converged);
        CHECK(ro.loss_trace.size() == static_cast<size_t>(ro.rounds_used));
        for (double l : ro.loss_trace) CHECK(l == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
}

TEST_CASE("planted monotone model converges within budget on most instances") {
    const size_t n = 7;
    const BehaviorModel m = planted_monotone_model(n, 5.0);
    ManipulationConfig cfg; // published settings: eta 0.01, tau 0.1, T 100
    Rng rng(17);
    int converged = 0;
    const int trials = 50;
    for (int t = 0; t < trials; ++t) {
        Vec x(n);
        for (auto& v : x) v = rng.uniform01();
        cfg.seed = 1000 + static_cast<uint64_t>(t);
        const ManipulationResult r =
            manipulate(m, x, Label::positive(), Label::positive(), cfg);
        if (r.final_behavior_loss < cfg.threshold ||
            std::any_of(r.restarts.begin(), r.restarts.end(),
                        [](const RestartOutcome& ro) { return ro.converged; }))
            converged++;
    }
    CHECK(static_cast<double>(converged) / trials >= 0.9);
}

TEST_CASE("composite loss descends while the surrogate is inactive") {
    const size_t n = 6;
    const BehaviorModel m = planted_monotone_model(n, 4.0);
    Vec x(n, 0.8);
    ManipulationConfig cfg;
    cfg.restarts = 1;
    cfg.init_low = 0.1; // strictly feasible start, hinge stays silent
    cfg.init_high = 1.0;
    cfg.seed = 7;
    const ManipulationResult r = manipulate(m, x, Label::positive(), Label::positive(), cfg);
    const auto& trace = r.restarts[0].loss_trace;
    for (size_t t = 1; t < trace.size(); ++t) CHECK(trace[t] <= trace[t - 1] + 1e-6);
}

TEST_CASE("feasible restarts with same-signed sums average to a feasible output") {
    const size_t n = 5;
    const BehaviorModel m = planted_monotone_model(n, 4.0);
    Vec x(n, 0.7);
    ManipulationConfig cfg;
    cfg.seed = 21;
    const ManipulationResult r = manipulate(m, x, Label::positive(), Label::positive(), cfg);
    REQUIRE(r.restarts_feasible > 0);
    CHECK(r.feasible);
    CHECK(consistency_loss(r.explanation.attributions, Label::positive()) == 0);
    // display rescale: attribution peak is exactly 1
    double peak = 0.0;
    for (double v : r.explanation.attributions) peak = std::max(peak, std::abs(v));
    CHECK(peak == doctest::Approx(1.0));
}

TEST_CASE("manipulate is deterministic in the seed") {
    const size_t n = 4;
    const BehaviorModel m = random_behavior(n, 8, 3);
    Vec x{0.2, 0.8, 0.5, 0.9};
    ManipulationConfig cfg;
    cfg.seed = 5;
    const ManipulationResult a = manipulate(m, x, Label::positive(), Label::negative(), cfg);
    const ManipulationResult b = manipulate(m, x, Label::positive(), Label::negative(), cfg);
    CHECK(a.explanation.attributions == b.explanation.attributions);
    CHECK(a.final_behavior_loss == b.final_behavior_loss);
    REQUIRE(a.restarts.size() == b.restarts.size());
    for (size_t i = 0; i < a.restarts.size(); ++i)
        CHECK(a.restarts[i].loss_trace == b.restarts[i].loss_trace);

    cfg.seed = 6;
    const ManipulationResult c = manipulate(m, x, Label::positive(), Label::negative(), cfg);
    CHECK(a.explanation.attributions != c.explanation.attributions);
}

TEST_CASE("composite gradient matches central finite differences") {
    const size_t n = 5;
    const BehaviorModel m = random_behavior(n, 8, 9);
    ManipulationConfig cfg;
    Rng rng(31);
    const double h = 1e-6;
    for (int rep = 0; rep < 25; ++rep) {
        Vec x(n), e(n);
        for (auto& v : x) v = rng.uniform01();
        for (auto& v : e) v = rng.uniform(-1.0, 1.0);
        const Label y_m = rep % 2 == 0 ? Label::positive() : Label::negative();
        const Label target = rep % 3 == 0 ? Label::negative() : Label::positive();

        // stay away from the hinge kink
        double sum = 0.0;
        for (double v : e) sum += v;
        if (std::abs(cfg.hinge_margin - y_m.value() * sum) < 1e-3) continue;

        const Vec grad = manipulation_gradient(m, x, y_m, target, e, cfg);
        auto objective = [&](const Vec& probe) {
            const Vec enc = encode(x, y_m, probe);
            return bce_loss(forward_logit(m, enc), target) +
                   cfg.tradeoff * consistency_surrogate(probe, y_m, cfg.hinge_margin);
        };
        for (size_t i = 0; i < n; ++i) {
            Vec hi = e, lo = e;
            hi[i] += h;
            lo[i] -= h;
            const double fd = (objective(hi) - objective(lo)) / (2.0 * h);
            const double denom = std::max({std::abs(fd), std::abs(grad[i]), 1e-8});
            CHECK(std::abs(fd - grad[i]) / denom < 1e-4);
        }
    }
}

TEST_CASE("feasibility flag always matches the exact indicator") {
    Rng rng(47);
    for (uint64_t rep = 0; rep < 30; ++rep) {
        const size_t n = 3 + rng.uniform_index(4);
        const BehaviorModel m = random_behavior(n, 6, 100 + rep);
        Vec x(n);
        for (auto& v : x) v = rng.uniform01();
        const Label y_m = rep % 2 == 0 ? Label::positive() : Label::negative();
        const Label target = rep % 3 == 0 ? Label::positive() : Label::negative();
        ManipulationConfig cfg;
        cfg.seed = rep;
        cfg.max_rounds = 30;
        const ManipulationResult r = manipulate(m, x, y_m, target, cfg);
        CHECK(r.feasible == (consistency_loss(r.explanation.attributions, y_m) == 0));
        for (const auto& ro : r.restarts) {
            if (ro.aborted) continue;
            CHECK(ro.feasible == (consistency_loss(ro.explanation, y_m) == 0));
            CHECK(ro.loss_trace.size() == static_cast<size_t>(ro.rounds_used));
        }
    }
}

TEST_CASE("manipulation config validation") {
    ManipulationConfig cfg;
    cfg.step_size = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = ManipulationConfig{};
    cfg.init_low = 1.0;
    cfg.init_high = -1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = ManipulationConfig{};
    CHECK_NOTHROW(cfg.validate());
    // published defaults
    CHECK(cfg.step_size == 0.01);
    CHECK(cfg.tradeoff == 0.01);
    CHECK(cfg.threshold == 0.1);
    CHECK(cfg.max_rounds == 100);
    CHECK(cfg.restarts == 5);
    CHECK(cfg.init_low == -1.0);
    CHECK(cfg.init_high == 1.0);
}
