// The OpenMP kernels must reproduce the serial reference bit for bit: every
// work item owns its output slot and derives its own seed.

#include <doctest.h>

#include "xnudge/behavior.hpp"
#include "xnudge/data.hpp"
#include "xnudge/explain.hpp"
#include "xnudge/manipulate.hpp"
#include "xnudge/model.hpp"
#include "xnudge/parallel.hpp"
#include "xnudge/simdm.hpp"

using namespace xnudge;

namespace {

struct Fixture {
    SynthTask task;
    ForestModel forest;
    Dataset pool;

    Fixture() {
        SynthConfig sc = default_synth_config(TaskKind::census);
        sc.num_instances = 120;
        sc.seed = 3;
        task = gen_synthetic(sc);
        forest = train_forest(task.dataset, 30, 6, 5, 1);
        pool = task.dataset;
        pool.instances.resize(10);
    }
};

} // namespace

TEST_CASE("parallel_for covers every index exactly once") {
    std::vector<int> hits(257, 0);
    parallel_for(hits.size(), 4, [&](size_t i) { hits[i]++; });
    for (int h : hits) CHECK(h == 1);
    std::vector<int> serial_hits(257, 0);
    serial_for(serial_hits.size(), [&](size_t i) { serial_hits[i]++; });
    CHECK(hits == serial_hits);
}

TEST_CASE("forest training is thread-count independent") {
    const Fixture f;
    const ForestModel a = train_forest(f.task.dataset, 24, 6, 17, 1);
    const ForestModel b = train_forest(f.task.dataset, 24, 6, 17, 4);
    REQUIRE(a.trees.size() == b.trees.size());
    for (size_t t = 0; t < a.trees.size(); ++t) {
        REQUIRE(a.trees[t].nodes.size() == b.trees[t].nodes.size());
        for (size_t i = 0; i < a.trees[t].nodes.size(); ++i) {
            CHECK(a.trees[t].nodes[i].feature == b.trees[t].nodes[i].feature);
            CHECK(a.trees[t].nodes[i].threshold == b.trees[t].nodes[i].threshold);
            CHECK(a.trees[t].nodes[i].count_pos == b.trees[t].nodes[i].count_pos);
        }
    }
}

TEST_CASE("shapley batch is thread-count independent") {
    const Fixture f;
    const ValueFn value = forest_value_fn(f.forest);
    const auto bg = background_rows(f.task.dataset, 32);
    const auto serial = shapley_batch(value, f.pool, bg, {}, 1);
    const auto parallel = shapley_batch(value, f.pool, bg, {}, 4);
    REQUIRE(serial.size() == parallel.size());
    for (size_t i = 0; i < serial.size(); ++i)
        CHECK(serial[i].attributions == parallel[i].attributions);
}

TEST_CASE("lime batch is thread-count independent") {
    const Fixture f;
    const ValueFn value = forest_value_fn(f.forest);
    const Vec mean = background_mean(background_rows(f.task.dataset, 32));
    LimeOptions opts;
    opts.num_samples = 400;
    const auto serial = lime_batch(value, f.pool, mean, opts, 9, 1);
    const auto parallel = lime_batch(value, f.pool, mean, opts, 9, 4);
    REQUIRE(serial.size() == parallel.size());
    for (size_t i = 0; i < serial.size(); ++i) {
        CHECK(serial[i].explanation.attributions == parallel[i].explanation.attributions);
        CHECK(serial[i].r2 == parallel[i].r2);
    }
}

TEST_CASE("log generation is thread-count independent") {
    const Fixture f;
    PopulationConfig pc;
    pc.num_dms = 30;
    const auto population = make_population(pc, f.task.true_weights, 21);
    std::vector<InstanceExplanations> expl(f.pool.size());
    for (size_t i = 0; i < f.pool.size(); ++i)
        expl[i] = InstanceExplanations{Explanation{Vec(f.pool.n, 0.2), ExplKind::shapley},
                                       Explanation{Vec(f.pool.n, -0.2), ExplKind::lime}};
    const ExplainerMix mix{0.4, 0.3, 0.3};
    const AugmentParams aug;
    const auto serial = generate_logs(population, f.pool, f.forest, expl, mix, aug, 23, 1);
    const auto parallel = generate_logs(population, f.pool, f.forest, expl, mix, aug, 23, 4);
    REQUIRE(serial.size() == parallel.size());
    for (size_t i = 0; i < serial.size(); ++i) {
        CHECK(serial[i].dm_id == parallel[i].dm_id);
        CHECK(serial[i].human_label == parallel[i].human_label);
        CHECK(serial[i].explanation.attributions == parallel[i].explanation.attributions);
    }
}

TEST_CASE("manipulation batch is thread-count independent") {
    const Fixture f;
    BehaviorModel m;
    m.n = f.pool.n;
    m.hidden = 4;
    m.config.hidden_dim = 4;
    m.w1.assign(4 * (3 * f.pool.n + 1), 0.05);
    m.b1.assign(4, 0.0);
    m.w2 = {0.3, -0.2, 0.4, 0.1};
    m.b2 = 0.0;

    std::vector<ManipulationTask> tasks(f.pool.size());
    for (size_t i = 0; i < f.pool.size(); ++i)
        tasks[i] = ManipulationTask{&f.pool.instances[i],
                                    predict(f.forest, f.pool.instances[i].features).label,
                                    i % 2 == 0 ? Label::positive() : Label::negative()};
    ManipulationConfig cfg;
    cfg.seed = 29;
    cfg.max_rounds = 40;
    const auto serial = manipulate_batch(m, tasks, cfg, 1);
    const auto parallel = manipulate_batch(m, tasks, cfg, 4);
    REQUIRE(serial.size() == parallel.size());
    for (size_t i = 0; i < serial.size(); ++i) {
        CHECK(serial[i].explanation.attributions == parallel[i].explanation.attributions);
        CHECK(serial[i].final_behavior_loss == parallel[i].final_behavior_loss);
    }
}
