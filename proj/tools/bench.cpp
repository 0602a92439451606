// Benchmark: serial reference loops against the OpenMP kernels on the heavy
// batch operations. Also verifies that both paths produce identical bytes.

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>

#include "xnudge/behavior.hpp"
#include "xnudge/data.hpp"
#include "xnudge/explain.hpp"
#include "xnudge/manipulate.hpp"
#include "xnudge/model.hpp"
#include "xnudge/parallel.hpp"
#include "xnudge/rng.hpp"
#include "xnudge/simdm.hpp"

using namespace xnudge;

namespace {

double time_ms(const std::function<void()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

void report(const char* name, double serial_ms, double parallel_ms, bool identical) {
    std::printf("%-18s serial %8.1f ms   omp %8.1f ms   speedup %4.2fx   identical %s\n", name,
                serial_ms, parallel_ms, serial_ms / parallel_ms, identical ? "yes" : "NO");
}

} // namespace

int main(int argc, char** argv) {
    const int threads = argc > 1 ? std::atoi(argv[1]) : resolve_threads(0);
    std::printf("xnudge benchmark, %d threads vs serial reference\n\n", threads);

    SynthConfig sc = default_synth_config(TaskKind::census);
    sc.num_instances = 600;
    sc.seed = 9;
    SynthTask task = gen_synthetic(sc);
    const Dataset& data = task.dataset;

    // forest training
    ForestModel forest_serial, forest_parallel;
    const double f_s = time_ms([&] { forest_serial = train_forest(data, 200, 8, 7, 1); });
    const double f_p = time_ms([&] { forest_parallel = train_forest(data, 200, 8, 7, threads); });
    bool same = forest_serial.trees.size() == forest_parallel.trees.size();
    for (size_t t = 0; same && t < forest_serial.trees.size(); ++t) {
        const auto& a = forest_serial.trees[t].nodes;
        const auto& b = forest_parallel.trees[t].nodes;
        same = a.size() == b.size();
        for (size_t i = 0; same && i < a.size(); ++i)
            same = a[i].feature == b[i].feature && a[i].threshold == b[i].threshold;
    }
    report("train_forest", f_s, f_p, same);

    Dataset pool = data;
    pool.instances.resize(48);
    const ValueFn value = forest_value_fn(forest_serial);
    const std::vector<Vec> background = background_rows(data, 64);
    const Vec bg_mean = background_mean(background);

    // exact Shapley
    std::vector<Explanation> shap_serial, shap_parallel;
    const double s_s = time_ms([&] { shap_serial = shapley_batch(value, pool, background, {}, 1); });
    const double s_p =
        time_ms([&] { shap_parallel = shapley_batch(value, pool, background, {}, threads); });
    same = true;
    for (size_t i = 0; same && i < shap_serial.size(); ++i)
        same = shap_serial[i].attributions == shap_parallel[i].attributions;
    report("shapley_batch", s_s, s_p, same);

    // LIME
    LimeOptions lo;
    lo.num_samples = 4000;
    std::vector<LimeResult> lime_serial, lime_parallel;
    const double l_s = time_ms([&] { lime_serial = lime_batch(value, pool, bg_mean, lo, 3, 1); });
    const double l_p =
        time_ms([&] { lime_parallel = lime_batch(value, pool, bg_mean, lo, 3, threads); });
    same = true;
    for (size_t i = 0; same && i < lime_serial.size(); ++i)
        same = lime_serial[i].explanation.attributions == lime_parallel[i].explanation.attributions;
    report("lime_batch", l_s, l_p, same);

    // behavior logs
    PopulationConfig pc;
    pc.num_dms = 400;
    const std::vector<SimDM> population = make_population(pc, task.true_weights, 11);
    std::vector<InstanceExplanations> expl(pool.size());
    for (size_t i = 0; i < pool.size(); ++i)
        expl[i] = InstanceExplanations{rescale_max_abs(shap_serial[i]),
                                       rescale_max_abs(lime_serial[i].explanation)};
    ExplainerMix mix{0.4, 0.3, 0.3};
    AugmentParams aug;
    std::vector<BehaviorRecord> logs_serial, logs_parallel;
    const double g_s = time_ms(
        [&] { logs_serial = generate_logs(population, pool, forest_serial, expl, mix, aug, 5, 1); });
    const double g_p = time_ms([&] {
        logs_parallel = generate_logs(population, pool, forest_serial, expl, mix, aug, 5, threads);
    });
    same = logs_serial.size() == logs_parallel.size();
    for (size_t i = 0; same && i < logs_serial.size(); ++i)
        same = logs_serial[i].human_label == logs_parallel[i].human_label &&
               logs_serial[i].explanation.attributions == logs_parallel[i].explanation.attributions;
    report("generate_logs", g_s, g_p, same);

    // manipulation
    BehaviorTrainConfig tc;
    tc.epochs = 5;
    tc.learning_rate = 1e-2;
    tc.seed = 13;
    const BehaviorTrainResult trained = train_behavior(logs_serial, tc);
    std::vector<ManipulationTask> tasks(pool.size());
    for (size_t i = 0; i < pool.size(); ++i)
        tasks[i] = ManipulationTask{&pool.instances[i],
                                    predict(forest_serial, pool.instances[i].features).label,
                                    Label::positive()};
    ManipulationConfig mc;
    mc.seed = 17;
    std::vector<ManipulationResult> man_serial, man_parallel;
    const double m_s =
        time_ms([&] { man_serial = manipulate_batch(trained.model, tasks, mc, 1); });
    const double m_p =
        time_ms([&] { man_parallel = manipulate_batch(trained.model, tasks, mc, threads); });
    same = true;
    for (size_t i = 0; same && i < man_serial.size(); ++i)
        same = man_serial[i].explanation.attributions == man_parallel[i].explanation.attributions;
    report("manipulate_batch", m_s, m_p, same);

    return 0;
}
