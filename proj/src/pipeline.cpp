#include "xnudge/pipeline.hpp"

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "xnudge/combine.hpp"
#include "xnudge/metrics.hpp"
#include "xnudge/model.hpp"
#include "xnudge/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace xnudge {

namespace {

std::string join(const std::string& run_dir, const char* rel) {
    return (fs::path(run_dir) / rel).string();
}

void ensure_parent(const std::string& path) {
    fs::create_directories(fs::path(path).parent_path());
}

void require_artifact(const RunContext& ctx, const char* rel, const std::string& producer) {
    if (!fs::exists(join(ctx.run_dir, rel)))
        throw StageError("missing artifact '" + std::string(rel) + "'; run " + producer +
                         " first");
}

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw StageError("cannot read '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw StageError("artifact '" + path + "' is not valid JSON: " + e.what());
    }
}

void write_json(const json& j, const std::string& path) {
    ensure_parent(path);
    std::ofstream out(path);
    if (!out) throw StageError("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
}

Provenance provenance(const RunContext& ctx) {
    return Provenance{config_hash(ctx.cfg), ctx.cfg.seed};
}

std::string fmt_double(double v) {
    char buf[32];
    snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
}

// Master-seed streams per pipeline stage.
constexpr uint64_t kSplitSeed = 101;
constexpr uint64_t kPoolSeed = 102;
constexpr uint64_t kForestSeed = 103;
constexpr uint64_t kLimeSeed = 104;
constexpr uint64_t kTrainPopSeed = 105;
constexpr uint64_t kLogSeed = 106;
constexpr uint64_t kBehaviorSeed = 107;
constexpr uint64_t kManipSeed = 108;
constexpr uint64_t kCalibPopSeed = 109;
constexpr uint64_t kEvalPopSeed = 110;
constexpr uint64_t kPermSeed = 111;

Vec load_base_weights(const RunContext& ctx) {
    const json j = read_json(join(ctx.run_dir, artifact::base_weights));
    return j.at("weights").get<Vec>();
}

struct PoolExplanations {
    std::vector<std::string> ids;
    std::vector<Explanation> shapley;
    std::vector<Explanation> lime;
    std::vector<double> lime_r2;
};

PoolExplanations load_pool_explanations(const RunContext& ctx) {
    const json j = read_json(join(ctx.run_dir, artifact::explanations));
    PoolExplanations p;
    for (const auto& ej : j.at("explanations")) {
        p.ids.push_back(ej.at("instance").get<std::string>());
        p.shapley.push_back(Explanation{ej.at("shapley").get<Vec>(), ExplKind::shapley});
        p.lime.push_back(Explanation{ej.at("lime").get<Vec>(), ExplKind::lime});
        p.lime_r2.push_back(ej.at("lime_r2").get<double>());
    }
    return p;
}

std::vector<Label> pool_ai_labels(const ForestModel& forest, const Dataset& pool) {
    std::vector<Label> labels;
    labels.reserve(pool.size());
    for (const auto& inst : pool.instances) labels.push_back(predict(forest, inst.features).label);
    return labels;
}

} // namespace

std::string run_dir_for(const RunConfig& cfg, const std::string& out_dir) {
    const std::string h = config_hash(cfg);
    return (fs::path(out_dir) / ("run-" + h.substr(0, 12) + "-s" + std::to_string(cfg.seed)))
        .string();
}

RunContext make_context(const RunConfig& cfg, const std::string& out_dir, int threads_override) {
    RunContext ctx;
    ctx.cfg = cfg;
    ctx.run_dir = run_dir_for(cfg, out_dir);
    ctx.threads = threads_override != 0 ? threads_override : cfg.threads;
    fs::create_directories(ctx.run_dir);
    const Provenance prov = provenance(ctx);
    json cj = config_to_json(cfg);
    cj["config_hash"] = prov.config_hash;
    write_json(cj, join(ctx.run_dir, artifact::config));
    return ctx;
}

// --- gen-data -----------------------------------------------------------------

namespace {

std::string pair_key(const std::string& id) {
    const size_t cut = id.rfind('-');
    return cut == std::string::npos ? id : id.substr(0, cut);
}

// Matched twins travel through the split together so the task pool can be
// assembled from complete pairs.
std::array<Dataset, 3> split_matched(const Dataset& full, std::array<double, 3> fractions,
                                     uint64_t seed) {
    std::map<std::string, std::vector<size_t>> pairs;
    for (size_t i = 0; i < full.size(); ++i) pairs[pair_key(full.instances[i].id)].push_back(i);

    Dataset collapsed;
    collapsed.n = full.n;
    collapsed.group_vocab = {"pair"};
    collapsed.feature_names = full.feature_names;
    collapsed.norm = full.norm;
    collapsed.kind = full.kind;
    for (const auto& [key, twins] : pairs) {
        TaskInstance rep = full.instances[twins[0]];
        rep.id = key;
        rep.group = "pair";
        collapsed.instances.push_back(std::move(rep));
    }
    const auto parts = split(collapsed, fractions, seed);

    std::array<Dataset, 3> out;
    for (size_t s = 0; s < 3; ++s) {
        out[s].n = full.n;
        out[s].group_vocab = full.group_vocab;
        out[s].feature_names = full.feature_names;
        out[s].norm = full.norm;
        out[s].kind = full.kind;
        out[s].split_seed = seed;
        std::vector<size_t> idx;
        for (const auto& rep : parts[s].instances)
            for (size_t i : pairs.at(rep.id)) idx.push_back(i);
        std::sort(idx.begin(), idx.end());
        for (size_t i : idx) out[s].instances.push_back(full.instances[i]);
    }
    return out;
}

} // namespace

void stage_gen_data(const RunContext& ctx) {
    const RunConfig& cfg = ctx.cfg;
    const Provenance prov = provenance(ctx);

    Dataset full;
    Vec base_weights;
    std::string weight_source;
    if (cfg.task.source == "synthetic") {
        SynthConfig sc = cfg.task.synth;
        sc.kind = cfg.task.kind;
        SynthTask task = gen_synthetic(sc);
        full = std::move(task.dataset);
        base_weights = std::move(task.true_weights);
        weight_source = "synthetic";
    } else {
        full = load_csv(cfg.task.csv_path, cfg.task.csv_schema);
    }

    const bool matched = cfg.task.source == "synthetic" && cfg.task.synth.matched_pairs;
    auto parts = matched
                     ? split_matched(full, cfg.split_fractions, derive_seed(cfg.seed, {kSplitSeed}))
                     : split(full, cfg.split_fractions, derive_seed(cfg.seed, {kSplitSeed}));
    const Dataset& train = parts[0];
    const Dataset& calibration = parts[1];
    const Dataset& eval = parts[2];

    if (cfg.task.source == "csv") {
        // No generating rule exists for ingested data; a logistic fit stands
        // in as the simulated population's base decision rule.
        const LogisticModel lm = fit_logistic(train);
        base_weights = lm.weights;
        weight_source = "logistic_fit";
    }

    for (const char* rel : {artifact::dataset_train, artifact::dataset_calibration,
                            artifact::dataset_eval})
        ensure_parent(join(ctx.run_dir, rel));
    save_dataset_json(train, join(ctx.run_dir, artifact::dataset_train), &prov);
    save_dataset_json(calibration, join(ctx.run_dir, artifact::dataset_calibration), &prov);
    save_dataset_json(eval, join(ctx.run_dir, artifact::dataset_eval), &prov);

    write_json(json{{"format_version", 1},
                    {"config_hash", prov.config_hash},
                    {"seed", prov.seed},
                    {"source", weight_source},
                    {"weights", base_weights}},
               join(ctx.run_dir, artifact::base_weights));
}

// --- train-ai -----------------------------------------------------------------

namespace {

// Task pool for the participant-facing phases. Instances are drawn so that
// every (label, AI label) stratum contributes the same count to both groups:
// the AI's group-wise error rates on the pool are then identical by
// construction, and condition differences cannot hide behind pool sampling
// luck. (The reference studies control the same confound by regressing on
// the AI's fairness scores.)
Dataset balanced_task_pool(const Dataset& eval_split, const std::vector<Label>& ai_labels,
                           size_t pool_size, bool matched, uint64_t seed) {
    require(pool_size >= 1, "pool_size must be >= 1");
    const auto& vocab = eval_split.group_vocab;
    const size_t groups = vocab.size();
    if (groups != 2) throw StratificationError("balanced task pool needs exactly two groups");

    auto group_index = [&](const std::string& g) {
        return g == vocab[0] ? size_t{0} : size_t{1};
    };
    // strata: (y, y_m) in fixed order (-1,-1), (-1,+1), (+1,-1), (+1,+1)
    auto stratum_of = [](Label y, Label ym) {
        return (y.is_positive() ? 2 : 0) + (ym.is_positive() ? 1 : 0);
    };
    std::array<std::array<std::vector<size_t>, 2>, 4> members;
    if (matched) {
        // units are complete twin pairs; both twins share (y, y_m) because
        // their feature vectors are identical
        std::map<std::string, std::array<int, 2>> twins;
        for (size_t i = 0; i < eval_split.size(); ++i)
            twins.try_emplace(pair_key(eval_split.instances[i].id), std::array<int, 2>{-1, -1})
                .first->second[group_index(eval_split.instances[i].group)] = static_cast<int>(i);
        for (const auto& [key, pair] : twins) {
            if (pair[0] < 0 || pair[1] < 0)
                throw StratificationError("matched pool found an incomplete twin pair");
            const size_t a = static_cast<size_t>(pair[0]);
            const int s = stratum_of(eval_split.instances[a].label, ai_labels[a]);
            members[s][0].push_back(static_cast<size_t>(pair[0]));
            members[s][1].push_back(static_cast<size_t>(pair[1]));
        }
    } else {
        for (size_t i = 0; i < eval_split.size(); ++i) {
            const auto& inst = eval_split.instances[i];
            members[stratum_of(inst.label, ai_labels[i])][group_index(inst.group)].push_back(i);
        }
    }

    std::array<size_t, 4> cap{}, per_group{};
    for (int s = 0; s < 4; ++s)
        cap[s] = std::min(members[s][0].size(), members[s][1].size());
    if (cap[0] + cap[1] == 0 || cap[2] + cap[3] == 0)
        throw StratificationError("task pool needs both ground-truth classes in both groups");

    // one instance pair per eligible stratum, then grow proportionally
    size_t assigned = 0;
    for (int s = 0; s < 4; ++s)
        if (cap[s] > 0 && assigned + 2 <= pool_size) {
            per_group[s] = 1;
            assigned += 2;
        }
    while (true) {
        int best = -1;
        double best_need = 0.0;
        for (int s = 0; s < 4; ++s) {
            if (per_group[s] >= cap[s]) continue;
            if (assigned + 2 > pool_size) continue;
            const double size_s =
                static_cast<double>(members[s][0].size() + members[s][1].size());
            const double need = size_s / static_cast<double>(per_group[s] + 1);
            if (need > best_need) {
                best_need = need;
                best = s;
            }
        }
        if (best < 0) break;
        per_group[best]++;
        assigned += 2;
    }

    // an odd pool size places one extra instance in a y=+1 stratum, touching
    // only the FNR denominators; group-wise FPRs stay exactly balanced
    int odd_stratum = -1;
    size_t odd_group = 0;
    if (assigned < pool_size) {
        for (int s : {3, 2, 1, 0}) {
            for (size_t g = 0; g < 2; ++g)
                if (members[s][g].size() > per_group[s]) {
                    odd_stratum = s;
                    odd_group = g;
                    break;
                }
            if (odd_stratum >= 0) break;
        }
        if (odd_stratum < 0)
            throw StratificationError("eval split too small for the requested pool size");
    }

    std::vector<size_t> picked;
    for (int s = 0; s < 4; ++s) {
        if (matched) {
            // one shuffle of pair slots; twins enter together
            std::vector<size_t> slots(members[s][0].size());
            std::iota(slots.begin(), slots.end(), size_t{0});
            Rng rng(derive_seed(seed, {stream::pool, static_cast<uint64_t>(s)}));
            rng.shuffle(slots);
            for (size_t k = 0; k < per_group[s]; ++k) {
                picked.push_back(members[s][0][slots[k]]);
                picked.push_back(members[s][1][slots[k]]);
            }
            if (s == odd_stratum)
                picked.push_back(members[s][odd_group][slots[per_group[s]]]);
        } else {
            for (size_t g = 0; g < 2; ++g) {
                std::vector<size_t> pick_from = members[s][g];
                Rng rng(derive_seed(seed, {stream::pool, static_cast<uint64_t>(s), g}));
                rng.shuffle(pick_from);
                size_t take = per_group[s];
                if (s == odd_stratum && g == odd_group) take++;
                for (size_t k = 0; k < take; ++k) picked.push_back(pick_from[k]);
            }
        }
    }

    std::sort(picked.begin(), picked.end());
    Dataset pool;
    pool.n = eval_split.n;
    pool.group_vocab = eval_split.group_vocab;
    pool.feature_names = eval_split.feature_names;
    pool.norm = eval_split.norm;
    pool.kind = eval_split.kind;
    pool.split_seed = eval_split.split_seed;
    for (size_t i : picked) pool.instances.push_back(eval_split.instances[i]);
    return pool;
}

} // namespace

void stage_train_ai(const RunContext& ctx) {
    require_artifact(ctx, artifact::dataset_train, "gen-data");
    require_artifact(ctx, artifact::dataset_calibration, "gen-data");
    const Provenance prov = provenance(ctx);

    const Dataset train = load_dataset_json(join(ctx.run_dir, artifact::dataset_train));
    const ForestModel forest =
        train_forest(train, ctx.cfg.ai.num_trees, ctx.cfg.ai.max_depth,
                     derive_seed(ctx.cfg.seed, {kForestSeed}), ctx.threads);

    const Dataset calibration =
        load_dataset_json(join(ctx.run_dir, artifact::dataset_calibration));
    size_t correct = 0;
    for (const auto& inst : calibration.instances)
        if (predict(forest, inst.features).label == inst.label) correct++;
    const double holdout =
        static_cast<double>(correct) / static_cast<double>(calibration.size());

    require_artifact(ctx, artifact::dataset_eval, "gen-data");
    const Dataset eval_split = load_dataset_json(join(ctx.run_dir, artifact::dataset_eval));
    const std::vector<Label> eval_ai = pool_ai_labels(forest, eval_split);
    const bool matched =
        ctx.cfg.task.source == "synthetic" && ctx.cfg.task.synth.matched_pairs;
    // tasks with more than two groups fall back to plain (group x label)
    // stratification; the error-balanced design is pairwise by nature
    const Dataset pool =
        eval_split.group_vocab.size() == 2
            ? balanced_task_pool(eval_split, eval_ai,
                                 std::min(ctx.cfg.pool_size, eval_split.size()), matched,
                                 derive_seed(ctx.cfg.seed, {kPoolSeed}))
            : stratified_sample(eval_split, std::min(ctx.cfg.pool_size, eval_split.size()),
                                ctx.cfg.pool_min_per_cell,
                                derive_seed(ctx.cfg.seed, {kPoolSeed}));
    for (const auto& g : pool.group_vocab) {
        std::array<size_t, 2> by_label{0, 0};
        for (const auto& inst : pool.instances)
            if (inst.group == g) by_label[inst.label.is_positive() ? 1 : 0]++;
        if (by_label[0] < ctx.cfg.pool_min_per_cell || by_label[1] < ctx.cfg.pool_min_per_cell)
            throw StratificationError("task pool cell for group '" + g +
                                      "' fell below pool_min_per_cell");
    }

    ensure_parent(join(ctx.run_dir, artifact::forest));
    ensure_parent(join(ctx.run_dir, artifact::dataset_pool));
    save_forest_json(forest, join(ctx.run_dir, artifact::forest), &prov);
    save_dataset_json(pool, join(ctx.run_dir, artifact::dataset_pool), &prov);
    write_json(json{{"format_version", 1},
                    {"config_hash", prov.config_hash},
                    {"seed", prov.seed},
                    {"holdout_accuracy", holdout}},
               join(ctx.run_dir, artifact::ai_eval));
}

// --- explain -------------------------------------------------------------------

void stage_explain(const RunContext& ctx) {
    require_artifact(ctx, artifact::dataset_pool, "train-ai");
    require_artifact(ctx, artifact::dataset_train, "gen-data");
    require_artifact(ctx, artifact::forest, "train-ai");
    const Provenance prov = provenance(ctx);

    const Dataset pool = load_dataset_json(join(ctx.run_dir, artifact::dataset_pool));
    const Dataset train = load_dataset_json(join(ctx.run_dir, artifact::dataset_train));
    const ForestModel forest = load_forest_json(join(ctx.run_dir, artifact::forest));
    const ValueFn value = forest_value_fn(forest);

    const auto& ex = ctx.cfg.explainers;
    const std::vector<Vec> background = background_rows(train, ex.background_cap);
    const Vec bg_mean = background_mean(background);

    ShapleyOptions sopts{ex.shapley_max_n, ex.background_cap};
    const std::vector<Explanation> shap = shapley_batch(value, pool, background, sopts,
                                                        ctx.threads);
    LimeOptions lopts;
    lopts.num_samples = ex.lime_samples;
    lopts.kernel_width = ex.lime_kernel_width;
    lopts.ridge = ex.lime_ridge;
    const std::vector<LimeResult> lime =
        lime_batch(value, pool, bg_mean, lopts, derive_seed(ctx.cfg.seed, {kLimeSeed}),
                   ctx.threads);

    json arr = json::array();
    for (size_t i = 0; i < pool.size(); ++i) {
        arr.push_back(json{{"instance", pool.instances[i].id},
                           {"shapley", rescale_max_abs(shap[i]).attributions},
                           {"lime", rescale_max_abs(lime[i].explanation).attributions},
                           {"lime_r2", lime[i].r2}});
    }
    write_json(json{{"format_version", 1},
                    {"config_hash", prov.config_hash},
                    {"seed", prov.seed},
                    {"explanations", std::move(arr)}},
               join(ctx.run_dir, artifact::explanations));
}

// --- sim-log -------------------------------------------------------------------

void stage_sim_log(const RunContext& ctx) {
    require_artifact(ctx, artifact::dataset_pool, "train-ai");
    require_artifact(ctx, artifact::base_weights, "gen-data");
    require_artifact(ctx, artifact::forest, "train-ai");
    require_artifact(ctx, artifact::explanations, "explain");
    const Provenance prov = provenance(ctx);

    const Dataset pool = load_dataset_json(join(ctx.run_dir, artifact::dataset_pool));
    const ForestModel forest = load_forest_json(join(ctx.run_dir, artifact::forest));
    const PoolExplanations expl = load_pool_explanations(ctx);
    const Vec base_weights = load_base_weights(ctx);

    std::vector<InstanceExplanations> per_instance(pool.size());
    for (size_t i = 0; i < pool.size(); ++i)
        per_instance[i] = InstanceExplanations{expl.shapley[i], expl.lime[i]};

    PopulationConfig pc = ctx.cfg.sim.population;
    pc.num_dms = ctx.cfg.sim.train_population;
    const std::vector<SimDM> population =
        make_population(pc, base_weights, derive_seed(ctx.cfg.seed, {kTrainPopSeed}), "logdm");

    const std::vector<BehaviorRecord> records =
        generate_logs(population, pool, forest, per_instance, ctx.cfg.explainers.mix,
                      ctx.cfg.explainers.augment, derive_seed(ctx.cfg.seed, {kLogSeed}),
                      ctx.threads);

    ensure_parent(join(ctx.run_dir, artifact::behavior_log));
    save_behavior_log_json(records, join(ctx.run_dir, artifact::behavior_log), &prov);
    save_behavior_log_csv(records, join(ctx.run_dir, artifact::behavior_log_csv), &prov);
}

// --- train-behavior ------------------------------------------------------------

void stage_train_behavior(const RunContext& ctx) {
    require_artifact(ctx, artifact::behavior_log, "sim-log");
    const Provenance prov = provenance(ctx);

    const std::vector<BehaviorRecord> records =
        load_behavior_log_json(join(ctx.run_dir, artifact::behavior_log));

    BehaviorTrainConfig tc = ctx.cfg.behavior;
    tc.seed = derive_seed(ctx.cfg.seed, {kBehaviorSeed});
    const CvResult cv = cross_validate(records, ctx.cfg.cv_folds, tc);
    const BehaviorTrainResult trained = train_behavior(records, tc);

    ensure_parent(join(ctx.run_dir, artifact::behavior_model));
    save_behavior_json(trained.model, join(ctx.run_dir, artifact::behavior_model), &prov);
    write_json(json{{"format_version", 1},
                    {"config_hash", prov.config_hash},
                    {"seed", prov.seed},
                    {"mean_accuracy", cv.mean_accuracy},
                    {"fold_accuracies", cv.fold_accuracies},
                    {"final_train_loss", trained.final_loss},
                    {"epoch_losses", trained.epoch_losses},
                    {"class_collapse", trained.class_collapse}},
               join(ctx.run_dir, artifact::behavior_cv));
}

// --- manipulate ------------------------------------------------------------------

namespace {

// Benign targets fuse the AI label with the calibration population's majority
// independent decision through the fitted combiner.
Label majority_indep(const std::vector<SimDM>& population, const TaskInstance& inst,
                     Label tie_breaker) {
    int score = 0;
    for (const auto& dm : population) score += independent_decision(dm, inst).value();
    if (score == 0) return tie_breaker;
    return score > 0 ? Label::positive() : Label::negative();
}

} // namespace

void stage_manipulate(const RunContext& ctx) {
    require_artifact(ctx, artifact::dataset_pool, "train-ai");
    require_artifact(ctx, artifact::forest, "train-ai");
    require_artifact(ctx, artifact::behavior_model, "train-behavior");
    const Provenance prov = provenance(ctx);

    const Dataset pool = load_dataset_json(join(ctx.run_dir, artifact::dataset_pool));
    const ForestModel forest = load_forest_json(join(ctx.run_dir, artifact::forest));
    const BehaviorModel behavior = load_behavior_json(join(ctx.run_dir, artifact::behavior_model));
    const std::vector<Label> ai_labels = pool_ai_labels(forest, pool);

    std::vector<Label> targets(pool.size(), Label::positive());
    json combiner_json = json::object();

    if (ctx.cfg.targets.mode == "adversarial") {
        for (size_t i = 0; i < pool.size(); ++i)
            targets[i] = adversarial_target(pool.instances[i], ctx.cfg.targets.group_map);
    } else {
        require_artifact(ctx, artifact::dataset_calibration, "gen-data");
        require_artifact(ctx, artifact::base_weights, "gen-data");
        const Dataset calibration =
            load_dataset_json(join(ctx.run_dir, artifact::dataset_calibration));
        const Vec base_weights = load_base_weights(ctx);

        PopulationConfig pc = ctx.cfg.sim.population;
        pc.num_dms = ctx.cfg.sim.train_population;
        const std::vector<SimDM> calib_pop = make_population(
            pc, base_weights, derive_seed(ctx.cfg.seed, {kCalibPopSeed}), "caldm");

        std::vector<CalibrationTriple> triples;
        double h_correct = 0, m_correct = 0;
        for (const auto& inst : calibration.instances) {
            const Label ai = predict(forest, inst.features).label;
            for (const auto& dm : calib_pop) {
                const Label indep = independent_decision(dm, inst);
                triples.push_back(CalibrationTriple{inst.label, indep, ai});
                if (indep == inst.label) h_correct += 1.0;
                if (ai == inst.label) m_correct += 1.0;
            }
        }
        const CombineModel cm = fit_combiner(triples, ctx.cfg.targets.combiner_alpha);

        for (size_t i = 0; i < pool.size(); ++i) {
            const Label maj = majority_indep(calib_pop, pool.instances[i], ai_labels[i]);
            targets[i] = combine(cm, maj, ai_labels[i]);
        }

        const double count = static_cast<double>(triples.size());
        combiner_json = json{{"prior_pos", cm.prior_pos},
                             {"h_conf", {{cm.h_conf[0][0], cm.h_conf[0][1]},
                                         {cm.h_conf[1][0], cm.h_conf[1][1]}}},
                             {"m_conf", {{cm.m_conf[0][0], cm.m_conf[0][1]},
                                         {cm.m_conf[1][0], cm.m_conf[1][1]}}},
                             {"alpha", cm.alpha},
                             {"calibration_human_accuracy", h_correct / count},
                             {"calibration_ai_accuracy", m_correct / count}};
    }

    json tjson = json::array();
    for (size_t i = 0; i < pool.size(); ++i)
        tjson.push_back(json{{"instance", pool.instances[i].id},
                             {"ai_label", ai_labels[i].value()},
                             {"target", targets[i].value()}});
    write_json(json{{"format_version", 1},
                    {"config_hash", prov.config_hash},
                    {"seed", prov.seed},
                    {"mode", ctx.cfg.targets.mode},
                    {"combiner", std::move(combiner_json)},
                    {"targets", std::move(tjson)}},
               join(ctx.run_dir, artifact::targets));

    std::vector<ManipulationTask> tasks(pool.size());
    for (size_t i = 0; i < pool.size(); ++i)
        tasks[i] = ManipulationTask{&pool.instances[i], ai_labels[i], targets[i]};
    ManipulationConfig mc = ctx.cfg.manipulation;
    mc.seed = derive_seed(ctx.cfg.seed, {kManipSeed});
    const std::vector<ManipulationResult> results =
        manipulate_batch(behavior, tasks, mc, ctx.threads);

    std::vector<std::string> ids;
    for (const auto& inst : pool.instances) ids.push_back(inst.id);
    ensure_parent(join(ctx.run_dir, artifact::manipulated));
    save_manipulation_json(ids, results, join(ctx.run_dir, artifact::manipulated), &prov);
}

// --- evaluate --------------------------------------------------------------------

namespace {

json summary_of(const Summary& s) {
    return json{{"mean", s.mean}, {"ci_lo", s.ci_lo}, {"ci_hi", s.ci_hi}, {"count", s.count}};
}

json optional_to_json(const std::optional<double>& v) {
    return v ? json(*v) : json(nullptr);
}

// Fairness group order: built-in for the four named tasks; synthetic tasks
// read it off the adversarial group map (target -1 group first) or fall back
// to reversed vocabulary order.
std::pair<std::string, std::string> fairness_order(const RunConfig& cfg, const Dataset& pool) {
    if (pool.kind != TaskKind::synthetic) return fairness_group_order(pool.kind);
    std::string first, second;
    if (!cfg.targets.group_map.empty()) {
        for (const auto& [g, t] : cfg.targets.group_map) (t < 0 ? first : second) = g;
    } else if (pool.group_vocab.size() >= 2) {
        first = pool.group_vocab[1];
        second = pool.group_vocab[0];
    }
    return {first, second};
}

struct ConditionMetrics {
    // Per-participant values; undefined entries are counted, never zeroed.
    std::vector<double> fprd, fnrd, accuracy, overreliance, underreliance;
    size_t fprd_undefined = 0, fnrd_undefined = 0;
    size_t over_undefined = 0, under_undefined = 0;
    FairnessDiff pooled_fairness;
    RelianceStats pooled_reliance;
};

} // namespace

void stage_evaluate(const RunContext& ctx) {
    require_artifact(ctx, artifact::dataset_pool, "train-ai");
    require_artifact(ctx, artifact::dataset_calibration, "gen-data");
    require_artifact(ctx, artifact::base_weights, "gen-data");
    require_artifact(ctx, artifact::forest, "train-ai");
    require_artifact(ctx, artifact::explanations, "explain");
    require_artifact(ctx, artifact::behavior_cv, "train-behavior");
    require_artifact(ctx, artifact::manipulated, "manipulate");
    const Provenance prov = provenance(ctx);
    const RunConfig& cfg = ctx.cfg;

    const Dataset pool = load_dataset_json(join(ctx.run_dir, artifact::dataset_pool));
    const ForestModel forest = load_forest_json(join(ctx.run_dir, artifact::forest));
    const PoolExplanations expl = load_pool_explanations(ctx);
    const auto manipulated = load_manipulation_json(join(ctx.run_dir, artifact::manipulated));
    const Vec base_weights = load_base_weights(ctx);
    const std::vector<Label> ai_labels = pool_ai_labels(forest, pool);
    const auto [group_first, group_second] = fairness_order(cfg, pool);

    std::map<std::string, Explanation> manip_by_id;
    for (const auto& [id, res] : manipulated) manip_by_id[id] = res.explanation;

    PopulationConfig pc = cfg.sim.population;
    pc.num_dms = cfg.sim.eval_population;
    const std::vector<SimDM> population =
        make_population(pc, base_weights, derive_seed(cfg.seed, {kEvalPopSeed}), "evaldm");

    ensure_parent(join(ctx.run_dir, artifact::decisions_csv));
    std::ofstream dec_csv(join(ctx.run_dir, artifact::decisions_csv));
    if (!dec_csv) throw StageError("cannot write decisions csv");
    dec_csv << "# xnudge format_version=1 config_hash=" << prov.config_hash << " seed="
            << prov.seed << '\n';
    dec_csv << "condition,dm,instance,group,y,y_m,y_h\n";

    std::ofstream mcsv(join(ctx.run_dir, artifact::metrics_csv));
    if (!mcsv) throw StageError("cannot write metrics csv");
    mcsv << "# xnudge format_version=1 config_hash=" << prov.config_hash << " seed=" << prov.seed
         << '\n';
    mcsv << "condition,dm,fprd,fnrd,accuracy,overreliance,underreliance\n";
    auto na_cell = [&](const std::optional<double>& v) {
        return v ? fmt_double(*v) : std::string("NA");
    };

    std::map<std::string, ConditionMetrics> metrics;
    for (const std::string& condition : cfg.eval.conditions) {
        auto& cm = metrics[condition];
        std::vector<DecisionOutcome> all;
        for (const auto& dm : population) {
            std::vector<DecisionOutcome> mine;
            for (size_t i = 0; i < pool.size(); ++i) {
                const TaskInstance& inst = pool.instances[i];
                const Explanation* shown = nullptr;
                if (condition == "shapley") {
                    shown = &expl.shapley[i];
                } else if (condition == "lime") {
                    shown = &expl.lime[i];
                } else {
                    auto it = manip_by_id.find(inst.id);
                    if (it == manip_by_id.end())
                        throw StageError("no manipulated explanation for instance '" + inst.id +
                                         "'; run manipulate first");
                    shown = &it->second;
                }
                const Label human = assisted_decision(dm, inst, ai_labels[i], *shown);
                DecisionOutcome d{dm.id, inst.id, inst.group, inst.label, ai_labels[i], human};
                dec_csv << condition << ',' << d.dm_id << ',' << d.instance_id << ',' << d.group
                        << ',' << d.truth.value() << ',' << d.ai.value() << ','
                        << d.human.value() << '\n';
                mine.push_back(d);
                all.push_back(std::move(d));
            }

            const FairnessDiff fd = fairness_diff(mine, group_first, group_second);
            if (fd.fprd)
                cm.fprd.push_back(*fd.fprd);
            else
                cm.fprd_undefined++;
            if (fd.fnrd)
                cm.fnrd.push_back(*fd.fnrd);
            else
                cm.fnrd_undefined++;

            const RelianceStats rs = reliance(mine);
            cm.accuracy.push_back(rs.accuracy);
            if (rs.overreliance)
                cm.overreliance.push_back(*rs.overreliance);
            else
                cm.over_undefined++;
            if (rs.underreliance)
                cm.underreliance.push_back(*rs.underreliance);
            else
                cm.under_undefined++;

            mcsv << condition << ',' << dm.id << ',' << na_cell(fd.fprd) << ','
                 << na_cell(fd.fnrd) << ',' << fmt_double(rs.accuracy) << ','
                 << na_cell(rs.overreliance) << ',' << na_cell(rs.underreliance) << '\n';
        }
        cm.pooled_fairness = fairness_diff(all, group_first, group_second);
        cm.pooled_reliance = reliance(all);
    }
    dec_csv.close();
    mcsv.close();

    // Combiner check on held-out pairs: eval population x eval split (the
    // pool is stratification-rebalanced, so it is not distribution-matched),
    // with the combiner fitted on the calibration population and split.
    json combiner_eval = json::object();
    {
        require_artifact(ctx, artifact::dataset_eval, "gen-data");
        const Dataset eval_split = load_dataset_json(join(ctx.run_dir, artifact::dataset_eval));
        const Dataset calibration =
            load_dataset_json(join(ctx.run_dir, artifact::dataset_calibration));
        PopulationConfig cpc = cfg.sim.population;
        cpc.num_dms = cfg.sim.train_population;
        const std::vector<SimDM> calib_pop = make_population(
            cpc, base_weights, derive_seed(cfg.seed, {kCalibPopSeed}), "caldm");
        std::vector<CalibrationTriple> fit_triples;
        for (const auto& inst : calibration.instances) {
            const Label ai = predict(forest, inst.features).label;
            for (const auto& dm : calib_pop)
                fit_triples.push_back(
                    CalibrationTriple{inst.label, independent_decision(dm, inst), ai});
        }
        const CombineModel cm = fit_combiner(fit_triples, cfg.targets.combiner_alpha);
        double ch = 0, cmdl = 0;
        for (const auto& t : fit_triples) {
            if (t.human_indep == t.truth) ch += 1.0;
            if (t.ai == t.truth) cmdl += 1.0;
        }
        const double calib_h_acc = ch / static_cast<double>(fit_triples.size());
        const double calib_m_acc = cmdl / static_cast<double>(fit_triples.size());

        double n_pairs = 0, human_ok = 0, ai_ok = 0, comb_ok = 0, vote_ok = 0;
        for (const auto& inst : eval_split.instances) {
            const Label ai = predict(forest, inst.features).label;
            for (const auto& dm : population) {
                const Label indep = independent_decision(dm, inst);
                const Label fused = combine(cm, indep, ai);
                const Label voted = weighted_vote_baseline(indep, ai, calib_h_acc, calib_m_acc);
                n_pairs += 1.0;
                if (indep == inst.label) human_ok += 1.0;
                if (ai == inst.label) ai_ok += 1.0;
                if (fused == inst.label) comb_ok += 1.0;
                if (voted == inst.label) vote_ok += 1.0;
            }
        }
        combiner_eval = json{{"human_solo_accuracy", human_ok / n_pairs},
                             {"ai_accuracy", ai_ok / n_pairs},
                             {"combine_accuracy", comb_ok / n_pairs},
                             {"weighted_vote_accuracy", vote_ok / n_pairs},
                             {"calibration_human_accuracy", calib_h_acc},
                             {"calibration_ai_accuracy", calib_m_acc},
                             {"pairs", n_pairs}};
    }

    json conditions_json = json::object();
    for (const std::string& condition : cfg.eval.conditions) {
        const auto& cm = metrics[condition];
        conditions_json[condition] =
            json{{"fprd", summary_of(summarize(cm.fprd))},
                 {"fnrd", summary_of(summarize(cm.fnrd))},
                 {"accuracy", summary_of(summarize(cm.accuracy))},
                 {"overreliance", summary_of(summarize(cm.overreliance))},
                 {"underreliance", summary_of(summarize(cm.underreliance))},
                 {"undefined",
                  {{"fprd", cm.fprd_undefined},
                   {"fnrd", cm.fnrd_undefined},
                   {"overreliance", cm.over_undefined},
                   {"underreliance", cm.under_undefined}}},
                 {"pooled",
                  {{"fprd", optional_to_json(cm.pooled_fairness.fprd)},
                   {"fnrd", optional_to_json(cm.pooled_fairness.fnrd)},
                   {"accuracy", cm.pooled_reliance.accuracy},
                   {"overreliance", optional_to_json(cm.pooled_reliance.overreliance)},
                   {"underreliance", optional_to_json(cm.pooled_reliance.underreliance)}}}};
    }

    json tests_json = json::object();
    if (metrics.count("manipulated") > 0) {
        const auto& manip = metrics.at("manipulated");
        uint64_t test_no = 0;
        for (const std::string& other : cfg.eval.conditions) {
            if (other == "manipulated") continue;
            const auto& base = metrics.at(other);
            json t = json::object();
            auto add_test = [&](const char* name, const std::vector<double>& a,
                                const std::vector<double>& b) {
                test_no++;
                if (a.empty() || b.empty()) {
                    t[name] = nullptr;
                    return;
                }
                t[name] = permutation_test(a, b, cfg.eval.num_perms,
                                           derive_seed(cfg.seed, {kPermSeed, test_no}));
            };
            add_test("fprd", manip.fprd, base.fprd);
            add_test("fnrd", manip.fnrd, base.fnrd);
            add_test("accuracy", manip.accuracy, base.accuracy);
            add_test("overreliance", manip.overreliance, base.overreliance);
            add_test("underreliance", manip.underreliance, base.underreliance);
            tests_json["manipulated_vs_" + other] = std::move(t);
        }
    }

    double frac_feasible = 0.0, frac_converged = 0.0, mean_rounds = 0.0;
    {
        double total = 0, feas = 0, conv = 0, rounds = 0, restarts = 0;
        for (const auto& [id, res] : manipulated) {
            total += 1.0;
            if (res.feasible) feas += 1.0;
            for (const auto& ro : res.restarts) {
                restarts += 1.0;
                rounds += ro.rounds_used;
                if (ro.converged) conv += 1.0;
            }
        }
        if (total > 0) frac_feasible = feas / total;
        if (restarts > 0) {
            frac_converged = conv / restarts;
            mean_rounds = rounds / restarts;
        }
    }

    const json ai_eval = read_json(join(ctx.run_dir, artifact::ai_eval));
    const json cv = read_json(join(ctx.run_dir, artifact::behavior_cv));

    write_json(
        json{{"format_version", 1},
             {"config_hash", prov.config_hash},
             {"seed", prov.seed},
             {"task_kind", to_string(cfg.task.kind)},
             {"target_mode", cfg.targets.mode},
             {"participants_per_condition", cfg.sim.eval_population},
             {"tasks_per_participant", pool.size()},
             {"fairness_order", {group_first, group_second}},
             {"ai", {{"holdout_accuracy", ai_eval.at("holdout_accuracy")}}},
             {"behavior_cv",
              {{"mean_accuracy", cv.at("mean_accuracy")},
               {"fold_accuracies", cv.at("fold_accuracies")}}},
             {"manipulation",
              {{"fraction_feasible", frac_feasible},
               {"fraction_converged", frac_converged},
               {"mean_rounds", mean_rounds}}},
             {"combiner", std::move(combiner_eval)},
             {"conditions", std::move(conditions_json)},
             {"tests", std::move(tests_json)}},
        join(ctx.run_dir, artifact::summary));
}

// --- report -----------------------------------------------------------------------

void stage_report(const RunContext& ctx, std::ostream& out) {
    require_artifact(ctx, artifact::summary, "evaluate");
    require_artifact(ctx, artifact::metrics_csv, "evaluate");
    const json summary = read_json(join(ctx.run_dir, artifact::summary));

    // Plot-ready long format from the metrics CSV.
    {
        std::ifstream in(join(ctx.run_dir, artifact::metrics_csv));
        std::ofstream lcsv(join(ctx.run_dir, artifact::long_csv));
        if (!lcsv) throw StageError("cannot write long csv");
        lcsv << "# xnudge format_version=1 config_hash="
             << summary.at("config_hash").get<std::string>() << " seed="
             << summary.at("seed").get<uint64_t>() << '\n';
        lcsv << "condition,dm,metric,value\n";
        std::string line;
        std::getline(in, line); // provenance comment
        std::getline(in, line); // header
        const std::vector<std::string> names{"fprd", "fnrd", "accuracy", "overreliance",
                                             "underreliance"};
        while (std::getline(in, line)) {
            std::vector<std::string> cells;
            std::stringstream ss(line);
            std::string cell;
            while (std::getline(ss, cell, ',')) cells.push_back(cell);
            if (cells.size() != 7) continue;
            for (size_t m = 0; m < names.size(); ++m)
                if (cells[2 + m] != "NA")
                    lcsv << cells[0] << ',' << cells[1] << ',' << names[m] << ',' << cells[2 + m]
                         << '\n';
        }
    }

    out << "run " << ctx.run_dir << '\n';
    out << "task " << summary.at("task_kind").get<std::string>() << ", mode "
        << summary.at("target_mode").get<std::string>() << ", "
        << summary.at("participants_per_condition").get<size_t>() << " participants x "
        << summary.at("tasks_per_participant").get<size_t>() << " tasks per condition\n";
    out << "AI holdout accuracy " << std::fixed << std::setprecision(3)
        << summary.at("ai").at("holdout_accuracy").get<double>() << ", behavior CV accuracy "
        << summary.at("behavior_cv").at("mean_accuracy").get<double>() << "\n\n";

    out << std::left << std::setw(14) << "condition" << std::right << std::setw(9) << "fprd"
        << std::setw(9) << "fnrd" << std::setw(10) << "accuracy" << std::setw(9) << "over"
        << std::setw(9) << "under" << '\n';
    for (auto it = summary.at("conditions").begin(); it != summary.at("conditions").end(); ++it) {
        const json& c = it.value();
        auto cell = [&](const char* key) {
            const json& s = c.at(key);
            if (s.at("count").get<size_t>() == 0) return std::string("      NA");
            std::ostringstream os;
            os << std::fixed << std::setprecision(3) << std::setw(8)
               << s.at("mean").get<double>();
            return os.str();
        };
        out << std::left << std::setw(14) << it.key() << std::right << cell("fprd") << ' '
            << cell("fnrd") << ' ' << cell("accuracy") << "  " << cell("overreliance") << ' '
            << cell("underreliance") << '\n';
    }

    if (!summary.at("tests").empty()) {
        out << "\npermutation tests (p-values):\n";
        for (auto it = summary.at("tests").begin(); it != summary.at("tests").end(); ++it) {
            out << "  " << it.key() << ":";
            for (auto mt = it.value().begin(); mt != it.value().end(); ++mt) {
                out << ' ' << mt.key() << '=';
                if (mt.value().is_null())
                    out << "NA";
                else
                    out << std::fixed << std::setprecision(4) << mt.value().get<double>();
            }
            out << '\n';
        }
    }

    const json& comb = summary.at("combiner");
    if (!comb.empty()) {
        out << "\ncombiner: human " << std::fixed << std::setprecision(3)
            << comb.at("human_solo_accuracy").get<double>() << ", ai "
            << comb.at("ai_accuracy").get<double>() << ", combined "
            << comb.at("combine_accuracy").get<double>() << ", weighted vote "
            << comb.at("weighted_vote_accuracy").get<double>() << '\n';
    }
}

void run_experiment(const RunContext& ctx, std::ostream& out) {
    struct StageDef {
        const char* name;
        void (*fn)(const RunContext&);
    };
    const StageDef stages[] = {
        {"gen-data", stage_gen_data},       {"train-ai", stage_train_ai},
        {"explain", stage_explain},         {"sim-log", stage_sim_log},
        {"train-behavior", stage_train_behavior}, {"manipulate", stage_manipulate},
        {"evaluate", stage_evaluate},
    };
    for (const auto& stage : stages) {
        try {
            stage.fn(ctx);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError("stage '" + std::string(stage.name) + "' failed: " + e.what());
        }
    }
    stage_report(ctx, out);
}

} // namespace xnudge
