#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "xnudge/behavior.hpp"
#include "xnudge/data.hpp"
#include "xnudge/explain.hpp"
#include "xnudge/manipulate.hpp"
#include "xnudge/simdm.hpp"

#include <nlohmann/json_fwd.hpp>

namespace xnudge {

/// Versioned run configuration; every experiment hyperparameter is a key
/// here so runs are fully reproducible from the file.
struct RunConfig {
    int schema_version = 1;
    uint64_t seed = 42;
    int threads = 0; // 0: all available; results are thread-count independent

    struct Task {
        TaskKind kind = TaskKind::census;
        std::string source = "synthetic"; // "synthetic" | "csv"
        std::string csv_path;
        CsvSchema csv_schema;
        SynthConfig synth; // kind mirrored from task.kind at load
    } task;

    std::array<double, 3> split_fractions{0.5, 0.25, 0.25}; // train/calibration/eval
    size_t pool_size = 15;       // tasks each participant completes
    size_t pool_min_per_cell = 2; // per (group x label) cell in the pool

    struct Ai {
        int num_trees = 100;
        int max_depth = 8;
    } ai;

    struct Explainers {
        size_t shapley_max_n = 15;
        size_t background_cap = 64;
        size_t lime_samples = 0; // 0: 50 * n
        double lime_kernel_width = 0.75;
        double lime_ridge = 1e-3;
        AugmentParams augment;
        ExplainerMix mix{0.4, 0.3, 0.3}; // behavior-log collection arms
    } explainers;

    BehaviorTrainConfig behavior;
    int cv_folds = 5;

    struct Sim {
        size_t train_population = 80; // log-collection participants
        size_t eval_population = 60;  // evaluation participants per condition
        PopulationConfig population;
    } sim;

    ManipulationConfig manipulation;

    struct Targets {
        std::string mode = "adversarial"; // "adversarial" | "benign"
        std::map<std::string, int> group_map; // synthetic-task adversarial targets
        double combiner_alpha = 1.0;
    } targets;

    struct Eval {
        std::vector<std::string> conditions{"shapley", "lime", "manipulated"};
        int num_perms = 10000;
    } eval;

    void validate() const; // throws ConfigError with the offending field path
};

RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& cfg);

RunConfig load_config_file(const std::string& path);

/// FNV-1a over the canonical JSON dump; keys run directories and artifact
/// provenance.
std::string config_hash(const RunConfig& cfg);

} // namespace xnudge
