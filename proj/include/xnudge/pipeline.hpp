#pragma once

#include <iosfwd>
#include <string>

#include "xnudge/config.hpp"

namespace xnudge {

/// A run directory is keyed by config hash + seed; stages communicate only
/// through the documented JSON/CSV artifacts inside it.
struct RunContext {
    RunConfig cfg;
    std::string run_dir;
    int threads = 1;
};

std::string run_dir_for(const RunConfig& cfg, const std::string& out_dir);
RunContext make_context(const RunConfig& cfg, const std::string& out_dir, int threads_override);

/// Artifact locations, relative to the run directory.
namespace artifact {
inline constexpr const char* config = "config.json";
inline constexpr const char* dataset_train = "data/train.json";
inline constexpr const char* dataset_calibration = "data/calibration.json";
inline constexpr const char* dataset_eval = "data/eval.json";
inline constexpr const char* dataset_pool = "data/pool.json";
inline constexpr const char* base_weights = "data/base_weights.json";
inline constexpr const char* forest = "models/forest.json";
inline constexpr const char* ai_eval = "models/ai_eval.json";
inline constexpr const char* explanations = "explanations/pool.json";
inline constexpr const char* behavior_log = "logs/behavior.json";
inline constexpr const char* behavior_log_csv = "logs/behavior.csv";
inline constexpr const char* behavior_model = "models/behavior.json";
inline constexpr const char* behavior_cv = "models/behavior_cv.json";
inline constexpr const char* targets = "targets/targets.json";
inline constexpr const char* manipulated = "manipulated/results.json";
inline constexpr const char* decisions_csv = "eval/decisions.csv";
inline constexpr const char* metrics_csv = "eval/metrics.csv";
inline constexpr const char* summary = "eval/summary.json";
inline constexpr const char* long_csv = "eval/long.csv";
} // namespace artifact

// Pipeline stages. Each reads only upstream artifacts and fails with a
// StageError naming the producing subcommand when one is missing.
void stage_gen_data(const RunContext& ctx);
void stage_train_ai(const RunContext& ctx);
void stage_explain(const RunContext& ctx);
void stage_sim_log(const RunContext& ctx);
void stage_train_behavior(const RunContext& ctx);
void stage_manipulate(const RunContext& ctx); // assigns targets, then optimizes
void stage_evaluate(const RunContext& ctx);
void stage_report(const RunContext& ctx, std::ostream& out);

/// Full pipeline: gen-data through report.
void run_experiment(const RunContext& ctx, std::ostream& out);

} // namespace xnudge
