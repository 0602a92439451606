#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xnudge/common.hpp"

namespace xnudge {

enum class TaskKind { census, recidivism, bias, toxicity, synthetic };

std::string to_string(TaskKind k);
TaskKind task_kind_from_string(const std::string& s);

enum class ExplKind { shapley, lime, augmented, manipulated };

std::string to_string(ExplKind k);
ExplKind expl_kind_from_string(const std::string& s);

/// Per-feature signed attribution aligned with an instance's feature vector.
struct Explanation {
    Vec attributions;
    ExplKind kind = ExplKind::shapley;
};

/// One decision task: normalized feature vector, ground truth and group tag.
struct TaskInstance {
    std::string id;
    Vec features;
    Label label;
    std::string group;
    TaskKind kind = TaskKind::synthetic;
};

/// One observed decision episode: what the decision maker saw and chose.
struct BehaviorRecord {
    TaskInstance instance;
    Label ai_label;
    Explanation explanation;
    Label human_label;
    std::string dm_id; // provenance only, never a model input
};

/// Per-column min-max parameters; kept so later data can be mapped to the
/// same [0,1] scale.
struct Normalization {
    Vec col_min;
    Vec col_max;
    bool empty() const { return col_min.empty(); }
};

struct Dataset {
    std::vector<TaskInstance> instances;
    size_t n = 0;
    std::vector<std::string> group_vocab;
    std::vector<std::string> feature_names;
    Normalization norm;
    TaskKind kind = TaskKind::synthetic;
    uint64_t split_seed = 0;

    size_t size() const { return instances.size(); }
    bool has_group(const std::string& g) const;
};

// --- CSV ingestion ---------------------------------------------------------

struct ColumnSpec {
    std::string name;
    bool categorical = false;
};

struct CsvSchema {
    std::vector<ColumnSpec> feature_columns;
    std::string label_column;
    std::string group_column;
    std::string id_column;           // empty: ids are row numbers
    bool labels_zero_one = false;    // explicit opt-in remap {0,1} -> {-1,+1}
    std::vector<std::string> group_vocab;
    TaskKind kind = TaskKind::synthetic;
};

/// Load a headered CSV, one-hot encode categorical feature columns, min-max
/// normalize every encoded column to [0,1] (zero-range columns map to 0.0)
/// and keep the normalization parameters on the returned dataset.
Dataset load_csv(const std::string& path, const CsvSchema& schema);

/// Recompute min-max parameters from the data and rescale in place.
void normalize(Dataset& ds);

/// Map a raw feature vector through stored parameters.
Vec apply_normalization(const Normalization& norm, const Vec& raw);

/// Deterministic, group-stratified three-way partition. Fractions must be
/// positive and sum to 1 within 1e-9; every split must receive at least one
/// instance of every group.
std::array<Dataset, 3> split(const Dataset& ds, std::array<double, 3> fractions, uint64_t seed);

/// Deterministic stratified subsample over (group x label) cells, each cell
/// receiving at least min_per_cell instances.
Dataset stratified_sample(const Dataset& ds, size_t count, size_t min_per_cell, uint64_t seed);

// --- Persistence -----------------------------------------------------------

void save_dataset_json(const Dataset& ds, const std::string& path,
                       const Provenance* prov = nullptr);
Dataset load_dataset_json(const std::string& path);

void save_behavior_log_json(const std::vector<BehaviorRecord>& records, const std::string& path,
                            const Provenance* prov = nullptr);
std::vector<BehaviorRecord> load_behavior_log_json(const std::string& path);
void save_behavior_log_csv(const std::vector<BehaviorRecord>& records, const std::string& path,
                           const Provenance* prov = nullptr);

// --- Synthetic tasks -------------------------------------------------------

/// Synthetic task generator: features uniform on [0,1], labels from a linear
/// rule with flip noise, group tags independent of the label rule so the
/// unmanipulated baseline is fair by construction.
struct SynthConfig {
    TaskKind kind = TaskKind::synthetic;
    size_t num_instances = 400;
    size_t num_features = 6;
    double label_flip_prob = 0.1;
    bool group_as_feature = false; // feature 0 mirrors the group tag (weight 0)
    // Audit-study design: instances come in twins identical except for the
    // group tag, so unmanipulated conditions cannot separate the groups.
    bool matched_pairs = false;
    std::vector<std::string> group_vocab = {"A", "B"};
    uint64_t seed = 1;
};

/// Task-kind presets: census 7 features, recidivism 8, text tasks 10.
SynthConfig default_synth_config(TaskKind kind);

struct SynthTask {
    Dataset dataset;
    Vec true_weights; // generating weights; sim-population ground truth
};

SynthTask gen_synthetic(const SynthConfig& cfg);

} // namespace xnudge
