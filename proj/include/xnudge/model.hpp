#pragma once

#include <functional>
#include <string>
#include <vector>

#include "xnudge/data.hpp"

namespace xnudge {

struct Prediction {
    Label label;
    double prob; // P(+1): vote fraction for forests, sigmoid for logistic
};

// --- Random forest ----------------------------------------------------------

/// Axis-aligned split node; feature < 0 marks a leaf. Leaves keep the class
/// counts they saw in training.
struct TreeNode {
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double count_neg = 0.0;
    double count_pos = 0.0;
    bool is_leaf() const { return feature < 0; }
};

struct DecisionTree {
    std::vector<TreeNode> nodes;
    Label vote(const Vec& x) const;
};

struct ForestModel {
    std::vector<DecisionTree> trees;
    size_t feature_dim = 0;
    int max_depth = 0;
    uint64_t train_seed = 0;
    bool constant_model = false; // single-class training set
};

/// Bootstrap-sampled trees, Gini splits, ceil(sqrt(n)) random features per
/// split. Per-tree derived seeds make the result identical for any thread
/// count. A single-class training set yields a constant model and a warning
/// on stderr.
ForestModel train_forest(const Dataset& train, int num_trees, int max_depth, uint64_t seed,
                         int threads = 1);

Prediction predict(const ForestModel& model, const Vec& x);

// --- Logistic model ---------------------------------------------------------

struct LogisticModel {
    Vec weights;
    double bias = 0.0;
};

Prediction predict(const LogisticModel& model, const Vec& x);
double linear_score(const LogisticModel& model, const Vec& x);

/// Deterministic full-batch gradient-descent fit; used as an analytic oracle
/// and to give simulated decision makers base weights on ingested data.
LogisticModel fit_logistic(const Dataset& train, double learning_rate = 0.5, int iterations = 500,
                           double l2 = 1e-4);

// --- Persistence ------------------------------------------------------------

void save_forest_json(const ForestModel& model, const std::string& path,
                      const Provenance* prov = nullptr);
ForestModel load_forest_json(const std::string& path);

} // namespace xnudge
