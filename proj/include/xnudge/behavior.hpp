#pragma once

#include <string>
#include <vector>

#include "xnudge/data.hpp"

namespace xnudge {

struct BehaviorTrainConfig {
    double learning_rate = 1e-4;
    int batch_size = 128;
    int epochs = 10;
    int hidden_dim = 64;
    double init_scale = 0.01;
    uint64_t seed = 0;
};

/// Two-layer network mapping [x, y_m, e, x*e] to P(y_h = +1).
struct BehaviorModel {
    size_t n = 0;    // task feature dimension
    int hidden = 0;
    Vec w1;          // hidden x (3n+1), row-major
    Vec b1;          // hidden
    Vec w2;          // hidden
    double b2 = 0.0;
    BehaviorTrainConfig config;

    size_t input_dim() const { return 3 * n + 1; }
};

/// Fixed input order: x, y_m, e, x*e (elementwise product).
Vec encode(const Vec& x, Label y_m, const Vec& e);

double forward_logit(const BehaviorModel& m, const Vec& encoded);
/// P(y_h = +1), clamped inside (0,1).
double forward(const BehaviorModel& m, const Vec& encoded);
Label predict_label(const BehaviorModel& m, const Vec& encoded);

/// Cross-entropy of the logit against a +/-1 target, numerically stable.
double bce_loss(double logit, Label target);

/// d(bce)/d(encoded input); used by the finite-difference checks and the
/// explanation optimizer.
Vec input_gradient(const BehaviorModel& m, const Vec& encoded, Label target);

/// Flat parameter access in the fixed order w1, b1, w2, b2 (for gradient
/// verification).
Vec flatten_params(const BehaviorModel& m);
void unflatten_params(BehaviorModel& m, const Vec& flat);
/// Gradient of the mean BCE over a record batch wrt the flat parameters.
Vec param_gradient(const BehaviorModel& m, const std::vector<Vec>& encoded,
                   const std::vector<Label>& targets);

struct BehaviorTrainResult {
    BehaviorModel model;
    double final_loss = 0.0;
    long optimizer_steps = 0;
    bool class_collapse = false;         // all records carry one label
    std::vector<double> epoch_losses;    // full training-set loss per epoch
};

/// Maximum-likelihood training with the adaptive-moment optimizer
/// (0.9/0.999, eps 1e-8). Single-threaded and deterministic given the seed.
BehaviorTrainResult train_behavior(const std::vector<BehaviorRecord>& records,
                                   const BehaviorTrainConfig& config);

struct CvResult {
    double mean_accuracy = 0.0;
    std::vector<double> fold_accuracies;
    std::vector<size_t> fold_sizes;
};

/// Stratified k-fold cross-validation (stratified on the human label).
CvResult cross_validate(const std::vector<BehaviorRecord>& records, int k,
                        const BehaviorTrainConfig& config);

void save_behavior_json(const BehaviorModel& m, const std::string& path,
                        const Provenance* prov = nullptr);
BehaviorModel load_behavior_json(const std::string& path);

} // namespace xnudge
