#pragma once

#include <string>
#include <vector>

#include "xnudge/behavior.hpp"
#include "xnudge/data.hpp"

namespace xnudge {

struct ManipulationConfig {
    double step_size = 0.01;   // eta
    double tradeoff = 0.01;    // lambda
    double threshold = 0.1;    // tau, applied per instance
    int max_rounds = 100;      // T
    int restarts = 5;
    double init_low = -1.0;
    double init_high = 1.0;
    double hinge_margin = 0.05;
    uint64_t seed = 0;

    void validate() const;
};

/// Exact agreement indicator: 0 iff sign(sum e_i) = sign(y_m). A zero sum
/// supports neither label and counts as inconsistent.
int consistency_loss(const Vec& e, Label y_m);

/// Differentiable relaxation max(0, margin - y_m * sum e_i). Zero with a
/// positive margin implies the exact indicator is zero.
double consistency_surrogate(const Vec& e, Label y_m, double margin);

/// Gradient of the composite objective (behavior loss + tradeoff * surrogate)
/// with respect to e; the direction the optimizer steps along.
Vec manipulation_gradient(const BehaviorModel& behavior, const Vec& x, Label y_m, Label target,
                          const Vec& e, const ManipulationConfig& config);

struct RestartOutcome {
    Vec explanation;
    std::vector<double> loss_trace; // behavior loss after each round
    int rounds_used = 0;
    bool converged = false; // reached loss < threshold
    bool feasible = false;  // exact indicator on this restart's output
    bool aborted = false;   // non-finite gradient
    int descent_violations = 0; // composite loss rose while the hinge was silent
    double final_loss = 0.0;
};

struct ManipulationResult {
    Explanation explanation;       // averaged, rescaled to max-abs 1
    bool feasible = false;         // exact indicator after averaging + rescaling
    double final_behavior_loss = 0.0; // behavior loss of the shipped explanation
    int restarts_feasible = 0;
    std::vector<RestartOutcome> restarts;
};

/// Gradient-descent search for an explanation that drives the behavior model
/// toward the target label while keeping sign-consistency with y_m. Feasible
/// restarts are averaged elementwise; if none is feasible the lowest-loss
/// restart is returned with feasible=false.
ManipulationResult manipulate(const BehaviorModel& behavior, const Vec& x, Label y_m, Label target,
                              const ManipulationConfig& config);

struct ManipulationTask {
    const TaskInstance* instance;
    Label ai_label;
    Label target;
};

/// Batch kernel, parallel across instances; per-instance seeds are derived
/// from the instance id so results do not depend on ordering or threads.
std::vector<ManipulationResult> manipulate_batch(const BehaviorModel& behavior,
                                                 const std::vector<ManipulationTask>& tasks,
                                                 const ManipulationConfig& config, int threads);

void save_manipulation_json(const std::vector<std::string>& instance_ids,
                            const std::vector<ManipulationResult>& results,
                            const std::string& path, const Provenance* prov = nullptr);
std::vector<std::pair<std::string, ManipulationResult>> load_manipulation_json(
    const std::string& path);

} // namespace xnudge
