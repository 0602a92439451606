#pragma once

#include <string>
#include <vector>

#include "xnudge/data.hpp"
#include "xnudge/explain.hpp"
#include "xnudge/model.hpp"

namespace xnudge {

/// Parameterized synthetic decision maker. Private linear rule plus an
/// AI-anchoring channel whose strength is modulated by how plausible the
/// shown explanation looks against the DM's own weights.
struct SimDM {
    Vec own_weights;            // private linear decision rule u
    double noise_sd = 0.3;
    double anchor = 0.4;        // base propensity to adopt the AI label
    double sensitivity = 1.0;   // explanation-plausibility modulation
    double decision_bias = 0.0; // threshold shift of the private rule
    int attention_k = 1;        // top-k attributions attended
    uint64_t seed = 0;
    std::string id;
};

/// sign(u . (x - 1/2) + bias + gaussian noise); deterministic per
/// (dm, instance).
Label independent_decision(const SimDM& dm, const TaskInstance& instance);

/// Plausibility rho in [0,1] from the cosine between the explanation and the
/// DM's weights on the top-k attended indices; 0.5 when either side is zero.
double explanation_plausibility(const SimDM& dm, const Explanation& e);

/// Adoption probability clamp(anchor + sensitivity * (rho - 1/2), 0, 1).
double adoption_probability(const SimDM& dm, const Explanation& e);

/// Adopt the AI label with the adoption probability, otherwise decide
/// independently. Deterministic per (dm, instance).
Label assisted_decision(const SimDM& dm, const TaskInstance& instance, Label ai_label,
                        const Explanation& e);

struct PopulationConfig {
    size_t num_dms = 80;
    double distortion_sd = 0.5; // u = base weights + N(0, sd) per coordinate
    double noise_sd = 0.3;
    double anchor_low = 0.2;
    double anchor_high = 0.6;
    double sens_low = 0.5;
    double sens_high = 1.5;
    double decision_bias = 0.0;
    int attention_k = 0; // 0: ceil(n / 2)
};

std::vector<SimDM> make_population(const PopulationConfig& cfg, const Vec& base_weights,
                                   uint64_t seed, const std::string& id_prefix = "dm");

struct ExplainerMix {
    double shapley = 1.0;
    double lime = 0.0;
    double augmented = 0.0;
};

/// Pre-computed per-instance base explanations for log generation.
struct InstanceExplanations {
    Explanation shapley;
    Explanation lime;
};

/// One BehaviorRecord per (dm, instance) pair, dm-major order. Each DM is
/// assigned one explanation kind by the mix, mirroring a between-subjects
/// collection. Fully seeded; parallel across pairs.
std::vector<BehaviorRecord> generate_logs(const std::vector<SimDM>& population, const Dataset& pool,
                                          const ForestModel& ai,
                                          const std::vector<InstanceExplanations>& explanations,
                                          const ExplainerMix& mix, const AugmentParams& aug,
                                          uint64_t seed, int threads);

} // namespace xnudge
