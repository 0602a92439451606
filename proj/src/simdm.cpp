#include "xnudge/simdm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xnudge/parallel.hpp"
#include "xnudge/rng.hpp"

namespace xnudge {

Label independent_decision(const SimDM& dm, const TaskInstance& instance) {
    require(dm.own_weights.size() == instance.features.size(),
            "independent_decision: dimension mismatch");
    double score = dm.decision_bias;
    for (size_t i = 0; i < dm.own_weights.size(); ++i)
        score += dm.own_weights[i] * (instance.features[i] - 0.5);
    if (dm.noise_sd > 0.0) {
        Rng rng(derive_seed(dm.seed, {stream::indep, fnv1a64(instance.id)}));
        score += rng.gaussian() * dm.noise_sd;
    }
    return Label::from_sign(score);
}

double explanation_plausibility(const SimDM& dm, const Explanation& e) {
    const size_t n = e.attributions.size();
    require(dm.own_weights.size() == n, "explanation_plausibility: dimension mismatch");
    const size_t k = std::min<size_t>(std::max(1, dm.attention_k), n);

    // Top-k salient attributions, ties broken by index for stability.
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        const double va = std::abs(e.attributions[a]);
        const double vb = std::abs(e.attributions[b]);
        if (va != vb) return va > vb;
        return a < b;
    });

    double ee = 0.0, uu = 0.0, eu = 0.0;
    for (size_t j = 0; j < k; ++j) {
        const size_t i = order[j];
        ee += e.attributions[i] * e.attributions[i];
        uu += dm.own_weights[i] * dm.own_weights[i];
        eu += e.attributions[i] * dm.own_weights[i];
    }
    if (ee <= 0.0 || uu <= 0.0) return 0.5; // zero vector: neutral plausibility
    const double cosine = eu / (std::sqrt(ee) * std::sqrt(uu));
    return 0.5 * (cosine + 1.0);
}

double adoption_probability(const SimDM& dm, const Explanation& e) {
    const double rho = explanation_plausibility(dm, e);
    const double pi = dm.anchor + dm.sensitivity * (rho - 0.5);
    return std::clamp(pi, 0.0, 1.0);
}

Label assisted_decision(const SimDM& dm, const TaskInstance& instance, Label ai_label,
                        const Explanation& e) {
    const double pi = adoption_probability(dm, e);
    Rng rng(derive_seed(dm.seed, {stream::adopt, fnv1a64(instance.id)}));
    if (rng.uniform01() < pi) return ai_label;
    return independent_decision(dm, instance);
}

std::vector<SimDM> make_population(const PopulationConfig& cfg, const Vec& base_weights,
                                   uint64_t seed, const std::string& id_prefix) {
    require(cfg.num_dms >= 1, "make_population: need at least one decision maker");
    require(!base_weights.empty(), "make_population: base weights are empty");
    const size_t n = base_weights.size();
    const int default_k = static_cast<int>((n + 1) / 2);

    std::vector<SimDM> population;
    population.reserve(cfg.num_dms);
    for (size_t d = 0; d < cfg.num_dms; ++d) {
        Rng rng(derive_seed(seed, {stream::population, d}));
        SimDM dm;
        dm.own_weights.resize(n);
        for (size_t i = 0; i < n; ++i)
            dm.own_weights[i] = base_weights[i] + rng.gaussian() * cfg.distortion_sd;
        dm.noise_sd = cfg.noise_sd;
        dm.anchor = rng.uniform(cfg.anchor_low, cfg.anchor_high);
        dm.sensitivity = rng.uniform(cfg.sens_low, cfg.sens_high);
        dm.decision_bias = cfg.decision_bias;
        dm.attention_k = cfg.attention_k > 0 ? cfg.attention_k : default_k;
        dm.seed = derive_seed(seed, {stream::population, d, 0x5eedULL});
        dm.id = id_prefix + "-" + std::to_string(d);
        population.push_back(std::move(dm));
    }
    return population;
}

std::vector<BehaviorRecord> generate_logs(const std::vector<SimDM>& population, const Dataset& pool,
                                          const ForestModel& ai,
                                          const std::vector<InstanceExplanations>& explanations,
                                          const ExplainerMix& mix, const AugmentParams& aug,
                                          uint64_t seed, int threads) {
    require(!population.empty(), "generate_logs: empty population");
    require(explanations.size() == pool.size(), "generate_logs: explanations misaligned with pool");
    const double mix_total = mix.shapley + mix.lime + mix.augmented;
    require(mix_total > 0.0, "generate_logs: explainer mix sums to zero");

    // AI predictions per instance, shared across decision makers.
    std::vector<Label> ai_labels(pool.size(), Label::positive());
    for (size_t i = 0; i < pool.size(); ++i)
        ai_labels[i] = predict(ai, pool.instances[i].features).label;

    // One explanation arm per decision maker, as in a between-subjects study.
    std::vector<ExplKind> arm(population.size());
    for (size_t d = 0; d < population.size(); ++d) {
        Rng rng(derive_seed(seed, {stream::expl_kind, d}));
        const double u = rng.uniform01() * mix_total;
        arm[d] = u < mix.shapley               ? ExplKind::shapley
                 : u < mix.shapley + mix.lime  ? ExplKind::lime
                                               : ExplKind::augmented;
    }

    std::vector<BehaviorRecord> records(population.size() * pool.size());
    parallel_for(records.size(), threads, [&](size_t idx) {
        const size_t d = idx / pool.size();
        const size_t i = idx % pool.size();
        const SimDM& dm = population[d];
        const TaskInstance& inst = pool.instances[i];

        Explanation shown;
        switch (arm[d]) {
            case ExplKind::shapley: shown = explanations[i].shapley; break;
            case ExplKind::lime: shown = explanations[i].lime; break;
            default: {
                const uint64_t aseed =
                    derive_seed(seed, {stream::augment, d, fnv1a64(inst.id)});
                shown = rescale_max_abs(augment(explanations[i].shapley, aug.mask_frac,
                                                aug.amp_frac, aug.amp_factor, aseed));
                break;
            }
        }

        BehaviorRecord rec;
        rec.instance = inst;
        rec.ai_label = ai_labels[i];
        rec.explanation = std::move(shown);
        rec.human_label = assisted_decision(dm, inst, ai_labels[i], rec.explanation);
        rec.dm_id = dm.id;
        records[idx] = std::move(rec);
    });
    return records;
}

} // namespace xnudge
