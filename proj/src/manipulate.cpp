#include "xnudge/manipulate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>

#include <nlohmann/json.hpp>

#include "xnudge/explain.hpp"
#include "xnudge/parallel.hpp"
#include "xnudge/rng.hpp"

using nlohmann::json;

namespace xnudge {

void ManipulationConfig::validate() const {
    if (step_size <= 0.0) throw ConfigError("manipulation.step_size must be > 0");
    if (tradeoff < 0.0) throw ConfigError("manipulation.tradeoff must be >= 0");
    if (threshold <= 0.0) throw ConfigError("manipulation.threshold must be > 0");
    if (max_rounds < 1) throw ConfigError("manipulation.max_rounds must be >= 1");
    if (restarts < 1) throw ConfigError("manipulation.restarts must be >= 1");
    if (!(init_low < init_high)) throw ConfigError("manipulation.init_low must be < init_high");
    if (hinge_margin < 0.0) throw ConfigError("manipulation.hinge_margin must be >= 0");
}

int consistency_loss(const Vec& e, Label y_m) {
    require(all_finite(e), "consistency_loss: non-finite explanation");
    double sum = 0.0;
    for (double v : e) sum += v;
    if (sum == 0.0) return 1; // supports neither label
    const bool agrees = (sum > 0.0) == y_m.is_positive();
    return agrees ? 0 : 1;
}

double consistency_surrogate(const Vec& e, Label y_m, double margin) {
    require(margin >= 0.0, "consistency_surrogate: margin must be >= 0");
    double sum = 0.0;
    for (double v : e) sum += v;
    return std::max(0.0, margin - static_cast<double>(y_m.value()) * sum);
}

namespace {

struct ObjectiveEval {
    double behavior_loss;
    double composite;
    Vec gradient; // d(composite)/d(e)
};

ObjectiveEval eval_objective(const BehaviorModel& behavior, const Vec& x, Label y_m, Label target,
                             const Vec& e, const ManipulationConfig& cfg) {
    const Vec enc = encode(x, y_m, e);
    const double z = forward_logit(behavior, enc);
    ObjectiveEval out;
    out.behavior_loss = bce_loss(z, target);

    const Vec genc = input_gradient(behavior, enc, target);
    const size_t n = x.size();
    out.gradient.assign(n, 0.0);
    // e appears in the e block and in the x*e interaction block.
    for (size_t i = 0; i < n; ++i)
        out.gradient[i] = genc[n + 1 + i] + x[i] * genc[2 * n + 1 + i];

    const double hinge = consistency_surrogate(e, y_m, cfg.hinge_margin);
    out.composite = out.behavior_loss + cfg.tradeoff * hinge;
    if (hinge > 0.0) { // subgradient at the kink is 0
        const double d = -cfg.tradeoff * static_cast<double>(y_m.value());
        for (size_t i = 0; i < n; ++i) out.gradient[i] += d;
    }
    return out;
}

} // namespace

Vec manipulation_gradient(const BehaviorModel& behavior, const Vec& x, Label y_m, Label target,
                          const Vec& e, const ManipulationConfig& config) {
    return eval_objective(behavior, x, y_m, target, e, config).gradient;
}

namespace {

RestartOutcome run_restart(const BehaviorModel& behavior, const Vec& x, Label y_m, Label target,
                           const ManipulationConfig& cfg, uint64_t seed) {
    const size_t n = x.size();
    Rng rng(seed);
    RestartOutcome out;
    out.explanation.resize(n);
    for (auto& v : out.explanation) v = rng.uniform(cfg.init_low, cfg.init_high);

    double prev_composite = std::numeric_limits<double>::infinity();
    bool prev_hinge_active = true;
    for (int round = 0; round < cfg.max_rounds; ++round) {
        const ObjectiveEval ev = eval_objective(behavior, x, y_m, target, out.explanation, cfg);
        if (!all_finite(ev.gradient) || !std::isfinite(ev.composite)) {
            out.aborted = true;
            return out;
        }
        // descent bookkeeping on the smooth part of the landscape
        const bool hinge_active =
            consistency_surrogate(out.explanation, y_m, cfg.hinge_margin) > 0.0;
        if (!hinge_active && !prev_hinge_active && ev.composite > prev_composite + 1e-6)
            out.descent_violations++;
        prev_composite = ev.composite;
        prev_hinge_active = hinge_active;
        for (size_t i = 0; i < n; ++i) out.explanation[i] -= cfg.step_size * ev.gradient[i];

        const Vec enc = encode(x, y_m, out.explanation);
        const double loss = bce_loss(forward_logit(behavior, enc), target);
        out.loss_trace.push_back(loss);
        out.rounds_used = round + 1;
        if (loss < cfg.threshold) {
            out.converged = true;
            break;
        }
    }

    out.final_loss = out.loss_trace.back();
    out.feasible = consistency_loss(out.explanation, y_m) == 0;
    return out;
}

} // namespace

ManipulationResult manipulate(const BehaviorModel& behavior, const Vec& x, Label y_m, Label target,
                              const ManipulationConfig& config) {
    config.validate();
    require(x.size() == behavior.n, "manipulate: behavior model dimension mismatch");
    require(all_finite(x), "manipulate: non-finite features");

    ManipulationResult result;
    int descent_violations = 0;
    for (int r = 0; r < config.restarts; ++r) {
        const uint64_t seed = derive_seed(config.seed, {stream::restart, static_cast<uint64_t>(r)});
        result.restarts.push_back(run_restart(behavior, x, y_m, target, config, seed));
        descent_violations += result.restarts.back().descent_violations;
    }
    if (descent_violations > 0)
        std::cerr << "[xnudge] step-size warning: composite loss rose on " << descent_violations
                  << " interior rounds\n";

    const size_t n = x.size();
    Vec pooled(n, 0.0);
    result.restarts_feasible = 0;
    for (const auto& ro : result.restarts) {
        if (ro.aborted || !ro.feasible) continue;
        result.restarts_feasible++;
        for (size_t i = 0; i < n; ++i) pooled[i] += ro.explanation[i];
    }

    if (result.restarts_feasible > 0) {
        for (auto& v : pooled) v /= static_cast<double>(result.restarts_feasible);
    } else {
        // No feasible restart: fall back to the lowest-loss survivor.
        double best = std::numeric_limits<double>::infinity();
        const RestartOutcome* pick = nullptr;
        for (const auto& ro : result.restarts) {
            if (ro.aborted) continue;
            if (ro.final_loss < best) {
                best = ro.final_loss;
                pick = &ro;
            }
        }
        if (pick == nullptr) throw NumericsError("manipulate: all restarts aborted");
        pooled = pick->explanation;
    }

    result.explanation.kind = ExplKind::manipulated;
    result.explanation.attributions = pooled;
    result.explanation = rescale_max_abs(std::move(result.explanation));

    // Feasibility is re-verified on the shipped explanation; positive
    // rescaling cannot change the sign of the attribution sum.
    result.feasible = consistency_loss(result.explanation.attributions, y_m) == 0;
    const Vec enc = encode(x, y_m, result.explanation.attributions);
    result.final_behavior_loss = bce_loss(forward_logit(behavior, enc), target);
    return result;
}

std::vector<ManipulationResult> manipulate_batch(const BehaviorModel& behavior,
                                                 const std::vector<ManipulationTask>& tasks,
                                                 const ManipulationConfig& config, int threads) {
    config.validate();
    std::vector<ManipulationResult> out(tasks.size());
    parallel_for(tasks.size(), threads, [&](size_t i) {
        ManipulationConfig c = config;
        c.seed = derive_seed(config.seed, {stream::restart, fnv1a64(tasks[i].instance->id)});
        out[i] = manipulate(behavior, tasks[i].instance->features, tasks[i].ai_label,
                            tasks[i].target, c);
    });
    return out;
}

void save_manipulation_json(const std::vector<std::string>& instance_ids,
                            const std::vector<ManipulationResult>& results,
                            const std::string& path, const Provenance* prov) {
    require(instance_ids.size() == results.size(), "save_manipulation_json: misaligned inputs");
    json arr = json::array();
    for (size_t i = 0; i < results.size(); ++i) {
        const auto& r = results[i];
        json restarts = json::array();
        for (const auto& ro : r.restarts)
            restarts.push_back(json{{"loss_trace", ro.loss_trace},
                                    {"rounds_used", ro.rounds_used},
                                    {"converged", ro.converged},
                                    {"feasible", ro.feasible},
                                    {"aborted", ro.aborted},
                                    {"descent_violations", ro.descent_violations},
                                    {"final_loss", ro.final_loss}});
        arr.push_back(json{{"instance", instance_ids[i]},
                           {"explanation", r.explanation.attributions},
                           {"feasible", r.feasible},
                           {"final_behavior_loss", r.final_behavior_loss},
                           {"restarts_feasible", r.restarts_feasible},
                           {"restarts", std::move(restarts)}});
    }
    json j{{"format_version", 1}, {"results", std::move(arr)}};
    if (prov) {
        j["config_hash"] = prov->config_hash;
        j["seed"] = prov->seed;
    }
    std::ofstream out(path);
    if (!out) throw StageError("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
}

std::vector<std::pair<std::string, ManipulationResult>> load_manipulation_json(
    const std::string& path) {
    std::ifstream in(path);
    if (!in) throw StageError("cannot read '" + path + "'");
    const json j = json::parse(in);
    std::vector<std::pair<std::string, ManipulationResult>> out;
    for (const auto& rj : j.at("results")) {
        ManipulationResult r;
        r.explanation.kind = ExplKind::manipulated;
        r.explanation.attributions = rj.at("explanation").get<Vec>();
        r.feasible = rj.at("feasible").get<bool>();
        r.final_behavior_loss = rj.at("final_behavior_loss").get<double>();
        r.restarts_feasible = rj.at("restarts_feasible").get<int>();
        for (const auto& sj : rj.at("restarts")) {
            RestartOutcome ro;
            ro.loss_trace = sj.at("loss_trace").get<Vec>();
            ro.rounds_used = sj.at("rounds_used").get<int>();
            ro.converged = sj.at("converged").get<bool>();
            ro.feasible = sj.at("feasible").get<bool>();
            ro.aborted = sj.at("aborted").get<bool>();
            ro.descent_violations = sj.at("descent_violations").get<int>();
            ro.final_loss = sj.at("final_loss").get<double>();
            r.restarts.push_back(std::move(ro));
        }
        out.push_back({rj.at("instance").get<std::string>(), std::move(r)});
    }
    return out;
}

} // namespace xnudge
