#include "xnudge/behavior.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "xnudge/rng.hpp"

using nlohmann::json;

namespace xnudge {

Vec encode(const Vec& x, Label y_m, const Vec& e) {
    require(x.size() == e.size(), "encode: explanation length must match feature length");
    const size_t n = x.size();
    Vec enc(3 * n + 1);
    for (size_t i = 0; i < n; ++i) enc[i] = x[i];
    enc[n] = static_cast<double>(y_m.value());
    for (size_t i = 0; i < n; ++i) enc[n + 1 + i] = e[i];
    for (size_t i = 0; i < n; ++i) enc[2 * n + 1 + i] = x[i] * e[i];
    return enc;
}

namespace {

struct Workspace {
    Vec pre;    // hidden pre-activations
    Vec hidden; // relu(pre)
};

double forward_cached(const BehaviorModel& m, const Vec& enc, Workspace& ws) {
    const size_t in = m.input_dim();
    const size_t h = static_cast<size_t>(m.hidden);
    ws.pre.assign(h, 0.0);
    ws.hidden.assign(h, 0.0);
    for (size_t j = 0; j < h; ++j) {
        double s = m.b1[j];
        const double* row = &m.w1[j * in];
        for (size_t i = 0; i < in; ++i) s += row[i] * enc[i];
        ws.pre[j] = s;
        ws.hidden[j] = s > 0.0 ? s : 0.0;
    }
    double z = m.b2;
    for (size_t j = 0; j < h; ++j) z += m.w2[j] * ws.hidden[j];
    return z;
}

void check_input(const BehaviorModel& m, const Vec& enc) {
    require(enc.size() == m.input_dim(), "behavior forward: encoded length != input_dim");
    require(all_finite(enc), "behavior forward: non-finite input");
}

} // namespace

double forward_logit(const BehaviorModel& m, const Vec& enc) {
    check_input(m, enc);
    Workspace ws;
    return forward_cached(m, enc, ws);
}

double forward(const BehaviorModel& m, const Vec& enc) {
    const double p = sigmoid(forward_logit(m, enc));
    return std::min(1.0 - 1e-12, std::max(1e-12, p));
}

Label predict_label(const BehaviorModel& m, const Vec& enc) {
    return Label::from_prob(forward(m, enc));
}

double bce_loss(double logit, Label target) {
    const double t = target.is_positive() ? 1.0 : 0.0;
    return softplus(logit) - t * logit;
}

Vec input_gradient(const BehaviorModel& m, const Vec& enc, Label target) {
    check_input(m, enc);
    Workspace ws;
    const double z = forward_cached(m, enc, ws);
    const double dz = sigmoid(z) - (target.is_positive() ? 1.0 : 0.0);
    const size_t in = m.input_dim();
    const size_t h = static_cast<size_t>(m.hidden);
    Vec grad(in, 0.0);
    for (size_t j = 0; j < h; ++j) {
        if (ws.pre[j] <= 0.0) continue;
        const double dpre = dz * m.w2[j];
        const double* row = &m.w1[j * in];
        for (size_t i = 0; i < in; ++i) grad[i] += dpre * row[i];
    }
    return grad;
}

Vec flatten_params(const BehaviorModel& m) {
    Vec flat;
    flat.reserve(m.w1.size() + m.b1.size() + m.w2.size() + 1);
    flat.insert(flat.end(), m.w1.begin(), m.w1.end());
    flat.insert(flat.end(), m.b1.begin(), m.b1.end());
    flat.insert(flat.end(), m.w2.begin(), m.w2.end());
    flat.push_back(m.b2);
    return flat;
}

void unflatten_params(BehaviorModel& m, const Vec& flat) {
    require(flat.size() == m.w1.size() + m.b1.size() + m.w2.size() + 1,
            "unflatten_params: size mismatch");
    size_t pos = 0;
    std::copy(flat.begin(), flat.begin() + m.w1.size(), m.w1.begin());
    pos += m.w1.size();
    std::copy(flat.begin() + pos, flat.begin() + pos + m.b1.size(), m.b1.begin());
    pos += m.b1.size();
    std::copy(flat.begin() + pos, flat.begin() + pos + m.w2.size(), m.w2.begin());
    pos += m.w2.size();
    m.b2 = flat[pos];
}

namespace {

// Accumulate d(mean bce)/d(params) for one sample, scaled by inv_count.
void accumulate_param_gradient(const BehaviorModel& m, const Vec& enc, Label target,
                               double inv_count, Workspace& ws, Vec& gw1, Vec& gb1, Vec& gw2,
                               double& gb2) {
    const double z = forward_cached(m, enc, ws);
    const double dz = (sigmoid(z) - (target.is_positive() ? 1.0 : 0.0)) * inv_count;
    const size_t in = m.input_dim();
    const size_t h = static_cast<size_t>(m.hidden);
    gb2 += dz;
    for (size_t j = 0; j < h; ++j) {
        gw2[j] += dz * ws.hidden[j];
        if (ws.pre[j] <= 0.0) continue;
        const double dpre = dz * m.w2[j];
        gb1[j] += dpre;
        double* grow = &gw1[j * in];
        for (size_t i = 0; i < in; ++i) grow[i] += dpre * enc[i];
    }
}

} // namespace

Vec param_gradient(const BehaviorModel& m, const std::vector<Vec>& encoded,
                   const std::vector<Label>& targets) {
    require(encoded.size() == targets.size() && !encoded.empty(),
            "param_gradient: inputs misaligned");
    Vec gw1(m.w1.size(), 0.0), gb1(m.b1.size(), 0.0), gw2(m.w2.size(), 0.0);
    double gb2 = 0.0;
    Workspace ws;
    const double inv = 1.0 / static_cast<double>(encoded.size());
    for (size_t s = 0; s < encoded.size(); ++s)
        accumulate_param_gradient(m, encoded[s], targets[s], inv, ws, gw1, gb1, gw2, gb2);
    Vec flat;
    flat.reserve(gw1.size() + gb1.size() + gw2.size() + 1);
    flat.insert(flat.end(), gw1.begin(), gw1.end());
    flat.insert(flat.end(), gb1.begin(), gb1.end());
    flat.insert(flat.end(), gw2.begin(), gw2.end());
    flat.push_back(gb2);
    return flat;
}

namespace {

BehaviorModel init_model(size_t n, const BehaviorTrainConfig& config) {
    BehaviorModel m;
    m.n = n;
    m.hidden = config.hidden_dim;
    m.config = config;
    const size_t in = m.input_dim();
    const size_t h = static_cast<size_t>(config.hidden_dim);
    m.w1.resize(h * in);
    m.b1.assign(h, 0.0);
    m.w2.resize(h);
    Rng rng(derive_seed(config.seed, {stream::init}));
    for (auto& w : m.w1) w = rng.gaussian() * config.init_scale;
    for (auto& w : m.w2) w = rng.gaussian() * config.init_scale;
    m.b2 = 0.0;
    return m;
}

double mean_loss(const BehaviorModel& m, const std::vector<Vec>& encoded,
                 const std::vector<Label>& targets) {
    Workspace ws;
    double loss = 0.0;
    for (size_t s = 0; s < encoded.size(); ++s)
        loss += bce_loss(forward_cached(m, encoded[s], ws), targets[s]);
    return loss / static_cast<double>(encoded.size());
}

struct Adam {
    Vec m, v;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long t = 0;

    explicit Adam(size_t dim) : m(dim, 0.0), v(dim, 0.0) {}

    void step(Vec& params, const Vec& grad, double lr) {
        t++;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (size_t i = 0; i < params.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
            params[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
        }
    }
};

} // namespace

BehaviorTrainResult train_behavior(const std::vector<BehaviorRecord>& records,
                                   const BehaviorTrainConfig& config) {
    require(!records.empty(), "train_behavior: no records");
    const size_t n = records[0].instance.features.size();
    for (const auto& r : records)
        require(r.instance.features.size() == n && r.explanation.attributions.size() == n,
                "train_behavior: inconsistent dimensions across records");

    std::vector<Vec> encoded;
    std::vector<Label> targets;
    encoded.reserve(records.size());
    for (const auto& r : records) {
        encoded.push_back(encode(r.instance.features, r.ai_label, r.explanation.attributions));
        targets.push_back(r.human_label);
    }

    BehaviorTrainResult result;
    result.class_collapse =
        std::all_of(targets.begin(), targets.end(),
                    [&](Label l) { return l == targets.front(); });
    if (result.class_collapse)
        std::cerr << "[xnudge] warning: behavior records carry a single label (class collapse)\n";

    BehaviorModel model = init_model(n, config);
    const size_t param_count = model.w1.size() + model.b1.size() + model.w2.size() + 1;
    Adam adam(param_count);
    Vec params = flatten_params(model);

    Rng shuffle_rng(derive_seed(config.seed, {stream::shuffle}));
    std::vector<size_t> order(records.size());
    std::iota(order.begin(), order.end(), size_t{0});

    const size_t batch = static_cast<size_t>(std::max(1, config.batch_size));
    std::vector<Vec> batch_enc;
    std::vector<Label> batch_tgt;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        for (size_t start = 0; start < order.size(); start += batch) {
            const size_t stop = std::min(order.size(), start + batch);
            batch_enc.clear();
            batch_tgt.clear();
            for (size_t k = start; k < stop; ++k) {
                batch_enc.push_back(encoded[order[k]]);
                batch_tgt.push_back(targets[order[k]]);
            }
            const Vec grad = param_gradient(model, batch_enc, batch_tgt);
            adam.step(params, grad, config.learning_rate);
            unflatten_params(model, params);
        }
        result.epoch_losses.push_back(mean_loss(model, encoded, targets));
    }

    result.final_loss = result.epoch_losses.empty() ? mean_loss(model, encoded, targets)
                                                    : result.epoch_losses.back();
    result.optimizer_steps = adam.t;
    result.model = std::move(model);
    return result;
}

CvResult cross_validate(const std::vector<BehaviorRecord>& records, int k,
                        const BehaviorTrainConfig& config) {
    require(k >= 2, "cross_validate: k must be >= 2");
    require(records.size() >= static_cast<size_t>(k), "cross_validate: fewer records than folds");

    // Stratify on the human label: shuffle each class, deal round-robin.
    std::vector<size_t> pos, neg;
    for (size_t i = 0; i < records.size(); ++i)
        (records[i].human_label.is_positive() ? pos : neg).push_back(i);
    Rng rng(derive_seed(config.seed, {stream::fold}));
    rng.shuffle(pos);
    rng.shuffle(neg);

    std::vector<std::vector<size_t>> folds(static_cast<size_t>(k));
    for (size_t i = 0; i < pos.size(); ++i) folds[i % folds.size()].push_back(pos[i]);
    for (size_t i = 0; i < neg.size(); ++i)
        folds[(neg.size() - 1 - i) % folds.size()].push_back(neg[i]);

    for (const auto& fold : folds) {
        bool has_pos = false, has_neg = false;
        for (size_t i : fold)
            (records[i].human_label.is_positive() ? has_pos : has_neg) = true;
        if (!(has_pos && has_neg))
            throw StratificationError("cross_validate: a fold lacks one of the classes");
    }

    CvResult cv;
    for (size_t f = 0; f < folds.size(); ++f) {
        std::vector<BehaviorRecord> train_records;
        for (size_t g = 0; g < folds.size(); ++g) {
            if (g == f) continue;
            for (size_t i : folds[g]) train_records.push_back(records[i]);
        }
        BehaviorTrainConfig fold_cfg = config;
        fold_cfg.seed = derive_seed(config.seed, {stream::fold, f});
        const BehaviorTrainResult trained = train_behavior(train_records, fold_cfg);

        size_t correct = 0;
        for (size_t i : folds[f]) {
            const auto& r = records[i];
            const Vec enc =
                encode(r.instance.features, r.ai_label, r.explanation.attributions);
            if (predict_label(trained.model, enc) == r.human_label) correct++;
        }
        cv.fold_accuracies.push_back(static_cast<double>(correct) /
                                     static_cast<double>(folds[f].size()));
        cv.fold_sizes.push_back(folds[f].size());
    }
    cv.mean_accuracy = std::accumulate(cv.fold_accuracies.begin(), cv.fold_accuracies.end(), 0.0) /
                       static_cast<double>(cv.fold_accuracies.size());
    return cv;
}

void save_behavior_json(const BehaviorModel& m, const std::string& path,
                        const Provenance* prov) {
    json j{{"format_version", 1},
           {"type", "behavior"},
           {"n", m.n},
           {"hidden", m.hidden},
           {"w1", m.w1},
           {"b1", m.b1},
           {"w2", m.w2},
           {"b2", m.b2},
           {"train_config",
            {{"learning_rate", m.config.learning_rate},
             {"batch_size", m.config.batch_size},
             {"epochs", m.config.epochs},
             {"hidden_dim", m.config.hidden_dim},
             {"init_scale", m.config.init_scale},
             {"seed", m.config.seed}}}};
    if (prov) {
        j["config_hash"] = prov->config_hash;
        j["seed"] = prov->seed;
    }
    std::ofstream out(path);
    if (!out) throw StageError("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
}

BehaviorModel load_behavior_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw StageError("cannot read '" + path + "'");
    const json j = json::parse(in);
    if (j.at("type").get<std::string>() != "behavior")
        throw SchemaError("model file '" + path + "' is not a behavior model");
    BehaviorModel m;
    m.n = j.at("n").get<size_t>();
    m.hidden = j.at("hidden").get<int>();
    m.w1 = j.at("w1").get<Vec>();
    m.b1 = j.at("b1").get<Vec>();
    m.w2 = j.at("w2").get<Vec>();
    m.b2 = j.at("b2").get<double>();
    const auto& tc = j.at("train_config");
    m.config.learning_rate = tc.at("learning_rate").get<double>();
    m.config.batch_size = tc.at("batch_size").get<int>();
    m.config.epochs = tc.at("epochs").get<int>();
    m.config.hidden_dim = tc.at("hidden_dim").get<int>();
    m.config.init_scale = tc.at("init_scale").get<double>();
    m.config.seed = tc.at("seed").get<uint64_t>();
    return m;
}

} // namespace xnudge
