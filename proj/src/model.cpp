#include "xnudge/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "xnudge/parallel.hpp"
#include "xnudge/rng.hpp"

using nlohmann::json;

namespace xnudge {

Label DecisionTree::vote(const Vec& x) const {
    int node = 0;
    while (!nodes[node].is_leaf()) {
        const TreeNode& t = nodes[node];
        node = x[static_cast<size_t>(t.feature)] <= t.threshold ? t.left : t.right;
    }
    const TreeNode& leaf = nodes[node];
    return leaf.count_pos >= leaf.count_neg ? Label::positive() : Label::negative();
}

namespace {

double gini(double neg, double pos) {
    const double total = neg + pos;
    if (total <= 0.0) return 0.0;
    const double pn = neg / total;
    const double pp = pos / total;
    return 1.0 - pn * pn - pp * pp;
}

struct TreeBuilder {
    const Dataset& data;
    int max_depth;
    size_t mtry;
    Rng& rng;
    std::vector<TreeNode> nodes;

    int build(std::vector<size_t>& idx, int depth) {
        double neg = 0.0, pos = 0.0;
        for (size_t i : idx) (data.instances[i].label.is_positive() ? pos : neg) += 1.0;

        const int me = static_cast<int>(nodes.size());
        nodes.push_back(TreeNode{});
        nodes[me].count_neg = neg;
        nodes[me].count_pos = pos;

        if (depth >= max_depth || neg == 0.0 || pos == 0.0 || idx.size() < 2) return me;

        // Random feature subset for this node, drawn in a fixed order.
        std::vector<size_t> feats(data.n);
        std::iota(feats.begin(), feats.end(), size_t{0});
        for (size_t k = 0; k < mtry; ++k) {
            const size_t j = k + rng.uniform_index(data.n - k);
            std::swap(feats[k], feats[j]);
        }

        int best_feature = -1;
        double best_threshold = 0.0;
        double best_impurity = gini(neg, pos);
        const double total = neg + pos;

        std::vector<std::pair<double, int>> vals(idx.size());
        for (size_t k = 0; k < mtry; ++k) {
            const size_t f = feats[k];
            for (size_t i = 0; i < idx.size(); ++i)
                vals[i] = {data.instances[idx[i]].features[f],
                           data.instances[idx[i]].label.value()};
            std::sort(vals.begin(), vals.end());
            double lneg = 0.0, lpos = 0.0;
            for (size_t i = 0; i + 1 < vals.size(); ++i) {
                (vals[i].second > 0 ? lpos : lneg) += 1.0;
                if (vals[i + 1].first <= vals[i].first) continue;
                const double left = lneg + lpos;
                const double w = (left * gini(lneg, lpos) +
                                  (total - left) * gini(neg - lneg, pos - lpos)) /
                                 total;
                if (w < best_impurity - 1e-12) {
                    best_impurity = w;
                    best_feature = static_cast<int>(f);
                    best_threshold = 0.5 * (vals[i].first + vals[i + 1].first);
                }
            }
        }

        if (best_feature < 0) return me;

        std::vector<size_t> left_idx, right_idx;
        for (size_t i : idx)
            (data.instances[i].features[static_cast<size_t>(best_feature)] <= best_threshold
                 ? left_idx
                 : right_idx)
                .push_back(i);
        if (left_idx.empty() || right_idx.empty()) return me;

        nodes[me].feature = best_feature;
        nodes[me].threshold = best_threshold;
        const int l = build(left_idx, depth + 1);
        nodes[me].left = l;
        const int r = build(right_idx, depth + 1);
        nodes[me].right = r;
        return me;
    }
};

DecisionTree build_tree(const Dataset& train, int max_depth, size_t mtry, uint64_t seed) {
    Rng rng(seed);
    std::vector<size_t> sample(train.size());
    for (auto& s : sample) s = rng.uniform_index(train.size());
    TreeBuilder builder{train, max_depth, mtry, rng, {}};
    builder.build(sample, 0);
    return DecisionTree{std::move(builder.nodes)};
}

} // namespace

ForestModel train_forest(const Dataset& train, int num_trees, int max_depth, uint64_t seed,
                         int threads) {
    require(!train.instances.empty(), "training set is empty");
    require(num_trees >= 1, "num_trees must be >= 1");
    require(max_depth >= 1, "max_depth must be >= 1");

    bool has_pos = false, has_neg = false;
    for (const auto& inst : train.instances)
        (inst.label.is_positive() ? has_pos : has_neg) = true;
    const bool single_class = !(has_pos && has_neg);
    if (single_class)
        std::cerr << "[xnudge] warning: single-class training set, forest is a constant model\n";

    ForestModel model;
    model.feature_dim = train.n;
    model.max_depth = max_depth;
    model.train_seed = seed;
    model.constant_model = single_class;
    model.trees.resize(static_cast<size_t>(num_trees));

    const size_t mtry =
        static_cast<size_t>(std::ceil(std::sqrt(static_cast<double>(train.n))));
    parallel_for(model.trees.size(), threads, [&](size_t t) {
        model.trees[t] = build_tree(train, max_depth, mtry, derive_seed(seed, {stream::tree, t}));
    });
    return model;
}

Prediction predict(const ForestModel& model, const Vec& x) {
    require(x.size() == model.feature_dim, "feature dimension mismatch in forest predict");
    require(all_finite(x), "non-finite features in forest predict");
    size_t votes_pos = 0;
    for (const auto& tree : model.trees)
        if (tree.vote(x).is_positive()) votes_pos++;
    const double prob = static_cast<double>(votes_pos) / static_cast<double>(model.trees.size());
    return Prediction{Label::from_prob(prob), prob};
}

double linear_score(const LogisticModel& model, const Vec& x) {
    require(x.size() == model.weights.size(), "feature dimension mismatch in logistic score");
    return dot(model.weights, x) + model.bias;
}

Prediction predict(const LogisticModel& model, const Vec& x) {
    const double p = sigmoid(linear_score(model, x));
    return Prediction{Label::from_prob(p), p};
}

LogisticModel fit_logistic(const Dataset& train, double learning_rate, int iterations, double l2) {
    require(!train.instances.empty(), "training set is empty");
    const size_t n = train.n;
    const size_t m = train.size();
    LogisticModel model;
    model.weights.assign(n, 0.0);

    Vec gw(n);
    for (int it = 0; it < iterations; ++it) {
        std::fill(gw.begin(), gw.end(), 0.0);
        double gb = 0.0;
        for (const auto& inst : train.instances) {
            const double p = sigmoid(linear_score(model, inst.features));
            const double t = inst.label.is_positive() ? 1.0 : 0.0;
            const double d = p - t;
            for (size_t c = 0; c < n; ++c) gw[c] += d * inst.features[c];
            gb += d;
        }
        for (size_t c = 0; c < n; ++c) {
            gw[c] = gw[c] / static_cast<double>(m) + l2 * model.weights[c];
            model.weights[c] -= learning_rate * gw[c];
        }
        model.bias -= learning_rate * gb / static_cast<double>(m);
    }
    return model;
}

// --- Persistence ---------------------------------------------------------------

void save_forest_json(const ForestModel& model, const std::string& path,
                      const Provenance* prov) {
    json trees = json::array();
    for (const auto& tree : model.trees) {
        json nodes = json::array();
        for (const auto& n : tree.nodes)
            nodes.push_back(json::array(
                {n.feature, n.threshold, n.left, n.right, n.count_neg, n.count_pos}));
        trees.push_back(std::move(nodes));
    }
    json j{{"format_version", 1},
           {"type", "forest"},
           {"feature_dim", model.feature_dim},
           {"max_depth", model.max_depth},
           {"train_seed", model.train_seed},
           {"constant_model", model.constant_model},
           {"trees", std::move(trees)}};
    if (prov) {
        j["config_hash"] = prov->config_hash;
        j["seed"] = prov->seed;
    }
    std::ofstream out(path);
    if (!out) throw StageError("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
}

ForestModel load_forest_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw StageError("cannot read '" + path + "'");
    const json j = json::parse(in);
    if (j.at("type").get<std::string>() != "forest")
        throw SchemaError("model file '" + path + "' is not a forest");
    ForestModel model;
    model.feature_dim = j.at("feature_dim").get<size_t>();
    model.max_depth = j.at("max_depth").get<int>();
    model.train_seed = j.at("train_seed").get<uint64_t>();
    model.constant_model = j.at("constant_model").get<bool>();
    for (const auto& tj : j.at("trees")) {
        DecisionTree tree;
        for (const auto& nj : tj) {
            TreeNode n;
            n.feature = nj.at(0).get<int>();
            n.threshold = nj.at(1).get<double>();
            n.left = nj.at(2).get<int>();
            n.right = nj.at(3).get<int>();
            n.count_neg = nj.at(4).get<double>();
            n.count_pos = nj.at(5).get<double>();
            tree.nodes.push_back(n);
        }
        model.trees.push_back(std::move(tree));
    }
    return model;
}

} // namespace xnudge
