#include "xnudge/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "xnudge/rng.hpp"

using nlohmann::json;

namespace xnudge {

namespace {

[[noreturn]] void bad_field(const std::string& path, const std::string& why) {
    throw ConfigError("config field '" + path + "': " + why);
}

const json* find(const json& j, const std::string& key) {
    auto it = j.find(key);
    return it == j.end() ? nullptr : &*it;
}

template <class T>
T get_or(const json& j, const std::string& path, const std::string& key, T fallback) {
    const json* v = find(j, key);
    if (!v) return fallback;
    try {
        return v->get<T>();
    } catch (const json::exception&) {
        bad_field(path + "." + key, "wrong type");
    }
}

json section(const json& j, const std::string& key) {
    const json* v = find(j, key);
    if (!v) return json::object();
    if (!v->is_object()) bad_field(key, "expected an object");
    return *v;
}

} // namespace

RunConfig config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    RunConfig cfg;
    cfg.schema_version = get_or<int>(j, "", "schema_version", 1);
    if (cfg.schema_version != 1)
        bad_field("schema_version", "unsupported version " + std::to_string(cfg.schema_version));
    cfg.seed = get_or<uint64_t>(j, "", "seed", cfg.seed);
    cfg.threads = get_or<int>(j, "", "threads", cfg.threads);

    const json tj = section(j, "task");
    cfg.task.kind = task_kind_from_string(get_or<std::string>(tj, "task", "kind", "census"));
    cfg.task.source = get_or<std::string>(tj, "task", "source", "synthetic");
    if (cfg.task.source != "synthetic" && cfg.task.source != "csv")
        bad_field("task.source", "must be 'synthetic' or 'csv'");
    cfg.task.csv_path = get_or<std::string>(tj, "task", "csv_path", "");

    if (const json* sj = find(tj, "csv_schema")) {
        CsvSchema& s = cfg.task.csv_schema;
        s.kind = cfg.task.kind;
        if (const json* fc = find(*sj, "feature_columns")) {
            for (const auto& cj : *fc) {
                ColumnSpec col;
                if (cj.is_string()) {
                    col.name = cj.get<std::string>();
                } else {
                    col.name = get_or<std::string>(cj, "task.csv_schema.feature_columns", "name", "");
                    col.categorical =
                        get_or<bool>(cj, "task.csv_schema.feature_columns", "categorical", false);
                }
                if (col.name.empty()) bad_field("task.csv_schema.feature_columns", "missing name");
                s.feature_columns.push_back(col);
            }
        }
        s.label_column = get_or<std::string>(*sj, "task.csv_schema", "label_column", "");
        s.group_column = get_or<std::string>(*sj, "task.csv_schema", "group_column", "");
        s.id_column = get_or<std::string>(*sj, "task.csv_schema", "id_column", "");
        s.labels_zero_one = get_or<bool>(*sj, "task.csv_schema", "labels_zero_one", false);
        s.group_vocab =
            get_or<std::vector<std::string>>(*sj, "task.csv_schema", "group_vocab", {});
    }

    cfg.task.synth = default_synth_config(cfg.task.kind);
    const json yj = section(tj, "synthetic");
    cfg.task.synth.num_instances =
        get_or<size_t>(yj, "task.synthetic", "num_instances", cfg.task.synth.num_instances);
    cfg.task.synth.num_features =
        get_or<size_t>(yj, "task.synthetic", "num_features", cfg.task.synth.num_features);
    cfg.task.synth.label_flip_prob =
        get_or<double>(yj, "task.synthetic", "label_flip_prob", cfg.task.synth.label_flip_prob);
    cfg.task.synth.group_as_feature =
        get_or<bool>(yj, "task.synthetic", "group_as_feature", cfg.task.synth.group_as_feature);
    cfg.task.synth.matched_pairs =
        get_or<bool>(yj, "task.synthetic", "matched_pairs", cfg.task.synth.matched_pairs);
    cfg.task.synth.group_vocab = get_or<std::vector<std::string>>(yj, "task.synthetic",
                                                                  "group_vocab",
                                                                  cfg.task.synth.group_vocab);
    cfg.task.synth.seed = get_or<uint64_t>(yj, "task.synthetic", "seed", cfg.seed);

    if (const json* fj = find(j, "split_fractions")) {
        if (!fj->is_array() || fj->size() != 3)
            bad_field("split_fractions", "expected an array of three numbers");
        for (size_t i = 0; i < 3; ++i) cfg.split_fractions[i] = fj->at(i).get<double>();
    }
    cfg.pool_size = get_or<size_t>(j, "", "pool_size", cfg.pool_size);
    cfg.pool_min_per_cell = get_or<size_t>(j, "", "pool_min_per_cell", cfg.pool_min_per_cell);

    const json aj = section(j, "ai_model");
    cfg.ai.num_trees = get_or<int>(aj, "ai_model", "num_trees", cfg.ai.num_trees);
    cfg.ai.max_depth = get_or<int>(aj, "ai_model", "max_depth", cfg.ai.max_depth);

    const json ej = section(j, "explainers");
    cfg.explainers.shapley_max_n =
        get_or<size_t>(ej, "explainers", "shapley_max_n", cfg.explainers.shapley_max_n);
    cfg.explainers.background_cap =
        get_or<size_t>(ej, "explainers", "background_cap", cfg.explainers.background_cap);
    cfg.explainers.lime_samples =
        get_or<size_t>(ej, "explainers", "lime_samples", cfg.explainers.lime_samples);
    cfg.explainers.lime_kernel_width =
        get_or<double>(ej, "explainers", "lime_kernel_width", cfg.explainers.lime_kernel_width);
    cfg.explainers.lime_ridge =
        get_or<double>(ej, "explainers", "lime_ridge", cfg.explainers.lime_ridge);
    const json gj = section(ej, "augment");
    cfg.explainers.augment.mask_frac =
        get_or<double>(gj, "explainers.augment", "mask_frac", cfg.explainers.augment.mask_frac);
    cfg.explainers.augment.amp_frac =
        get_or<double>(gj, "explainers.augment", "amp_frac", cfg.explainers.augment.amp_frac);
    cfg.explainers.augment.amp_factor =
        get_or<double>(gj, "explainers.augment", "amp_factor", cfg.explainers.augment.amp_factor);
    const json mj = section(ej, "mix");
    cfg.explainers.mix.shapley =
        get_or<double>(mj, "explainers.mix", "shapley", cfg.explainers.mix.shapley);
    cfg.explainers.mix.lime = get_or<double>(mj, "explainers.mix", "lime", cfg.explainers.mix.lime);
    cfg.explainers.mix.augmented =
        get_or<double>(mj, "explainers.mix", "augmented", cfg.explainers.mix.augmented);

    const json bj = section(j, "behavior");
    cfg.behavior.learning_rate =
        get_or<double>(bj, "behavior", "learning_rate", cfg.behavior.learning_rate);
    cfg.behavior.batch_size = get_or<int>(bj, "behavior", "batch_size", cfg.behavior.batch_size);
    cfg.behavior.epochs = get_or<int>(bj, "behavior", "epochs", cfg.behavior.epochs);
    cfg.behavior.hidden_dim = get_or<int>(bj, "behavior", "hidden_dim", cfg.behavior.hidden_dim);
    cfg.behavior.init_scale =
        get_or<double>(bj, "behavior", "init_scale", cfg.behavior.init_scale);
    cfg.cv_folds = get_or<int>(bj, "behavior", "cv_folds", cfg.cv_folds);

    const json sj = section(j, "sim");
    cfg.sim.train_population =
        get_or<size_t>(sj, "sim", "train_population", cfg.sim.train_population);
    cfg.sim.eval_population =
        get_or<size_t>(sj, "sim", "eval_population", cfg.sim.eval_population);
    PopulationConfig& pop = cfg.sim.population;
    pop.distortion_sd = get_or<double>(sj, "sim", "distortion_sd", pop.distortion_sd);
    pop.noise_sd = get_or<double>(sj, "sim", "noise_sd", pop.noise_sd);
    pop.anchor_low = get_or<double>(sj, "sim", "anchor_low", pop.anchor_low);
    pop.anchor_high = get_or<double>(sj, "sim", "anchor_high", pop.anchor_high);
    pop.sens_low = get_or<double>(sj, "sim", "sens_low", pop.sens_low);
    pop.sens_high = get_or<double>(sj, "sim", "sens_high", pop.sens_high);
    pop.decision_bias = get_or<double>(sj, "sim", "decision_bias", pop.decision_bias);
    pop.attention_k = get_or<int>(sj, "sim", "attention_k", pop.attention_k);

    const json nj = section(j, "manipulation");
    ManipulationConfig& man = cfg.manipulation;
    man.step_size = get_or<double>(nj, "manipulation", "step_size", man.step_size);
    man.tradeoff = get_or<double>(nj, "manipulation", "tradeoff", man.tradeoff);
    man.threshold = get_or<double>(nj, "manipulation", "threshold", man.threshold);
    man.max_rounds = get_or<int>(nj, "manipulation", "max_rounds", man.max_rounds);
    man.restarts = get_or<int>(nj, "manipulation", "restarts", man.restarts);
    man.init_low = get_or<double>(nj, "manipulation", "init_low", man.init_low);
    man.init_high = get_or<double>(nj, "manipulation", "init_high", man.init_high);
    man.hinge_margin = get_or<double>(nj, "manipulation", "hinge_margin", man.hinge_margin);

    const json rj = section(j, "targets");
    cfg.targets.mode = get_or<std::string>(rj, "targets", "mode", cfg.targets.mode);
    if (const json* gm = find(rj, "group_map")) {
        if (!gm->is_object()) bad_field("targets.group_map", "expected an object");
        for (auto it = gm->begin(); it != gm->end(); ++it)
            cfg.targets.group_map[it.key()] = it.value().get<int>();
    }
    cfg.targets.combiner_alpha =
        get_or<double>(rj, "targets", "combiner_alpha", cfg.targets.combiner_alpha);

    const json vj = section(j, "eval");
    cfg.eval.conditions = get_or<std::vector<std::string>>(vj, "eval", "conditions",
                                                           cfg.eval.conditions);
    cfg.eval.num_perms = get_or<int>(vj, "eval", "num_perms", cfg.eval.num_perms);

    cfg.validate();
    return cfg;
}

void RunConfig::validate() const {
    if (task.source == "csv") {
        if (task.csv_path.empty()) throw ConfigError("config field 'task.csv_path': required");
        if (task.csv_schema.feature_columns.empty())
            throw ConfigError("config field 'task.csv_schema.feature_columns': required");
        if (task.csv_schema.label_column.empty())
            throw ConfigError("config field 'task.csv_schema.label_column': required");
        if (task.csv_schema.group_column.empty())
            throw ConfigError("config field 'task.csv_schema.group_column': required");
        if (task.csv_schema.group_vocab.empty())
            throw ConfigError("config field 'task.csv_schema.group_vocab': required");
    }
    double sum = 0.0;
    for (double f : split_fractions) {
        if (f <= 0.0) throw ConfigError("config field 'split_fractions': entries must be > 0");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw ConfigError("config field 'split_fractions': must sum to 1");
    if (pool_size < 1) throw ConfigError("config field 'pool_size': must be >= 1");
    if (ai.num_trees < 1) throw ConfigError("config field 'ai_model.num_trees': must be >= 1");
    if (ai.max_depth < 1) throw ConfigError("config field 'ai_model.max_depth': must be >= 1");
    if (behavior.learning_rate <= 0.0)
        throw ConfigError("config field 'behavior.learning_rate': must be > 0");
    if (behavior.batch_size < 1)
        throw ConfigError("config field 'behavior.batch_size': must be >= 1");
    if (behavior.epochs < 1) throw ConfigError("config field 'behavior.epochs': must be >= 1");
    if (behavior.hidden_dim < 1)
        throw ConfigError("config field 'behavior.hidden_dim': must be >= 1");
    if (cv_folds < 2) throw ConfigError("config field 'behavior.cv_folds': must be >= 2");
    if (sim.train_population < 1)
        throw ConfigError("config field 'sim.train_population': must be >= 1");
    if (sim.eval_population < 1)
        throw ConfigError("config field 'sim.eval_population': must be >= 1");
    try {
        manipulation.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("config field 'manipulation': ") + e.what());
    }
    if (targets.mode != "adversarial" && targets.mode != "benign")
        throw ConfigError("config field 'targets.mode': must be 'adversarial' or 'benign'");
    for (const auto& c : eval.conditions)
        if (c != "shapley" && c != "lime" && c != "manipulated")
            throw ConfigError("config field 'eval.conditions': unknown condition '" + c + "'");
    if (eval.num_perms < 1000)
        throw ConfigError("config field 'eval.num_perms': must be >= 1000");
}

json config_to_json(const RunConfig& cfg) {
    json schema = json::object();
    if (cfg.task.source == "csv") {
        json cols = json::array();
        for (const auto& c : cfg.task.csv_schema.feature_columns)
            cols.push_back(json{{"name", c.name}, {"categorical", c.categorical}});
        schema = json{{"feature_columns", std::move(cols)},
                      {"label_column", cfg.task.csv_schema.label_column},
                      {"group_column", cfg.task.csv_schema.group_column},
                      {"id_column", cfg.task.csv_schema.id_column},
                      {"labels_zero_one", cfg.task.csv_schema.labels_zero_one},
                      {"group_vocab", cfg.task.csv_schema.group_vocab}};
    }
    return json{
        {"schema_version", cfg.schema_version},
        {"seed", cfg.seed},
        {"threads", cfg.threads},
        {"task",
         {{"kind", to_string(cfg.task.kind)},
          {"source", cfg.task.source},
          {"csv_path", cfg.task.csv_path},
          {"csv_schema", std::move(schema)},
          {"synthetic",
           {{"num_instances", cfg.task.synth.num_instances},
            {"num_features", cfg.task.synth.num_features},
            {"label_flip_prob", cfg.task.synth.label_flip_prob},
            {"group_as_feature", cfg.task.synth.group_as_feature},
            {"matched_pairs", cfg.task.synth.matched_pairs},
            {"group_vocab", cfg.task.synth.group_vocab},
            {"seed", cfg.task.synth.seed}}}}},
        {"split_fractions", cfg.split_fractions},
        {"pool_size", cfg.pool_size},
        {"pool_min_per_cell", cfg.pool_min_per_cell},
        {"ai_model", {{"num_trees", cfg.ai.num_trees}, {"max_depth", cfg.ai.max_depth}}},
        {"explainers",
         {{"shapley_max_n", cfg.explainers.shapley_max_n},
          {"background_cap", cfg.explainers.background_cap},
          {"lime_samples", cfg.explainers.lime_samples},
          {"lime_kernel_width", cfg.explainers.lime_kernel_width},
          {"lime_ridge", cfg.explainers.lime_ridge},
          {"augment",
           {{"mask_frac", cfg.explainers.augment.mask_frac},
            {"amp_frac", cfg.explainers.augment.amp_frac},
            {"amp_factor", cfg.explainers.augment.amp_factor}}},
          {"mix",
           {{"shapley", cfg.explainers.mix.shapley},
            {"lime", cfg.explainers.mix.lime},
            {"augmented", cfg.explainers.mix.augmented}}}}},
        {"behavior",
         {{"learning_rate", cfg.behavior.learning_rate},
          {"batch_size", cfg.behavior.batch_size},
          {"epochs", cfg.behavior.epochs},
          {"hidden_dim", cfg.behavior.hidden_dim},
          {"init_scale", cfg.behavior.init_scale},
          {"cv_folds", cfg.cv_folds}}},
        {"sim",
         {{"train_population", cfg.sim.train_population},
          {"eval_population", cfg.sim.eval_population},
          {"distortion_sd", cfg.sim.population.distortion_sd},
          {"noise_sd", cfg.sim.population.noise_sd},
          {"anchor_low", cfg.sim.population.anchor_low},
          {"anchor_high", cfg.sim.population.anchor_high},
          {"sens_low", cfg.sim.population.sens_low},
          {"sens_high", cfg.sim.population.sens_high},
          {"decision_bias", cfg.sim.population.decision_bias},
          {"attention_k", cfg.sim.population.attention_k}}},
        {"manipulation",
         {{"step_size", cfg.manipulation.step_size},
          {"tradeoff", cfg.manipulation.tradeoff},
          {"threshold", cfg.manipulation.threshold},
          {"max_rounds", cfg.manipulation.max_rounds},
          {"restarts", cfg.manipulation.restarts},
          {"init_low", cfg.manipulation.init_low},
          {"init_high", cfg.manipulation.init_high},
          {"hinge_margin", cfg.manipulation.hinge_margin}}},
        {"targets",
         {{"mode", cfg.targets.mode},
          {"group_map", cfg.targets.group_map},
          {"combiner_alpha", cfg.targets.combiner_alpha}}},
        {"eval", {{"conditions", cfg.eval.conditions}, {"num_perms", cfg.eval.num_perms}}}};
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

std::string config_hash(const RunConfig& cfg) {
    const std::string dump = config_to_json(cfg).dump();
    const uint64_t h = fnv1a64(dump);
    std::ostringstream os;
    os << std::hex << h;
    std::string s = os.str();
    while (s.size() < 16) s = "0" + s;
    return s;
}

} // namespace xnudge
