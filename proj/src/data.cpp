#include "xnudge/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "xnudge/rng.hpp"

using nlohmann::json;

namespace xnudge {

std::string to_string(TaskKind k) {
    switch (k) {
        case TaskKind::census: return "census";
        case TaskKind::recidivism: return "recidivism";
        case TaskKind::bias: return "bias";
        case TaskKind::toxicity: return "toxicity";
        case TaskKind::synthetic: return "synthetic";
    }
    return "synthetic";
}

TaskKind task_kind_from_string(const std::string& s) {
    if (s == "census") return TaskKind::census;
    if (s == "recidivism") return TaskKind::recidivism;
    if (s == "bias") return TaskKind::bias;
    if (s == "toxicity") return TaskKind::toxicity;
    if (s == "synthetic") return TaskKind::synthetic;
    throw ConfigError("unknown task kind '" + s + "'");
}

std::string to_string(ExplKind k) {
    switch (k) {
        case ExplKind::shapley: return "shapley";
        case ExplKind::lime: return "lime";
        case ExplKind::augmented: return "augmented";
        case ExplKind::manipulated: return "manipulated";
    }
    return "shapley";
}

ExplKind expl_kind_from_string(const std::string& s) {
    if (s == "shapley") return ExplKind::shapley;
    if (s == "lime") return ExplKind::lime;
    if (s == "augmented") return ExplKind::augmented;
    if (s == "manipulated") return ExplKind::manipulated;
    throw ConfigError("unknown explanation kind '" + s + "'");
}

bool Dataset::has_group(const std::string& g) const {
    return std::find(group_vocab.begin(), group_vocab.end(), g) != group_vocab.end();
}

// --- CSV ---------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

double parse_number(const std::string& cell, size_t row, const std::string& col) {
    const std::string t = trim(cell);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || ptr != t.data() + t.size())
        throw SchemaError("non-numeric value '" + cell + "' in column '" + col + "' at data row " +
                          std::to_string(row));
    return v;
}

} // namespace

Dataset load_csv(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open CSV file '" + path + "'");

    std::string header_line;
    if (!std::getline(in, header_line)) throw SchemaError("empty CSV file '" + path + "'");
    const std::vector<std::string> header = split_line(header_line);

    auto column_index = [&](const std::string& name) -> size_t {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end())
            throw SchemaError("missing column '" + name + "' in '" + path + "'");
        return static_cast<size_t>(it - header.begin());
    };

    std::vector<size_t> feat_idx;
    for (const auto& col : schema.feature_columns) feat_idx.push_back(column_index(col.name));
    const size_t label_idx = column_index(schema.label_column);
    const size_t group_idx = column_index(schema.group_column);
    const bool has_id = !schema.id_column.empty();
    const size_t id_idx = has_id ? column_index(schema.id_column) : 0;

    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        auto cells = split_line(line);
        if (cells.size() != header.size())
            throw SchemaError("row " + std::to_string(rows.size() + 1) + " has " +
                              std::to_string(cells.size()) + " cells, header has " +
                              std::to_string(header.size()));
        rows.push_back(std::move(cells));
    }

    // Categorical vocabularies from the data, sorted for stable encoding.
    std::vector<std::vector<std::string>> cat_values(schema.feature_columns.size());
    for (size_t c = 0; c < schema.feature_columns.size(); ++c) {
        if (!schema.feature_columns[c].categorical) continue;
        std::set<std::string> vals;
        for (const auto& r : rows) vals.insert(r[feat_idx[c]]);
        cat_values[c].assign(vals.begin(), vals.end());
    }

    Dataset ds;
    ds.kind = schema.kind;
    ds.group_vocab = schema.group_vocab;
    for (size_t c = 0; c < schema.feature_columns.size(); ++c) {
        const auto& col = schema.feature_columns[c];
        if (col.categorical)
            for (const auto& v : cat_values[c]) ds.feature_names.push_back(col.name + "=" + v);
        else
            ds.feature_names.push_back(col.name);
    }
    ds.n = ds.feature_names.size();

    for (size_t r = 0; r < rows.size(); ++r) {
        const auto& cells = rows[r];
        TaskInstance inst;
        inst.kind = schema.kind;
        inst.id = has_id ? cells[id_idx] : "row-" + std::to_string(r);
        inst.features.reserve(ds.n);
        for (size_t c = 0; c < schema.feature_columns.size(); ++c) {
            if (schema.feature_columns[c].categorical) {
                for (const auto& v : cat_values[c])
                    inst.features.push_back(cells[feat_idx[c]] == v ? 1.0 : 0.0);
            } else {
                inst.features.push_back(
                    parse_number(cells[feat_idx[c]], r, schema.feature_columns[c].name));
            }
        }
        const double raw_label = parse_number(cells[label_idx], r, schema.label_column);
        if (schema.labels_zero_one) {
            if (raw_label != 0.0 && raw_label != 1.0)
                throw SchemaError("label at data row " + std::to_string(r) +
                                  " is not in {0,1} (labels_zero_one schema)");
            inst.label = raw_label == 1.0 ? Label::positive() : Label::negative();
        } else {
            if (raw_label != -1.0 && raw_label != 1.0)
                throw SchemaError("label at data row " + std::to_string(r) +
                                  " is not in {-1,+1}; set labels_zero_one to remap {0,1}");
            inst.label = Label::from_int(static_cast<int>(raw_label));
        }
        inst.group = cells[group_idx];
        if (!ds.has_group(inst.group))
            throw VocabularyError("unknown group value '" + inst.group + "' at data row " +
                                  std::to_string(r));
        ds.instances.push_back(std::move(inst));
    }

    std::set<std::string> ids;
    for (const auto& inst : ds.instances)
        if (!ids.insert(inst.id).second)
            throw SchemaError("duplicate instance id '" + inst.id + "'");

    normalize(ds);
    return ds;
}

void normalize(Dataset& ds) {
    ds.norm.col_min.assign(ds.n, 0.0);
    ds.norm.col_max.assign(ds.n, 0.0);
    if (ds.instances.empty()) return;
    for (size_t c = 0; c < ds.n; ++c) {
        double lo = ds.instances[0].features[c];
        double hi = lo;
        for (const auto& inst : ds.instances) {
            lo = std::min(lo, inst.features[c]);
            hi = std::max(hi, inst.features[c]);
        }
        ds.norm.col_min[c] = lo;
        ds.norm.col_max[c] = hi;
    }
    for (auto& inst : ds.instances) inst.features = apply_normalization(ds.norm, inst.features);
}

Vec apply_normalization(const Normalization& norm, const Vec& raw) {
    require(raw.size() == norm.col_min.size(), "feature dimension mismatch in normalization");
    Vec out(raw.size());
    for (size_t c = 0; c < raw.size(); ++c) {
        const double range = norm.col_max[c] - norm.col_min[c];
        out[c] = range == 0.0 ? 0.0 : (raw[c] - norm.col_min[c]) / range;
    }
    return out;
}

// --- Split -------------------------------------------------------------------

namespace {

// Largest-remainder allocation of m items over the given fractions.
std::vector<size_t> allocate_counts(size_t m, const std::vector<double>& fractions) {
    std::vector<size_t> counts(fractions.size());
    std::vector<std::pair<double, size_t>> rema;
    size_t assigned = 0;
    for (size_t s = 0; s < fractions.size(); ++s) {
        const double quota = fractions[s] * static_cast<double>(m);
        counts[s] = static_cast<size_t>(quota);
        assigned += counts[s];
        rema.push_back({quota - static_cast<double>(counts[s]), s});
    }
    std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (size_t i = 0; assigned < m; ++i, ++assigned) counts[rema[i % rema.size()].second]++;
    return counts;
}

Dataset subset(const Dataset& ds, std::vector<size_t> idx) {
    std::sort(idx.begin(), idx.end());
    Dataset out;
    out.n = ds.n;
    out.group_vocab = ds.group_vocab;
    out.feature_names = ds.feature_names;
    out.norm = ds.norm;
    out.kind = ds.kind;
    out.split_seed = ds.split_seed;
    out.instances.reserve(idx.size());
    for (size_t i : idx) out.instances.push_back(ds.instances[i]);
    return out;
}

} // namespace

std::array<Dataset, 3> split(const Dataset& ds, std::array<double, 3> fractions, uint64_t seed) {
    double sum = 0.0;
    for (double f : fractions) {
        if (f <= 0.0) throw ContractError("split fractions must be positive");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw ContractError("split fractions must sum to 1, got " + std::to_string(sum));

    // Largest-remainder per group with carried residuals, so group shares stay
    // within +-1 while the split totals stay exact.
    std::array<std::vector<size_t>, 3> assigned;
    std::array<double, 3> carry{0.0, 0.0, 0.0};
    for (size_t g = 0; g < ds.group_vocab.size(); ++g) {
        std::vector<size_t> members;
        for (size_t i = 0; i < ds.instances.size(); ++i)
            if (ds.instances[i].group == ds.group_vocab[g]) members.push_back(i);
        if (members.empty()) continue;
        Rng rng(derive_seed(seed, {stream::split, g}));
        rng.shuffle(members);

        std::array<double, 3> quota;
        std::array<size_t, 3> counts;
        size_t floored = 0;
        for (size_t s = 0; s < 3; ++s) {
            quota[s] = fractions[s] * static_cast<double>(members.size()) + carry[s];
            counts[s] = static_cast<size_t>(std::max(0.0, std::floor(quota[s])));
            floored += counts[s];
        }
        std::array<size_t, 3> order{0, 1, 2};
        std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            const double ra = quota[a] - std::floor(quota[a]);
            const double rb = quota[b] - std::floor(quota[b]);
            if (ra != rb) return ra > rb;
            return a < b;
        });
        for (size_t k = 0; floored < members.size(); ++k, ++floored) counts[order[k % 3]]++;
        for (size_t s = 0; s < 3; ++s)
            carry[s] = quota[s] - static_cast<double>(counts[s]);

        size_t pos = 0;
        for (size_t s = 0; s < 3; ++s) {
            if (counts[s] == 0)
                throw StratificationError("split " + std::to_string(s) +
                                          " would receive zero instances of group '" +
                                          ds.group_vocab[g] + "'");
            for (size_t k = 0; k < counts[s]; ++k) assigned[s].push_back(members[pos++]);
        }
    }

    std::array<Dataset, 3> out{subset(ds, assigned[0]), subset(ds, assigned[1]),
                               subset(ds, assigned[2])};
    for (auto& d : out) d.split_seed = seed;
    return out;
}

Dataset stratified_sample(const Dataset& ds, size_t count, size_t min_per_cell, uint64_t seed) {
    require(count > 0 && count <= ds.size(), "sample count out of range");
    std::map<std::pair<std::string, int>, std::vector<size_t>> cells;
    for (size_t i = 0; i < ds.instances.size(); ++i)
        cells[{ds.instances[i].group, ds.instances[i].label.value()}].push_back(i);

    std::vector<double> fractions;
    std::vector<const std::vector<size_t>*> cell_members;
    for (const auto& [key, members] : cells) {
        fractions.push_back(static_cast<double>(members.size()) /
                            static_cast<double>(ds.size()));
        cell_members.push_back(&members);
    }
    auto counts = allocate_counts(count, fractions);
    for (size_t c = 0; c < counts.size(); ++c) {
        counts[c] = std::max(counts[c], min_per_cell);
        if (counts[c] > cell_members[c]->size())
            throw StratificationError(
                "not enough instances in a (group,label) cell to sample a task pool");
    }
    // max() may have pushed the total above count: shave the biggest cells.
    size_t total = std::accumulate(counts.begin(), counts.end(), size_t{0});
    while (total > count) {
        size_t big = 0;
        for (size_t c = 1; c < counts.size(); ++c)
            if (counts[c] > counts[big]) big = c;
        if (counts[big] <= min_per_cell) break;
        counts[big]--;
        total--;
    }

    std::vector<size_t> picked;
    size_t cell_no = 0;
    for (const auto& [key, members] : cells) {
        std::vector<size_t> shuffled = members;
        Rng rng(derive_seed(seed, {stream::pool, cell_no}));
        rng.shuffle(shuffled);
        for (size_t k = 0; k < counts[cell_no]; ++k) picked.push_back(shuffled[k]);
        cell_no++;
    }
    return subset(ds, picked);
}

// --- JSON persistence ----------------------------------------------------------

namespace {

json instance_to_json(const TaskInstance& inst) {
    return json{{"id", inst.id},
                {"features", inst.features},
                {"label", inst.label.value()},
                {"group", inst.group}};
}

TaskInstance instance_from_json(const json& j, TaskKind kind) {
    TaskInstance inst;
    inst.id = j.at("id").get<std::string>();
    inst.features = j.at("features").get<Vec>();
    inst.label = Label::from_int(j.at("label").get<int>());
    inst.group = j.at("group").get<std::string>();
    inst.kind = kind;
    return inst;
}

void write_json_file(const json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw StageError("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
}

void stamp(json& j, const Provenance* prov) {
    if (!prov) return;
    j["config_hash"] = prov->config_hash;
    j["seed"] = prov->seed;
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw StageError("cannot read '" + path + "'");
    return json::parse(in);
}

} // namespace

void save_dataset_json(const Dataset& ds, const std::string& path,
                       const Provenance* prov) {
    json j{{"format_version", 1},
           {"kind", to_string(ds.kind)},
           {"n", ds.n},
           {"group_vocab", ds.group_vocab},
           {"feature_names", ds.feature_names},
           {"split_seed", ds.split_seed},
           {"normalization", {{"col_min", ds.norm.col_min}, {"col_max", ds.norm.col_max}}}};
    json arr = json::array();
    for (const auto& inst : ds.instances) arr.push_back(instance_to_json(inst));
    j["instances"] = std::move(arr);
    stamp(j, prov);
    write_json_file(j, path);
}

Dataset load_dataset_json(const std::string& path) {
    const json j = read_json_file(path);
    Dataset ds;
    ds.kind = task_kind_from_string(j.at("kind").get<std::string>());
    ds.n = j.at("n").get<size_t>();
    ds.group_vocab = j.at("group_vocab").get<std::vector<std::string>>();
    ds.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    ds.split_seed = j.at("split_seed").get<uint64_t>();
    ds.norm.col_min = j.at("normalization").at("col_min").get<Vec>();
    ds.norm.col_max = j.at("normalization").at("col_max").get<Vec>();
    for (const auto& ij : j.at("instances")) ds.instances.push_back(instance_from_json(ij, ds.kind));
    return ds;
}

void save_behavior_log_json(const std::vector<BehaviorRecord>& records, const std::string& path,
                            const Provenance* prov) {
    json arr = json::array();
    for (const auto& r : records) {
        arr.push_back(json{{"dm", r.dm_id},
                           {"instance", instance_to_json(r.instance)},
                           {"ai_label", r.ai_label.value()},
                           {"explanation", r.explanation.attributions},
                           {"explanation_kind", to_string(r.explanation.kind)},
                           {"human_label", r.human_label.value()}});
    }
    json j{{"format_version", 1}, {"records", std::move(arr)}};
    stamp(j, prov);
    write_json_file(j, path);
}

std::vector<BehaviorRecord> load_behavior_log_json(const std::string& path) {
    const json j = read_json_file(path);
    std::vector<BehaviorRecord> records;
    for (const auto& rj : j.at("records")) {
        BehaviorRecord r;
        r.dm_id = rj.at("dm").get<std::string>();
        r.instance = instance_from_json(rj.at("instance"), TaskKind::synthetic);
        r.ai_label = Label::from_int(rj.at("ai_label").get<int>());
        r.explanation.attributions = rj.at("explanation").get<Vec>();
        r.explanation.kind = expl_kind_from_string(rj.at("explanation_kind").get<std::string>());
        r.human_label = Label::from_int(rj.at("human_label").get<int>());
        records.push_back(std::move(r));
    }
    return records;
}

void save_behavior_log_csv(const std::vector<BehaviorRecord>& records, const std::string& path,
                           const Provenance* prov) {
    std::ofstream out(path);
    if (!out) throw StageError("cannot write '" + path + "'");
    size_t n = records.empty() ? 0 : records[0].instance.features.size();
    if (prov)
        out << "# xnudge format_version=1 config_hash=" << prov->config_hash << " seed="
            << prov->seed << '\n';
    out << "dm,instance,group,y,y_m,y_h,explanation_kind";
    for (size_t c = 0; c < n; ++c) out << ",x" << c;
    for (size_t c = 0; c < n; ++c) out << ",e" << c;
    out << '\n';
    char buf[32];
    auto num = [&](double v) {
        snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    for (const auto& r : records) {
        out << r.dm_id << ',' << r.instance.id << ',' << r.instance.group << ','
            << r.instance.label.value() << ',' << r.ai_label.value() << ','
            << r.human_label.value() << ',' << to_string(r.explanation.kind);
        for (double v : r.instance.features) out << ',' << num(v);
        for (double v : r.explanation.attributions) out << ',' << num(v);
        out << '\n';
    }
}

// --- Synthetic generation ------------------------------------------------------

SynthConfig default_synth_config(TaskKind kind) {
    SynthConfig cfg;
    cfg.kind = kind;
    switch (kind) {
        case TaskKind::census:
            cfg.num_features = 7;
            cfg.group_vocab = {"male", "female"};
            cfg.group_as_feature = true;
            break;
        case TaskKind::recidivism:
            cfg.num_features = 8;
            cfg.group_vocab = {"black", "white"};
            cfg.group_as_feature = true;
            break;
        case TaskKind::bias:
            cfg.num_features = 10;
            cfg.group_vocab = {"dem", "rep"};
            cfg.group_as_feature = false;
            break;
        case TaskKind::toxicity:
            cfg.num_features = 10;
            cfg.group_vocab = {"white", "black"};
            cfg.group_as_feature = false;
            break;
        case TaskKind::synthetic:
            cfg.num_features = 6;
            cfg.group_vocab = {"A", "B"};
            cfg.group_as_feature = false;
            break;
    }
    return cfg;
}

SynthTask gen_synthetic(const SynthConfig& cfg) {
    require(cfg.num_instances > 0, "num_instances must be positive");
    require(cfg.num_features >= 2, "num_features must be at least 2");
    require(cfg.group_vocab.size() >= 2, "group vocabulary needs at least two tags");
    require(!cfg.group_as_feature || cfg.group_vocab.size() == 2,
            "group_as_feature requires a binary group vocabulary");
    require(!(cfg.matched_pairs && cfg.group_as_feature),
            "matched_pairs needs the group tag outside the feature vector");
    require(!cfg.matched_pairs || cfg.group_vocab.size() == 2,
            "matched_pairs requires a binary group vocabulary");

    Rng rng(derive_seed(cfg.seed, {stream::synth}));
    const size_t n = cfg.num_features;

    // Generating rule: zero weight on the group column keeps the label
    // independent of the group.
    Vec w(n);
    for (size_t c = 0; c < n; ++c) {
        const double mag = rng.uniform(0.7, 1.3);
        const double sign = rng.uniform01() < 0.5 ? -1.0 : 1.0;
        w[c] = mag * sign;
    }
    if (cfg.group_as_feature) w[0] = 0.0;

    Dataset ds;
    ds.kind = cfg.kind;
    ds.n = n;
    ds.group_vocab = cfg.group_vocab;
    for (size_t c = 0; c < n; ++c) ds.feature_names.push_back("x" + std::to_string(c));

    auto draw_instance = [&](const std::string& id) {
        TaskInstance inst;
        inst.kind = cfg.kind;
        inst.id = id;
        inst.features.resize(n);
        for (size_t c = 0; c < n; ++c) inst.features[c] = rng.uniform01();
        double score = 0.0;
        for (size_t c = 0; c < n; ++c) score += w[c] * (inst.features[c] - 0.5);
        Label y = Label::from_sign(score);
        if (rng.uniform01() < cfg.label_flip_prob) y = y.flipped();
        inst.label = y;
        return inst;
    };

    if (cfg.matched_pairs) {
        for (size_t k = 0; ds.instances.size() < cfg.num_instances; ++k) {
            TaskInstance base = draw_instance("pair-" + std::to_string(k));
            for (size_t g = 0; g < 2 && ds.instances.size() < cfg.num_instances; ++g) {
                TaskInstance twin = base;
                twin.id = base.id + "-" + cfg.group_vocab[g];
                twin.group = cfg.group_vocab[g];
                ds.instances.push_back(std::move(twin));
            }
        }
    } else {
        for (size_t i = 0; i < cfg.num_instances; ++i) {
            TaskInstance inst = draw_instance("inst-" + std::to_string(i));
            const size_t gidx = rng.uniform_index(cfg.group_vocab.size());
            inst.group = cfg.group_vocab[gidx];
            // overwriting the group column cannot change the label: its
            // generating weight is zero
            if (cfg.group_as_feature) inst.features[0] = static_cast<double>(gidx);
            ds.instances.push_back(std::move(inst));
        }
    }

    normalize(ds);
    return SynthTask{std::move(ds), std::move(w)};
}

} // namespace xnudge
