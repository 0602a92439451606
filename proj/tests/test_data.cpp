#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>

#include "xnudge/data.hpp"
#include "xnudge/rng.hpp"

using namespace xnudge;

namespace {

std::string write_temp_csv(const std::string& name, const std::string& content) {
    const std::string path = "/tmp/xnudge_test_" + name + ".csv";
    std::ofstream out(path);
    out << content;
    return path;
}

CsvSchema basic_schema() {
    CsvSchema s;
    s.feature_columns = {{"age", false}, {"hours", false}};
    s.label_column = "income";
    s.group_column = "sex";
    s.group_vocab = {"male", "female"};
    s.kind = TaskKind::census;
    return s;
}

} // namespace

TEST_CASE("load_csv maps a small file onto a dataset") {
    const auto path = write_temp_csv("basic",
                                     "age,hours,sex,income\n"
                                     "30,40,male,1\n"
                                     "45,20,female,-1\n"
                                     "22,60,male,-1\n");
    const Dataset ds = load_csv(path, basic_schema());
    CHECK(ds.n == 2);
    CHECK(ds.size() == 3);
    CHECK(ds.group_vocab == std::vector<std::string>{"male", "female"});
    CHECK(ds.instances[0].label == Label::positive());
    CHECK(ds.instances[1].label == Label::negative());
    CHECK(ds.instances[1].group == "female");
    // min-max normalization to [0,1]
    CHECK(ds.instances[0].features[0] == doctest::Approx((30.0 - 22.0) / (45.0 - 22.0)));
    CHECK(ds.instances[2].features[1] == 1.0);
}

TEST_CASE("zero-range columns normalize to 0") {
    const auto path = write_temp_csv("flat",
                                     "age,hours,sex,income\n"
                                     "30,40,male,1\n"
                                     "30,20,female,-1\n");
    const Dataset ds = load_csv(path, basic_schema());
    CHECK(ds.instances[0].features[0] == 0.0);
    CHECK(ds.instances[1].features[0] == 0.0);
}

TEST_CASE("load_csv schema errors name the offender") {
    const auto bad_col = write_temp_csv("badcol", "age,sex,income\n30,male,1\n");
    CHECK_THROWS_WITH_AS(load_csv(bad_col, basic_schema()),
                         doctest::Contains("missing column 'hours'"), SchemaError);

    const auto bad_cell = write_temp_csv("badcell",
                                         "age,hours,sex,income\n30,40,male,1\nx,20,female,-1\n");
    CHECK_THROWS_WITH_AS(load_csv(bad_cell, basic_schema()), doctest::Contains("row 1"),
                         SchemaError);

    const auto bad_group = write_temp_csv("badgroup",
                                          "age,hours,sex,income\n30,40,other,1\n");
    CHECK_THROWS_AS(load_csv(bad_group, basic_schema()), VocabularyError);
}

TEST_CASE("labels outside {-1,+1} need the explicit zero-one flag") {
    const auto path = write_temp_csv("zeroone",
                                     "age,hours,sex,income\n30,40,male,1\n45,20,female,0\n");
    CHECK_THROWS_AS(load_csv(path, basic_schema()), SchemaError);
    CsvSchema s = basic_schema();
    s.labels_zero_one = true;
    const Dataset ds = load_csv(path, s);
    CHECK(ds.instances[0].label == Label::positive());
    CHECK(ds.instances[1].label == Label::negative());
}

TEST_CASE("categorical features one-hot encode in place") {
    CsvSchema s;
    s.feature_columns = {{"age", false}, {"job", true}};
    s.label_column = "y";
    s.group_column = "g";
    s.group_vocab = {"a", "b"};
    const auto path = write_temp_csv("onehot",
                                     "age,job,g,y\n30,tech,a,1\n40,care,b,-1\n50,tech,a,1\n");
    const Dataset ds = load_csv(path, s);
    CHECK(ds.n == 3); // age, job=care, job=tech
    CHECK(ds.feature_names == std::vector<std::string>{"age", "job=care", "job=tech"});
    CHECK(ds.instances[0].features[2] == 1.0);
    CHECK(ds.instances[1].features[1] == 1.0);
}

TEST_CASE("census-style file with 7 feature columns gives n=7") {
    std::string header = "f0,f1,f2,f3,f4,f5,f6,sex,income\n";
    std::string row1 = "1,2,3,4,5,6,7,male,1\n";
    std::string row2 = "2,3,4,5,6,7,8,female,-1\n";
    CsvSchema s;
    for (int i = 0; i < 7; ++i) s.feature_columns.push_back({"f" + std::to_string(i), false});
    s.label_column = "income";
    s.group_column = "sex";
    s.group_vocab = {"male", "female"};
    s.kind = TaskKind::census;
    const Dataset ds = load_csv(write_temp_csv("census7", header + row1 + row2), s);
    CHECK(ds.n == 7);
}

TEST_CASE("dataset json round-trip preserves features bit for bit") {
    SynthConfig sc = default_synth_config(TaskKind::census);
    sc.num_instances = 60;
    sc.seed = 5;
    const Dataset ds = gen_synthetic(sc).dataset;
    save_dataset_json(ds, "/tmp/xnudge_test_roundtrip.json");
    const Dataset back = load_dataset_json("/tmp/xnudge_test_roundtrip.json");
    REQUIRE(back.size() == ds.size());
    CHECK(back.n == ds.n);
    for (size_t i = 0; i < ds.size(); ++i) {
        CHECK(back.instances[i].id == ds.instances[i].id);
        CHECK(back.instances[i].features == ds.instances[i].features); // exact
        CHECK(back.instances[i].label == ds.instances[i].label);
        CHECK(back.instances[i].group == ds.instances[i].group);
    }
    CHECK(back.norm.col_min == ds.norm.col_min);
    CHECK(back.norm.col_max == ds.norm.col_max);
}

TEST_CASE("normalization is idempotent") {
    SynthConfig sc = default_synth_config(TaskKind::synthetic);
    sc.num_instances = 40;
    sc.seed = 3;
    Dataset ds = gen_synthetic(sc).dataset; // already normalized
    Dataset again = ds;
    normalize(again);
    for (size_t i = 0; i < ds.size(); ++i)
        for (size_t c = 0; c < ds.n; ++c)
            CHECK(again.instances[i].features[c] ==
                  doctest::Approx(ds.instances[i].features[c]).epsilon(1e-12));
}

TEST_CASE("split produces a deterministic stratified partition") {
    SynthConfig sc = default_synth_config(TaskKind::census);
    sc.num_instances = 100;
    sc.seed = 77;
    const Dataset ds = gen_synthetic(sc).dataset;

    const auto parts = split(ds, {0.6, 0.2, 0.2}, 7);
    CHECK(parts[0].size() == 60);
    CHECK(parts[1].size() == 20);
    CHECK(parts[2].size() == 20);

    const auto again = split(ds, {0.6, 0.2, 0.2}, 7);
    for (int s = 0; s < 3; ++s) {
        REQUIRE(again[s].size() == parts[s].size());
        for (size_t i = 0; i < parts[s].size(); ++i)
            CHECK(again[s].instances[i].id == parts[s].instances[i].id);
    }

    // partition: disjoint ids, union covers everything
    std::set<std::string> seen;
    for (const auto& part : parts)
        for (const auto& inst : part.instances) CHECK(seen.insert(inst.id).second);
    CHECK(seen.size() == ds.size());

    // stratification: group shares preserved within +-1 per group
    for (const auto& g : ds.group_vocab) {
        size_t total = 0;
        for (const auto& inst : ds.instances)
            if (inst.group == g) total++;
        const double fractions[3] = {0.6, 0.2, 0.2};
        for (int s = 0; s < 3; ++s) {
            size_t got = 0;
            for (const auto& inst : parts[s].instances)
                if (inst.group == g) got++;
            CHECK(std::abs(static_cast<double>(got) -
                           fractions[s] * static_cast<double>(total)) <= 1.0 + 1e-9);
        }
    }
}

TEST_CASE("split rejects bad fractions and starved groups") {
    SynthConfig sc = default_synth_config(TaskKind::census);
    sc.num_instances = 30;
    sc.seed = 2;
    const Dataset ds = gen_synthetic(sc).dataset;
    CHECK_THROWS_AS(split(ds, {0.5, 0.5, 0.1}, 1), ContractError);
    CHECK_THROWS_AS(split(ds, {0.5, 0.6, -0.1}, 1), ContractError);

    // Two instances of a group cannot populate three splits.
    Dataset tiny = ds;
    tiny.instances.resize(6);
    for (size_t i = 0; i < 6; ++i) tiny.instances[i].group = i < 4 ? "male" : "female";
    CHECK_THROWS_AS(split(tiny, {0.4, 0.3, 0.3}, 1), StratificationError);
}

TEST_CASE("synthetic task presets match the named task shapes") {
    CHECK(default_synth_config(TaskKind::census).num_features == 7);
    CHECK(default_synth_config(TaskKind::recidivism).num_features == 8);
    CHECK(default_synth_config(TaskKind::census).group_vocab ==
          std::vector<std::string>{"male", "female"});

    SynthConfig sc = default_synth_config(TaskKind::census);
    sc.num_instances = 80;
    sc.seed = 10;
    const SynthTask a = gen_synthetic(sc);
    const SynthTask b = gen_synthetic(sc);
    CHECK(a.true_weights == b.true_weights);
    CHECK(a.dataset.instances[17].features == b.dataset.instances[17].features);
    CHECK(a.true_weights[0] == 0.0); // group column carries no label signal
    for (const auto& inst : a.dataset.instances) {
        CHECK(inst.features.size() == 7);
        for (double f : inst.features) {
            CHECK(f >= 0.0);
            CHECK(f <= 1.0);
        }
    }
}

TEST_CASE("behavior log json round-trip") {
    SynthConfig sc = default_synth_config(TaskKind::census);
    sc.num_instances = 4;
    sc.seed = 21;
    const Dataset ds = gen_synthetic(sc).dataset;
    std::vector<BehaviorRecord> records;
    for (const auto& inst : ds.instances) {
        BehaviorRecord r;
        r.instance = inst;
        r.ai_label = Label::positive();
        r.explanation = Explanation{Vec(ds.n, 0.25), ExplKind::lime};
        r.human_label = Label::negative();
        r.dm_id = "dm-0";
        records.push_back(r);
    }
    save_behavior_log_json(records, "/tmp/xnudge_test_log.json");
    const auto back = load_behavior_log_json("/tmp/xnudge_test_log.json");
    REQUIRE(back.size() == records.size());
    CHECK(back[2].instance.features == records[2].instance.features);
    CHECK(back[2].explanation.kind == ExplKind::lime);
    CHECK(back[2].human_label == Label::negative());
}

TEST_CASE("label type rejects everything but -1 and +1") {
    CHECK_THROWS_AS(Label::from_int(0), ContractError);
    CHECK_THROWS_AS(Label::from_int(2), ContractError);
    CHECK(Label::from_int(-1) == Label::negative());
    CHECK(Label::from_prob(0.5) == Label::positive()); // tie rule
    CHECK(Label::from_sign(0.0) == Label::positive());
}

TEST_CASE("stratified_sample keeps every (group,label) cell populated") {
    SynthConfig sc = default_synth_config(TaskKind::census);
    sc.num_instances = 120;
    sc.seed = 33;
    const Dataset ds = gen_synthetic(sc).dataset;
    const Dataset pool = stratified_sample(ds, 16, 2, 9);
    CHECK(pool.size() == 16);
    for (const auto& g : ds.group_vocab)
        for (int lab : {-1, 1}) {
            size_t count = 0;
            for (const auto& inst : pool.instances)
                if (inst.group == g && inst.label.value() == lab) count++;
            CHECK(count >= 2);
        }
    const Dataset again = stratified_sample(ds, 16, 2, 9);
    for (size_t i = 0; i < pool.size(); ++i)
        CHECK(pool.instances[i].id == again.instances[i].id);
}

TEST_CASE("matched-pair generation twins everything but the group tag") {
    SynthConfig sc = default_synth_config(TaskKind::bias);
    sc.num_instances = 100;
    sc.matched_pairs = true;
    sc.seed = 8;
    const SynthTask task = gen_synthetic(sc);
    REQUIRE(task.dataset.size() == 100);
    for (size_t i = 0; i < 100; i += 2) {
        const auto& a = task.dataset.instances[i];
        const auto& b = task.dataset.instances[i + 1];
        CHECK(a.features == b.features);
        CHECK(a.label == b.label);
        CHECK(a.group != b.group);
        CHECK(a.id.substr(0, a.id.rfind('-')) == b.id.substr(0, b.id.rfind('-')));
    }
    SynthConfig bad = sc;
    bad.group_as_feature = true;
    CHECK_THROWS_AS(gen_synthetic(bad), ContractError);
}
