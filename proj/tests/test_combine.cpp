#include <doctest.h>

#include <cmath>

#include "xnudge/combine.hpp"
#include "xnudge/rng.hpp"

using namespace xnudge;

namespace {

TaskInstance instance_of(TaskKind kind, const std::string& group) {
    TaskInstance inst;
    inst.id = "t";
    inst.features = {0.5};
    inst.label = Label::positive();
    inst.group = group;
    inst.kind = kind;
    return inst;
}

CombineModel symmetric_combiner(double human_acc, double model_acc) {
    CombineModel cm;
    cm.prior_pos = 0.5;
    cm.h_conf[0][0] = human_acc;
    cm.h_conf[0][1] = 1.0 - human_acc;
    cm.h_conf[1][1] = human_acc;
    cm.h_conf[1][0] = 1.0 - human_acc;
    cm.m_conf[0][0] = model_acc;
    cm.m_conf[0][1] = 1.0 - model_acc;
    cm.m_conf[1][1] = model_acc;
    cm.m_conf[1][0] = 1.0 - model_acc;
    return cm;
}

} // namespace

TEST_CASE("adversarial targets follow the per-task group tables") {
    CHECK(adversarial_target(instance_of(TaskKind::census, "male")) == Label::positive());
    CHECK(adversarial_target(instance_of(TaskKind::census, "female")) == Label::negative());
    CHECK(adversarial_target(instance_of(TaskKind::recidivism, "black")) == Label::positive());
    CHECK(adversarial_target(instance_of(TaskKind::recidivism, "white")) == Label::negative());
    CHECK(adversarial_target(instance_of(TaskKind::bias, "dem")) == Label::positive());
    CHECK(adversarial_target(instance_of(TaskKind::bias, "rep")) == Label::negative());
    CHECK(adversarial_target(instance_of(TaskKind::toxicity, "white")) == Label::positive());
    CHECK(adversarial_target(instance_of(TaskKind::toxicity, "black")) == Label::negative());

    CHECK_THROWS_AS(adversarial_target(instance_of(TaskKind::census, "none")), VocabularyError);
    CHECK_THROWS_AS(adversarial_target(instance_of(TaskKind::synthetic, "A")), VocabularyError);

    const std::map<std::string, int> custom{{"A", 1}, {"B", -1}};
    CHECK(adversarial_target(instance_of(TaskKind::synthetic, "A"), custom) == Label::positive());
    CHECK(adversarial_target(instance_of(TaskKind::synthetic, "B"), custom) == Label::negative());
    CHECK_THROWS_AS(adversarial_target(instance_of(TaskKind::synthetic, "C"), custom),
                    VocabularyError);
}

TEST_CASE("fit_combiner applies add-alpha smoothing to the counts") {
    // 100 rows, one truth class, perfectly accurate human and model:
    // diagonal entries (100 + 1) / (100 + 2).
    std::vector<CalibrationTriple> calib(
        100, CalibrationTriple{Label::positive(), Label::positive(), Label::positive()});
    const CombineModel cm = fit_combiner(calib, 1.0);
    CHECK(cm.h_conf[1][1] == doctest::Approx(101.0 / 102.0));
    CHECK(cm.m_conf[1][1] == doctest::Approx(101.0 / 102.0));
    // empty truth class: entries alpha / (0 + 2 alpha) = 1/2
    CHECK(cm.h_conf[0][0] == doctest::Approx(0.5));
    CHECK(cm.h_conf[0][1] == doctest::Approx(0.5));
    // prior smoothed toward the observed class
    CHECK(cm.prior_pos == doctest::Approx(101.0 / 102.0));
    // all entries strictly inside (0,1)
    for (int t = 0; t < 2; ++t)
        for (int p = 0; p < 2; ++p) {
            CHECK(cm.h_conf[t][p] > 0.0);
            CHECK(cm.h_conf[t][p] < 1.0);
        }
}

TEST_CASE("combine fuses votes by posterior argmax") {
    const CombineModel cm = symmetric_combiner(0.6, 0.9);
    // agreement: both +1 with accurate confusions
    CHECK(combine(cm, Label::positive(), Label::positive()) == Label::positive());
    // disagreement: the stronger model wins (0.9 * 0.4 > 0.1 * 0.6)
    CHECK(combine(cm, Label::positive(), Label::negative()) == Label::negative());
    CHECK(combine(cm, Label::negative(), Label::positive()) == Label::positive());
    // uniform confusions: tie, the AI label anchors
    const CombineModel flat = symmetric_combiner(0.5, 0.5);
    CHECK(combine(flat, Label::positive(), Label::negative()) == Label::negative());
    CHECK(combine(flat, Label::negative(), Label::positive()) == Label::positive());
}

TEST_CASE("weighted vote baseline resolves by log-odds weights") {
    // equal accuracies, disagreement: tie toward the AI
    CHECK(weighted_vote_baseline(Label::positive(), Label::negative(), 0.7, 0.7) ==
          Label::negative());
    // the more accurate human outvotes the model
    CHECK(weighted_vote_baseline(Label::positive(), Label::negative(), 0.9, 0.6) ==
          Label::positive());
    // agreement passes through
    CHECK(weighted_vote_baseline(Label::negative(), Label::negative(), 0.9, 0.6) ==
          Label::negative());
    // both at chance: zero weights, tie rule
    CHECK(weighted_vote_baseline(Label::positive(), Label::negative(), 0.5, 0.5) ==
          Label::negative());
    CHECK_THROWS_AS(weighted_vote_baseline(Label::positive(), Label::negative(), 0.0, 0.5),
                    ContractError);
}

TEST_CASE("combine equals the weighted vote under symmetric confusions") {
    Rng rng(7);
    const Label values[2] = {Label::negative(), Label::positive()};
    for (int rep = 0; rep < 100; ++rep) {
        const double ha = rng.uniform(0.55, 0.95);
        const double ma = rng.uniform(0.55, 0.95);
        if (std::abs(ha - ma) < 1e-3) continue; // avoid knife-edge ties
        const CombineModel cm = symmetric_combiner(ha, ma);
        for (const Label h : values)
            for (const Label m : values)
                CHECK(combine(cm, h, m) == weighted_vote_baseline(h, m, ha, ma));
    }
}
