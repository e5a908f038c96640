#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "namebias/effects.hpp"
#include "pipeline_support.hpp"

using namespace namebias;
using testing_support::make_fixture;
using testing_support::run_stub;

namespace {

const InterventionSet& set_of(const testing_support::Fixture& f, SetLabel l) { return find_set(f.sets, l); }

Instance cell(std::string tid, std::string name, PronounLabel p, int gold = 0) {
  Instance i;
  i.template_id = std::move(tid);
  i.name = std::move(name);
  i.pronouns = PronounSet::of(p);
  i.gold_label = gold;
  i.id = make_instance_id(i.template_id, i.name, p);
  return i;
}

}  // namespace

TEST(Agreement, HandEnumerated) {
  const std::vector<int> same = {0, 0, 0}, pair = {0, 0, 1}, spread = {0, 1, 2};
  EXPECT_EQ(d_agr_template(same), 1.0);
  EXPECT_NEAR(d_agr_template(pair), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(d_agr_template(spread), 0.0);
  const std::vector<int> single = {1};
  EXPECT_THROW(d_agr_template(single), Error);
}

TEST(Agreement, GroupIsTemplateMean) {
  const std::vector<TemplatePredictions> g = {{"a", 0, {0, 0, 0}}, {"b", 0, {0, 1, 2}}};
  EXPECT_DOUBLE_EQ(d_agr_group(g), 0.5);
}

TEST(Accuracy, CountingCases) {
  const std::vector<TemplatePredictions> right = {{"a", 1, {1, 1, 1}}};
  const std::vector<TemplatePredictions> wrong = {{"a", 1, {0, 2, 0}}};
  EXPECT_EQ(d_acc_group(right), 0.0);
  EXPECT_EQ(d_acc_group(wrong), 1.0);
  const std::vector<TemplatePredictions> ten = {{"a", 0, {0, 0, 1, 0, 2}}, {"b", 2, {2, 2, 2, 0, 2}}};
  EXPECT_DOUBLE_EQ(d_acc_group(ten), 0.3);
}

TEST(Accuracy, RandomCountingOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<TemplatePredictions> g;
    std::size_t cells = 0, wrong = 0;
    const auto templates = 1 + rng() % 6;
    for (std::size_t t = 0; t < templates; ++t) {
      TemplatePredictions tp{"t" + std::to_string(t), static_cast<int>(rng() % 3), {}};
      const auto names = 1 + rng() % 9;
      for (std::size_t n = 0; n < names; ++n) {
        tp.choices.push_back(static_cast<int>(rng() % 3));
        ++cells;
        wrong += tp.choices.back() != tp.gold;
      }
      g.push_back(tp);
    }
    ASSERT_EQ(d_acc_group(g), static_cast<double>(wrong) / static_cast<double>(cells));
  }
}

TEST(RelativeChange, Cases) {
  EXPECT_NEAR(relative_change(0.25, 0.30).value, 0.2, 1e-12);
  EXPECT_EQ(relative_change(0.4, 0.4).value, 0.0);
  const auto zero = relative_change(0.0, 0.0);
  EXPECT_TRUE(zero.defined);
  EXPECT_EQ(zero.value, 0.0);
  const auto undefined = relative_change(0.0, 0.1);
  EXPECT_FALSE(undefined.defined);
  EXPECT_TRUE(std::isnan(undefined.value));
}

TEST(Comparison, Parse) {
  const auto c = parse_comparison("MOST->LEAST");
  EXPECT_EQ(c.from, SetLabel::Most);
  EXPECT_EQ(c.to, SetLabel::Least);
  EXPECT_EQ(c.label(), "MOST\xE2\x86\x92LEAST");
  EXPECT_EQ(parse_comparison("FEMALE:MALE").to, SetLabel::Male);
  EXPECT_THROW(parse_comparison("MOST->NOBODY"), Error);
  EXPECT_THROW(parse_comparison("MOST"), Error);
}

TEST(DirectEffect, OracleStubIsFlat) {
  const auto f = make_fixture(12, 4, 10);
  const auto g = run_stub(f, "oracle");
  for (auto m : {Metric::Acc, Metric::Agr}) {
    const auto r = direct_effect(g, set_of(f, SetLabel::Most), set_of(f, SetLabel::Least), m);
    EXPECT_EQ(r.effect, 0.0);
    EXPECT_EQ(r.value_from, r.value_to);
    EXPECT_EQ(r.relative_change.value, 0.0);
    EXPECT_EQ(r.p_value, 1.0);
    EXPECT_EQ(r.stars, "");
    EXPECT_EQ(r.n_templates, 10u);
  }
}

TEST(DirectEffect, BiasedStubIsDetected) {
  const auto f = make_fixture(40, 20, 50);
  const auto g = run_stub(f, "biased(MOST)");
  for (auto m : {Metric::Acc, Metric::Agr}) {
    const auto r = direct_effect(g, set_of(f, SetLabel::Most), set_of(f, SetLabel::Least), m);
    EXPECT_GT(r.effect, 0.0) << to_string(m);
    EXPECT_LT(r.p_value, 0.05) << to_string(m);
    EXPECT_FALSE(r.stars.empty());
  }
  // The favoured group is always right and always agrees.
  const auto acc = direct_effect(g, set_of(f, SetLabel::Most), set_of(f, SetLabel::Least), Metric::Acc);
  EXPECT_EQ(acc.value_from, 0.0);
  EXPECT_FALSE(acc.relative_change.defined);
  const auto agr = direct_effect(g, set_of(f, SetLabel::Most), set_of(f, SetLabel::Least), Metric::Agr);
  EXPECT_EQ(agr.value_from, 1.0);
  EXPECT_DOUBLE_EQ(agr.relative_change.value, agr.value_to - 1.0);
}

TEST(DirectEffect, PairedOption) {
  const auto f = make_fixture(40, 20, 50);
  const auto g = run_stub(f, "biased(MOST)");
  const auto r = direct_effect(g, set_of(f, SetLabel::Most), set_of(f, SetLabel::Least), Metric::Acc, nullptr,
                               TestKind::Paired);
  EXPECT_EQ(r.test, TestKind::Paired);
  EXPECT_EQ(r.df, 49.0);
  EXPECT_LT(r.p_value, 0.05);
}

TEST(DirectEffect, MissingCellsRejected) {
  const auto f = make_fixture(12, 4, 3);
  GroupedPredictions g;
  for (const auto& inst : f.instances)
    if (inst.name != "N11") g.add(inst, inst.gold_label);
  EXPECT_THROW(direct_effect(g, set_of(f, SetLabel::Most), set_of(f, SetLabel::Least), Metric::Acc), Error);
}

TEST(IndirectEffect, PronounInvariantIsZero) {
  const auto f = make_fixture(12, 4, 5);
  const auto r = indirect_effect(run_stub(f, "oracle"), set_of(f, SetLabel::Most));
  EXPECT_EQ(r.value, 0.0);
  EXPECT_EQ(r.cells, 20u);
}

TEST(IndirectEffect, FemaleFlipIsOne) {
  const auto f = make_fixture(12, 4, 5);
  EXPECT_EQ(indirect_effect(run_stub(f, "flip-female"), set_of(f, SetLabel::Least)).value, 1.0);
}

TEST(IndirectEffect, OneFlipInFour) {
  GroupedPredictions g;
  const int female[] = {0, 1, 2, 0}, male[] = {0, 1, 2, 1};
  const char* names[] = {"A", "B"};
  for (int c = 0; c < 4; ++c) {
    const std::string tid = c < 2 ? "t1" : "t2";
    g.add(cell(tid, names[c % 2], PronounLabel::Female), female[c]);
    g.add(cell(tid, names[c % 2], PronounLabel::Male), male[c]);
  }
  const InterventionSet s{SetLabel::Female, {"A", "B"}, 2, false};
  const auto r = indirect_effect(g, s);
  EXPECT_EQ(r.cells, 4u);
  EXPECT_EQ(r.flips, 1u);
  EXPECT_EQ(r.value, 0.25);
}

TEST(IndirectEffect, NeedsBothVariants) {
  const auto f = make_fixture(12, 4, 3, PronounPolicy::FixedFemale);
  EXPECT_THROW(indirect_effect(run_stub(f, "oracle"), set_of(f, SetLabel::Most)), Error);
}

TEST(EpochSweep, BiasOnlyAtFirstCheckpoint) {
  const auto f = make_fixture(40, 20, 50);
  std::vector<CheckpointPredictions> cps = {{"0", run_stub(f, "biased(MOST)", "0")}, {"1", run_stub(f, "oracle", "1")}};
  const std::vector<Comparison> comps = {{SetLabel::Most, SetLabel::Least}};
  const std::vector<Metric> metrics = {Metric::Acc, Metric::Agr};
  const auto sweep = epoch_sweep(cps, f.sets, comps, metrics);
  ASSERT_EQ(sweep.reports.size(), 4u);
  for (const auto& r : sweep.reports) {
    if (r.checkpoint == "0") {
      EXPECT_LT(r.p_value, 0.05);
    } else {
      EXPECT_EQ(r.effect, 0.0);
      EXPECT_EQ(r.stars, "");
    }
  }
  // Curves: 2 checkpoints x 2 sets x 2 metrics.
  EXPECT_EQ(sweep.curves.size(), 8u);
}

TEST(EpochSweep, SingleCheckpointSeries) {
  const auto f = make_fixture(12, 4, 4);
  std::vector<CheckpointPredictions> cps = {{"only", run_stub(f, "hash", "only")}};
  const std::vector<Comparison> comps = {{SetLabel::Most, SetLabel::Least}};
  const std::vector<Metric> metrics = {Metric::Acc};
  const auto sweep = epoch_sweep(cps, f.sets, comps, metrics);
  EXPECT_EQ(sweep.reports.size(), 1u);
  EXPECT_THROW(accuracy_effect_correlation(cps, sweep), Error);
}

TEST(EpochSweep, OracleAcrossThreeIsFlat) {
  const auto f = make_fixture(12, 4, 4);
  std::vector<CheckpointPredictions> cps;
  for (const auto* tag : {"a", "b", "c"}) cps.push_back({tag, run_stub(f, "oracle", tag)});
  const std::vector<Comparison> comps = default_comparisons();
  const std::vector<Metric> metrics = {Metric::Acc, Metric::Agr};
  const auto sweep = epoch_sweep(cps, f.sets, comps, metrics);
  for (const auto& p : sweep.curves) EXPECT_EQ(p.value, p.metric == Metric::Acc ? 0.0 : 1.0);
  const auto rows = accuracy_effect_correlation(cps, sweep);
  ASSERT_FALSE(rows.empty());
  for (const auto& r : rows) {
    EXPECT_EQ(r.points, 3u);
    EXPECT_FALSE(r.corr.defined);
  }
}

TEST(EpochSweep, TemplateMismatchRejected) {
  const auto a = make_fixture(12, 4, 4), b = make_fixture(12, 4, 5);
  std::vector<CheckpointPredictions> cps = {{"a", run_stub(a, "oracle")}, {"b", run_stub(b, "oracle")}};
  const std::vector<Comparison> comps = {{SetLabel::Most, SetLabel::Least}};
  const std::vector<Metric> metrics = {Metric::Acc};
  EXPECT_THROW(epoch_sweep(cps, a.sets, comps, metrics), Error);
}
