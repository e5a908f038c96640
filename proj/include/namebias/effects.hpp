#pragma once

// Effect sizes and causal effects of name interventions.
//
// d_ACC is the wrong-prediction rate of a name group. d_AGR is the
// Fleiss-style agreement of the group's predictions on one template:
//   sum_j n_j (n_j - 1) / (|N| (|N| - 1)),   j over the 3 answer categories.
// The direct effect compares two name groups on the same templates; the
// indirect effect measures how often swapping the pronoun set flips the
// prediction while template and name stay fixed.

#include <algorithm>
#include <array>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "namebias/bridge.hpp"
#include "namebias/census.hpp"
#include "namebias/stats.hpp"
#include "namebias/templates.hpp"

namespace namebias {

inline constexpr int kCategories = 3;

enum class Metric { Acc, Agr };

inline std::string_view to_string(Metric m) noexcept { return m == Metric::Acc ? "ACC" : "AGR"; }

inline std::optional<Metric> parse_metric(std::string_view s) noexcept {
  if (s == "ACC") return Metric::Acc;
  if (s == "AGR") return Metric::Agr;
  return std::nullopt;
}

enum class TestKind { Welch, Paired };

inline std::string_view to_string(TestKind t) noexcept { return t == TestKind::Welch ? "welch" : "paired"; }

// Predictions of one name group on one template. Each entry of `choices` is
// one instance (name, or name x pronoun variant when both are kept).
struct TemplatePredictions {
  std::string template_id;
  int gold = 0;
  std::vector<int> choices;
};

inline double d_acc_template(const TemplatePredictions& t) {
  if (t.choices.empty()) throw Error("d_acc: template `" + t.template_id + "` has no predictions");
  const auto wrong = std::count_if(t.choices.begin(), t.choices.end(), [&](int c) { return c != t.gold; });
  return static_cast<double>(wrong) / static_cast<double>(t.choices.size());
}

// Mean of 1(prediction != gold) over every (template, name) cell.
inline double d_acc_group(std::span<const TemplatePredictions> group) {
  std::size_t cells = 0, wrong = 0;
  for (const auto& t : group) {
    cells += t.choices.size();
    wrong += static_cast<std::size_t>(std::count_if(t.choices.begin(), t.choices.end(), [&](int c) { return c != t.gold; }));
  }
  if (cells == 0) throw Error("d_acc: empty group");
  return static_cast<double>(wrong) / static_cast<double>(cells);
}

inline double d_agr_template(std::span<const int> choices) {
  const auto n = choices.size();
  if (n < 2) throw Error("d_agr: a template needs predictions from at least 2 names");
  std::array<std::size_t, kCategories> counts{};
  for (int c : choices) {
    if (c < 0 || c >= kCategories) throw Error("d_agr: choice out of range");
    ++counts[static_cast<std::size_t>(c)];
  }
  std::size_t agree = 0;
  for (auto nj : counts) agree += nj * (nj > 0 ? nj - 1 : 0);
  return static_cast<double>(agree) / static_cast<double>(n * (n - 1));
}

// Unweighted mean of the per-template agreement.
inline double d_agr_group(std::span<const TemplatePredictions> group) {
  if (group.empty()) throw Error("d_agr: empty group");
  double sum = 0.0;
  for (const auto& t : group) {
    if (t.choices.size() < 2) throw Error("d_agr: template `" + t.template_id + "` has fewer than 2 predictions");
    sum += d_agr_template(t.choices);
  }
  return sum / static_cast<double>(group.size());
}

inline std::vector<double> per_template_series(std::span<const TemplatePredictions> group, Metric m) {
  std::vector<double> out;
  out.reserve(group.size());
  for (const auto& t : group) out.push_back(m == Metric::Acc ? d_acc_template(t) : d_agr_template(t.choices));
  return out;
}

inline double group_value(std::span<const TemplatePredictions> group, Metric m) {
  return m == Metric::Acc ? d_acc_group(group) : d_agr_group(group);
}

struct RelativeChange {
  double value = 0.0;
  // False when `from` is 0 and `to` is not; `value` is then NaN.
  bool defined = true;
};

inline RelativeChange relative_change(double from, double to) {
  if (from == 0.0) {
    if (to == 0.0) return {0.0, true};
    return {std::numeric_limits<double>::quiet_NaN(), false};
  }
  return {(to - from) / from, true};
}

// ---------------------------------------------------------------------------
// Predictions indexed by template, name and pronoun variant

class GroupedPredictions {
 public:
  using Variants = std::map<PronounLabel, int>;

  void add(const Instance& inst, int choice) {
    auto [it, inserted] = gold_.emplace(inst.template_id, inst.gold_label);
    if (!inserted && it->second != inst.gold_label)
      throw Error("template `" + inst.template_id + "` seen with two gold labels");
    cells_[inst.template_id][inst.name][inst.pronouns.label] = choice;
  }

  const std::map<std::string, int>& gold() const noexcept { return gold_; }
  const std::map<std::string, std::map<std::string, Variants>>& cells() const noexcept { return cells_; }

  const Variants* cell(const std::string& template_id, const std::string& name) const {
    auto t = cells_.find(template_id);
    if (t == cells_.end()) return nullptr;
    auto n = t->second.find(name);
    return n == t->second.end() ? nullptr : &n->second;
  }

  std::vector<std::string> template_ids() const {
    std::vector<std::string> ids;
    for (const auto& [id, _] : gold_) ids.push_back(id);
    return ids;
  }

  // Per-template predictions for `names`. With `stats`, each name keeps only
  // its majority-gender pronoun variant(s); otherwise every variant counts.
  // Cells that are absent are appended to `missing` as "template/name".
  std::vector<TemplatePredictions> select(std::span<const std::string> names, const StatsMap* stats,
                                          std::vector<std::string>& missing) const {
    std::vector<TemplatePredictions> out;
    for (const auto& [tid, gold] : gold_) {
      TemplatePredictions tp{tid, gold, {}};
      for (const auto& name : names) {
        const auto* variants = cell(tid, name);
        std::vector<PronounLabel> wanted;
        if (stats) wanted = majority_pronouns(*stats, name);
        if (wanted.empty() && variants)
          for (const auto& [label, _] : *variants) wanted.push_back(label);
        bool found = variants != nullptr && !wanted.empty();
        if (found) {
          for (auto label : wanted) {
            auto it = variants->find(label);
            if (it == variants->end()) {
              found = false;
              break;
            }
            tp.choices.push_back(it->second);
          }
        }
        if (!found) missing.push_back(tid + "/" + name);
      }
      out.push_back(std::move(tp));
    }
    return out;
  }

  // Overall accuracy across every stored prediction.
  double accuracy() const {
    std::size_t n = 0, right = 0;
    for (const auto& [tid, names] : cells_)
      for (const auto& [_, variants] : names)
        for (const auto& [__, choice] : variants) {
          ++n;
          right += choice == gold_.at(tid) ? 1 : 0;
        }
    if (n == 0) throw Error("accuracy: no predictions");
    return static_cast<double>(right) / static_cast<double>(n);
  }

 private:
  std::map<std::string, int> gold_;
  std::map<std::string, std::map<std::string, Variants>> cells_;
};

// Joins instances with their predictions. Predictions whose instance is
// unknown are reported through `unmatched`.
inline GroupedPredictions group_predictions(std::span<const Instance> instances,
                                            std::span<const PredictionRecord> records,
                                            std::vector<std::string>* unmatched = nullptr) {
  std::map<std::string, const Instance*> by_id;
  for (const auto& i : instances) by_id.emplace(i.id, &i);
  GroupedPredictions g;
  for (const auto& r : records) {
    auto it = by_id.find(r.instance_id);
    if (it == by_id.end()) {
      if (unmatched) unmatched->push_back(r.instance_id);
      continue;
    }
    g.add(*it->second, r.choice);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Direct effect

struct Comparison {
  SetLabel from = SetLabel::Most;
  SetLabel to = SetLabel::Least;

  std::string label() const { return std::string(to_string(from)) + "\xE2\x86\x92" + std::string(to_string(to)); }
  friend bool operator==(const Comparison&, const Comparison&) = default;
};

// Accepts "MOST->LEAST", "MOST:LEAST" or "MOST→LEAST".
inline Comparison parse_comparison(std::string_view text) {
  for (std::string_view sep : {"->", ":", "\xE2\x86\x92"}) {
    auto pos = text.find(sep);
    if (pos == std::string_view::npos) continue;
    auto from = parse_set_label(trim(text.substr(0, pos)));
    auto to = parse_set_label(trim(text.substr(pos + sep.size())));
    if (from && to) return {*from, *to};
  }
  throw Error("cannot parse comparison `" + std::string(text) + "` (expected e.g. MOST->LEAST)");
}

// The four comparisons of the direct-effect tables.
inline std::vector<Comparison> default_comparisons() {
  return {{SetLabel::Most, SetLabel::Least},
          {SetLabel::Male, SetLabel::Female},
          {SetLabel::MostMale, SetLabel::LeastMale},
          {SetLabel::MostFemale, SetLabel::LeastFemale}};
}

struct EffectReport {
  std::string comparison;
  Metric metric = Metric::Acc;
  std::string checkpoint;
  double value_from = 0.0;
  double value_to = 0.0;
  // Mean over templates of the per-template difference, oriented so that a
  // positive value means the `to` group fares worse: more wrong answers
  // (ACC) or less agreement (AGR). `effect_sum` is the undivided sum.
  double effect = 0.0;
  double effect_sum = 0.0;
  RelativeChange relative_change;
  double t_stat = 0.0;
  double p_value = 1.0;
  double df = 0.0;
  bool degenerate_test = false;
  std::string stars;
  std::size_t n_templates = 0;
  TestKind test = TestKind::Welch;
};

// The group value each side contributes: wrong-rate grows worse upwards,
// agreement grows worse downwards.
inline double degradation(Metric m, double from, double to) noexcept { return m == Metric::Acc ? to - from : from - to; }

inline EffectReport direct_effect(const GroupedPredictions& grouped, const InterventionSet& from,
                                  const InterventionSet& to, Metric metric, const StatsMap* stats = nullptr,
                                  TestKind test = TestKind::Welch) {
  std::vector<std::string> missing;
  const auto a = grouped.select(from.names, stats, missing);
  const auto b = grouped.select(to.names, stats, missing);
  if (!missing.empty()) {
    std::string msg = "template coverage mismatch: " + std::to_string(missing.size()) + " missing cells (";
    for (std::size_t i = 0; i < std::min<std::size_t>(missing.size(), 5); ++i) msg += (i ? ", " : "") + missing[i];
    throw Error(msg + (missing.size() > 5 ? ", ...)" : ")"));
  }
  if (a.empty()) throw Error("direct_effect: no templates");

  EffectReport r;
  r.comparison = Comparison{from.label, to.label}.label();
  r.metric = metric;
  r.test = test;
  r.n_templates = a.size();
  r.value_from = group_value(a, metric);
  r.value_to = group_value(b, metric);
  r.relative_change = relative_change(r.value_from, r.value_to);

  const auto xs = per_template_series(a, metric);
  const auto ys = per_template_series(b, metric);
  for (std::size_t i = 0; i < xs.size(); ++i) r.effect_sum += degradation(metric, xs[i], ys[i]);
  r.effect = r.effect_sum / static_cast<double>(xs.size());

  if (xs.size() >= 2) {
    // Sign the statistic like `effect`.
    const bool worse_is_higher = metric == Metric::Acc;
    const auto& hi = worse_is_higher ? ys : xs;
    const auto& lo = worse_is_higher ? xs : ys;
    const auto tt = test == TestKind::Welch ? welch_t_test(hi, lo) : paired_t_test(hi, lo);
    r.t_stat = tt.t;
    r.p_value = tt.p;
    r.df = tt.df;
    r.degenerate_test = tt.degenerate;
  } else {
    r.p_value = std::numeric_limits<double>::quiet_NaN();
  }
  r.stars = significance_stars(r.p_value);
  return r;
}

// ---------------------------------------------------------------------------
// Indirect effect

struct IndirectReport {
  std::string set_label;
  std::string checkpoint;
  // Mean flip rate over (template, name) cells, in [0, 1].
  double value = 0.0;
  double sum = 0.0;
  std::size_t cells = 0;
  std::size_t flips = 0;
};

inline IndirectReport indirect_effect(const GroupedPredictions& grouped, const InterventionSet& set) {
  IndirectReport r;
  r.set_label = std::string(to_string(set.label));
  std::vector<std::string> missing;
  for (const auto& tid : grouped.template_ids()) {
    for (const auto& name : set.names) {
      const auto* v = grouped.cell(tid, name);
      if (!v || !v->contains(PronounLabel::Female) || !v->contains(PronounLabel::Male)) {
        missing.push_back(tid + "/" + name);
        continue;
      }
      // Total-variation distance between two one-hot predictions.
      const bool flip = v->at(PronounLabel::Female) != v->at(PronounLabel::Male);
      ++r.cells;
      r.flips += flip ? 1 : 0;
    }
  }
  if (!missing.empty())
    throw Error("indirect_effect: " + std::to_string(missing.size()) + " cells lack a pronoun variant (first: " +
                missing.front() + ")");
  if (r.cells == 0) throw Error("indirect_effect: no cells");
  r.sum = static_cast<double>(r.flips);
  r.value = r.sum / static_cast<double>(r.cells);
  return r;
}

// ---------------------------------------------------------------------------
// Checkpoint sweeps and accuracy/effect correlation

struct CheckpointPredictions {
  std::string tag;
  GroupedPredictions grouped;
};

struct CurvePoint {
  std::string checkpoint;
  std::string set_label;
  Metric metric = Metric::Acc;
  double value = 0.0;
};

struct SweepResult {
  std::vector<EffectReport> reports;
  std::vector<CurvePoint> curves;
};

inline SweepResult epoch_sweep(std::span<const CheckpointPredictions> checkpoints,
                               std::span<const InterventionSet> sets, std::span<const Comparison> comparisons,
                               std::span<const Metric> metrics, const StatsMap* stats = nullptr,
                               TestKind test = TestKind::Welch) {
  if (checkpoints.empty()) throw Error("epoch_sweep: no checkpoints");
  const auto reference = checkpoints.front().grouped.template_ids();
  for (const auto& cp : checkpoints)
    if (cp.grouped.template_ids() != reference)
      throw Error("checkpoint coverage mismatch: `" + cp.tag + "` covers different templates than `" +
                  checkpoints.front().tag + "`");
  SweepResult out;
  for (const auto& cp : checkpoints) {
    std::vector<SetLabel> curve_sets;
    for (const auto& c : comparisons) {
      for (auto m : metrics) {
        auto r = direct_effect(cp.grouped, find_set(sets, c.from), find_set(sets, c.to), m, stats, test);
        r.checkpoint = cp.tag;
        out.reports.push_back(std::move(r));
      }
      for (auto l : {c.from, c.to})
        if (std::find(curve_sets.begin(), curve_sets.end(), l) == curve_sets.end()) curve_sets.push_back(l);
    }
    for (auto label : curve_sets) {
      std::vector<std::string> missing;
      const auto sel = cp.grouped.select(find_set(sets, label).names, stats, missing);
      for (auto m : metrics) out.curves.push_back({cp.tag, std::string(to_string(label)), m, group_value(sel, m)});
    }
  }
  return out;
}

struct CorrelationRow {
  std::string comparison;
  Metric metric = Metric::Acc;
  Correlation corr;
  std::size_t points = 0;
};

// Spearman correlation across checkpoints between accuracy and each
// comparison's effect. Needs at least 3 checkpoints.
inline std::vector<CorrelationRow> accuracy_effect_correlation(std::span<const CheckpointPredictions> checkpoints,
                                                               const SweepResult& sweep) {
  if (checkpoints.size() < 3) throw Error("correlation needs at least 3 checkpoints");
  std::map<std::string, double> accuracy;
  std::vector<double> acc_series;
  for (const auto& cp : checkpoints) accuracy[cp.tag] = cp.grouped.accuracy();
  std::map<std::pair<std::string, Metric>, std::vector<std::pair<double, double>>> series;
  std::vector<std::pair<std::string, Metric>> order;
  for (const auto& r : sweep.reports) {
    auto key = std::make_pair(r.comparison, r.metric);
    if (!series.contains(key)) order.push_back(key);
    series[key].emplace_back(accuracy.at(r.checkpoint), r.effect);
  }
  std::vector<CorrelationRow> rows;
  for (const auto& key : order) {
    const auto& pts = series.at(key);
    std::vector<double> xs, ys;
    for (auto [x, y] : pts) {
      xs.push_back(x);
      ys.push_back(y);
    }
    rows.push_back({key.first, key.second, spearman_corr(xs, ys), pts.size()});
  }
  return rows;
}

}  // namespace namebias
