#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "turntake/core.hpp"
#include "turntake/prompting.hpp"

namespace turntake::metrics {

// Speak is the positive class; Silent counts follow by symmetry
// (tp_silent = tn_speak, fp_silent = fn_speak, fn_silent = fp_speak).
struct ConfusionMatrix {
  std::size_t tp_speak = 0;
  std::size_t fn_speak = 0;
  std::size_t fp_speak = 0;
  std::size_t tn_speak = 0;
  std::size_t invalid_count = 0;

  std::size_t total() const { return tp_speak + fn_speak + fp_speak + tn_speak; }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    tp_speak += o.tp_speak;
    fn_speak += o.fn_speak;
    fp_speak += o.fp_speak;
    tn_speak += o.tn_speak;
    invalid_count += o.invalid_count;
    return *this;
  }
  bool operator==(const ConfusionMatrix&) const = default;
};

struct MetricsReport {
  double acc = 0;
  double precision_speak = 0;
  double recall_speak = 0;
  double precision_silent = 0;
  double recall_silent = 0;
  double f1_speak = 0;
  double f1_silent = 0;
  double f1_avg = 0;
  double bal_acc = 0;
  std::map<Category, double> per_category_acc;
  std::map<Category, std::size_t> per_category_n;
  ConfusionMatrix confusion;
  std::size_t n = 0;
};

inline double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

inline double f1(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

// Fills every aggregate field of a report from its confusion matrix.
inline void fill_from_confusion(MetricsReport& r) {
  const auto& m = r.confusion;
  r.n = m.total();
  r.acc = ratio(m.tp_speak + m.tn_speak, r.n);
  r.precision_speak = ratio(m.tp_speak, m.tp_speak + m.fp_speak);
  r.recall_speak = ratio(m.tp_speak, m.tp_speak + m.fn_speak);
  r.precision_silent = ratio(m.tn_speak, m.tn_speak + m.fn_speak);
  r.recall_silent = ratio(m.tn_speak, m.tn_speak + m.fp_speak);
  r.f1_speak = f1(r.precision_speak, r.recall_speak);
  r.f1_silent = f1(r.precision_silent, r.recall_silent);
  r.f1_avg = (r.f1_speak + r.f1_silent) / 2.0;
  r.bal_acc = (r.recall_speak + r.recall_silent) / 2.0;
}

// The class a prediction counts as. Invalid outputs count as the opposite of
// the true label: a recall miss for the true class and a false positive for
// the other.
inline Decision effective_prediction(Decision label, const prompting::ModelOutput& out) {
  if (out.validity == prompting::Validity::Invalid || !out.decision) return opposite(label);
  return *out.decision;
}

inline MetricsReport score(const std::vector<std::pair<Decision, prompting::ModelOutput>>& pairs,
                           const std::vector<Category>& categories) {
  if (pairs.empty()) throw Error("EmptyInput", "nothing to score");
  if (categories.size() != pairs.size())
    throw Error("LengthMismatch", "categories and predictions are not aligned",
                {{"pairs", pairs.size()}, {"categories", categories.size()}});
  MetricsReport r;
  std::array<std::size_t, 4> cat_n{};
  std::array<std::size_t, 4> cat_correct{};
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& [label, out] = pairs[i];
    const Decision pred = effective_prediction(label, out);
    if (out.validity == prompting::Validity::Invalid || !out.decision) ++r.confusion.invalid_count;
    if (label == Decision::Speak)
      ++(pred == Decision::Speak ? r.confusion.tp_speak : r.confusion.fn_speak);
    else
      ++(pred == Decision::Speak ? r.confusion.fp_speak : r.confusion.tn_speak);
    const auto c = category_index(categories[i]);
    ++cat_n[c];
    if (pred == label) ++cat_correct[c];
  }
  fill_from_confusion(r);
  for (auto cat : kAllCategories) {
    const auto c = category_index(cat);
    if (cat_n[c] == 0) continue;
    r.per_category_n[cat] = cat_n[c];
    r.per_category_acc[cat] = ratio(cat_correct[c], cat_n[c]);
  }
  return r;
}

// Two-rater, two-label Cohen's kappa.
inline double cohen_kappa(const std::vector<Decision>& a, const std::vector<Decision>& b) {
  if (a.size() != b.size()) throw Error("LengthMismatch", "annotation lists differ in length", {{"a", a.size()}, {"b", b.size()}});
  if (a.empty()) throw Error("EmptyInput", "no annotations");
  std::size_t agree = 0, a_speak = 0, b_speak = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    agree += a[i] == b[i];
    a_speak += a[i] == Decision::Speak;
    b_speak += b[i] == Decision::Speak;
  }
  const double n = static_cast<double>(a.size());
  const double p_o = agree / n;
  const double pa = a_speak / n;
  const double pb = b_speak / n;
  const double p_e = pa * pb + (1.0 - pa) * (1.0 - pb);
  if (p_e >= 1.0) return p_o >= 1.0 ? 1.0 : 0.0;
  return (p_o - p_e) / (1.0 - p_e);
}

// Mean of each metric across reports (weighted when weights are given).
// Confusion matrices and n are summed. A category's accuracy is averaged
// over the reports that contain it.
inline MetricsReport aggregate_reports(const std::vector<MetricsReport>& reports,
                                       const std::optional<std::vector<double>>& weights = std::nullopt) {
  if (reports.empty()) throw Error("EmptyInput", "no reports to aggregate");
  if (weights && weights->size() != reports.size())
    throw Error("LengthMismatch", "weights and reports differ in length");
  MetricsReport out;
  double wsum = 0;
  std::map<Category, double> cat_wsum;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    const double w = weights ? (*weights)[i] : 1.0;
    wsum += w;
    out.acc += w * r.acc;
    out.precision_speak += w * r.precision_speak;
    out.recall_speak += w * r.recall_speak;
    out.precision_silent += w * r.precision_silent;
    out.recall_silent += w * r.recall_silent;
    out.f1_speak += w * r.f1_speak;
    out.f1_silent += w * r.f1_silent;
    out.bal_acc += w * r.bal_acc;
    for (const auto& [cat, v] : r.per_category_acc) {
      out.per_category_acc[cat] += w * v;
      cat_wsum[cat] += w;
      out.per_category_n[cat] += r.per_category_n.count(cat) ? r.per_category_n.at(cat) : 0;
    }
    out.confusion += r.confusion;
    out.n += r.n;
  }
  if (wsum <= 0) throw Error("SchemaViolation", "weights must sum to a positive value", {{"field", "weights"}});
  for (double* f : {&out.acc, &out.precision_speak, &out.recall_speak, &out.precision_silent, &out.recall_silent,
                    &out.f1_speak, &out.f1_silent, &out.bal_acc})
    *f /= wsum;
  for (auto& [cat, v] : out.per_category_acc) v /= cat_wsum[cat];
  // Keep the identities exact on the aggregate.
  out.f1_avg = (out.f1_speak + out.f1_silent) / 2.0;
  out.bal_acc = (out.recall_speak + out.recall_silent) / 2.0;
  return out;
}

// Metrics recomputed from the summed confusion matrix (micro pooling).
inline MetricsReport pooled_report(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw Error("EmptyInput", "no reports to pool");
  MetricsReport out;
  std::map<Category, double> correct;
  for (const auto& r : reports) {
    out.confusion += r.confusion;
    for (const auto& [cat, v] : r.per_category_acc) {
      const std::size_t n = r.per_category_n.count(cat) ? r.per_category_n.at(cat) : 0;
      correct[cat] += v * static_cast<double>(n);
      out.per_category_n[cat] += n;
    }
  }
  fill_from_confusion(out);
  for (const auto& [cat, n] : out.per_category_n)
    if (n > 0) out.per_category_acc[cat] = correct[cat] / static_cast<double>(n);
  return out;
}

inline std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v * 100.0);
  return buf;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json per_cat = nlohmann::json::object();
  nlohmann::json per_cat_n = nlohmann::json::object();
  for (const auto& [cat, v] : r.per_category_acc) per_cat[std::string(to_string(cat))] = v;
  for (const auto& [cat, v] : r.per_category_n) per_cat_n[std::string(to_string(cat))] = v;
  return {
      {"acc", r.acc},
      {"f1_speak", r.f1_speak},
      {"f1_silent", r.f1_silent},
      {"f1_avg", r.f1_avg},
      {"bal_acc", r.bal_acc},
      {"precision_speak", r.precision_speak},
      {"recall_speak", r.recall_speak},
      {"precision_silent", r.precision_silent},
      {"recall_silent", r.recall_silent},
      {"per_category_acc", per_cat},
      {"per_category_n", per_cat_n},
      {"confusion",
       {{"tp_speak", r.confusion.tp_speak},
        {"fn_speak", r.confusion.fn_speak},
        {"fp_speak", r.confusion.fp_speak},
        {"tn_speak", r.confusion.tn_speak},
        {"invalid_count", r.confusion.invalid_count}}},
      {"n", r.n},
  };
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  const auto& c = j.at("confusion");
  r.confusion = {c.at("tp_speak").get<std::size_t>(), c.at("fn_speak").get<std::size_t>(),
                 c.at("fp_speak").get<std::size_t>(), c.at("tn_speak").get<std::size_t>(),
                 c.value("invalid_count", std::size_t{0})};
  fill_from_confusion(r);
  for (const char* f : {"acc", "f1_speak", "f1_silent", "bal_acc", "precision_speak", "recall_speak", "precision_silent",
                        "recall_silent"})
    if (!j.contains(f)) throw Error("SchemaViolation", std::string("report missing '") + f + "'", {{"field", f}});
  r.acc = j.at("acc").get<double>();
  r.f1_speak = j.at("f1_speak").get<double>();
  r.f1_silent = j.at("f1_silent").get<double>();
  r.precision_speak = j.at("precision_speak").get<double>();
  r.recall_speak = j.at("recall_speak").get<double>();
  r.precision_silent = j.at("precision_silent").get<double>();
  r.recall_silent = j.at("recall_silent").get<double>();
  r.f1_avg = (r.f1_speak + r.f1_silent) / 2.0;
  r.bal_acc = (r.recall_speak + r.recall_silent) / 2.0;
  r.n = j.value("n", r.confusion.total());
  if (j.contains("per_category_acc"))
    for (const auto& [k, v] : j.at("per_category_acc").items())
      if (auto cat = parse_category(k)) r.per_category_acc[*cat] = v.get<double>();
  if (j.contains("per_category_n"))
    for (const auto& [k, v] : j.at("per_category_n").items())
      if (auto cat = parse_category(k)) r.per_category_n[*cat] = v.get<std::size_t>();
  return r;
}

inline std::string csv_header() { return "name,I1,I2,S1,S2,Acc,F1_avg,Bal Acc\n"; }

// Percentages to two decimals; a category absent from the report is blank.
inline std::string csv_row(const std::string& name, const MetricsReport& r) {
  std::string row = name;
  for (auto cat : kAllCategories) {
    row += ',';
    if (auto it = r.per_category_acc.find(cat); it != r.per_category_acc.end()) row += percent(it->second);
  }
  row += ',' + percent(r.acc) + ',' + percent(r.f1_avg) + ',' + percent(r.bal_acc) + '\n';
  return row;
}

}  // namespace turntake::metrics
