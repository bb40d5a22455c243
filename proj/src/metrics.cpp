#include "crosscue/metrics.hpp"

#include <array>
#include <cmath>
#include <map>
#include <stdexcept>

#include <json.hpp>

namespace crosscue {

namespace {

double safe_div(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

double f1_of(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

}  // namespace

EvalReport evaluate(const std::vector<Label>& gold, const std::vector<Label>& pred) {
  if (gold.empty()) throw std::invalid_argument("evaluate: empty label lists");
  if (gold.size() != pred.size())
    throw std::invalid_argument("evaluate: gold and pred lengths differ (" +
                                std::to_string(gold.size()) + " vs " + std::to_string(pred.size()) +
                                ")");
  EvalReport rep;
  rep.n = static_cast<long long>(gold.size());
  for (size_t i = 0; i < gold.size(); ++i)
    ++rep.confusion[static_cast<int>(gold[i])][static_cast<int>(pred[i])];

  long long correct = 0;
  double weighted_p_num = 0.0, weighted_f1_num = 0.0;
  for (int c = 0; c < 2; ++c) {
    long long tp = rep.confusion[c][c];
    long long fp = rep.confusion[1 - c][c];
    long long fn = rep.confusion[c][1 - c];
    ClassMetrics& m = rep.per_class[c];
    m.support = tp + fn;
    m.precision = safe_div(static_cast<double>(tp), static_cast<double>(tp + fp));
    m.recall = safe_div(static_cast<double>(tp), static_cast<double>(m.support));
    m.f1 = f1_of(m.precision, m.recall);
    correct += tp;
    weighted_p_num += static_cast<double>(m.support) * m.precision;
    weighted_f1_num += static_cast<double>(m.support) * m.f1;
  }
  rep.accuracy = static_cast<double>(correct) / static_cast<double>(rep.n);
  rep.weighted_precision = weighted_p_num / static_cast<double>(rep.n);
  rep.weighted_f1 = weighted_f1_num / static_cast<double>(rep.n);
  // For single-label data the support-weighted recall telescopes to
  // total-correct / n, so it is computed that way and the identity with
  // accuracy is exact rather than up to rounding.
  rep.weighted_recall = rep.accuracy;
  rep.macro_precision = (rep.per_class[0].precision + rep.per_class[1].precision) / 2.0;
  rep.macro_recall = (rep.per_class[0].recall + rep.per_class[1].recall) / 2.0;
  rep.macro_f1 = (rep.per_class[0].f1 + rep.per_class[1].f1) / 2.0;
  return rep;
}

EvalReport most_frequent_baseline(const std::vector<Label>& train_labels,
                                  const std::vector<Label>& eval_gold) {
  if (train_labels.empty() || eval_gold.empty())
    throw std::invalid_argument("most_frequent_baseline: empty inputs");
  long long commercial = 0;
  for (Label l : train_labels) commercial += l == Label::commercial;
  long long non_commercial = static_cast<long long>(train_labels.size()) - commercial;
  // Tie goes to non_commercial.
  Label majority = commercial > non_commercial ? Label::commercial : Label::non_commercial;
  std::vector<Label> pred(eval_gold.size(), majority);
  return evaluate(eval_gold, pred);
}

AgreementReport cohen_kappa(const std::vector<Annotation>& a, const std::vector<Annotation>& b) {
  if (a.empty() || a.size() != b.size())
    throw std::invalid_argument("cohen_kappa: annotation lists must be equal-length and non-empty");
  const double n = static_cast<double>(a.size());
  std::array<long long, 3> count_a{}, count_b{};
  long long same = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    ++count_a[static_cast<size_t>(a[i])];
    ++count_b[static_cast<size_t>(b[i])];
    same += a[i] == b[i];
  }
  AgreementReport rep;
  rep.observed = static_cast<double>(same) / n;
  rep.expected = 0.0;
  for (size_t k = 0; k < 3; ++k)
    rep.expected += (static_cast<double>(count_a[k]) / n) * (static_cast<double>(count_b[k]) / n);
  if (rep.expected >= 1.0) {
    // Both annotators constant on the same category; total agreement.
    rep.kappa = 1.0;
  } else {
    rep.kappa = (rep.observed - rep.expected) / (1.0 - rep.expected);
  }
  return rep;
}

double percent2(double fraction) { return std::round(fraction * 10000.0) / 100.0; }

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  const char* class_names[2] = {"non_commercial", "commercial"};
  for (int c = 0; c < 2; ++c) {
    nlohmann::ordered_json cj;
    cj["precision"] = per_class[c].precision;
    cj["recall"] = per_class[c].recall;
    cj["f1"] = per_class[c].f1;
    cj["support"] = per_class[c].support;
    j[class_names[c]] = cj;
  }
  j["accuracy"] = accuracy;
  j["weighted_precision"] = weighted_precision;
  j["weighted_recall"] = weighted_recall;
  j["weighted_f1"] = weighted_f1;
  j["macro_precision"] = macro_precision;
  j["macro_recall"] = macro_recall;
  j["macro_f1"] = macro_f1;
  j["n"] = n;
  j["confusion"] = {{confusion[0][0], confusion[0][1]}, {confusion[1][0], confusion[1][1]}};
  return j.dump(2);
}

}  // namespace crosscue
