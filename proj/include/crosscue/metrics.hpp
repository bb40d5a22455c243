#pragma once

#include <string>
#include <vector>

#include "crosscue/corpus.hpp"

namespace crosscue {

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long long support = 0;
};

struct EvalReport {
  ClassMetrics per_class[2];      // indexed by Label value
  long long confusion[2][2] = {}; // [gold][pred]
  long long n = 0;
  double accuracy = 0.0;
  double weighted_precision = 0.0;
  double weighted_recall = 0.0;  // equals accuracy for single-label tasks
  double weighted_f1 = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;

  std::string to_json() const;  // stable key names, full precision
};

// Per-class precision/recall/F1 with the 0/0 -> 0 convention, weighted
// averages using gold supports, unweighted macro averages.
EvalReport evaluate(const std::vector<Label>& gold, const std::vector<Label>& pred);

// Predicts the majority training label (tie -> non_commercial) everywhere.
EvalReport most_frequent_baseline(const std::vector<Label>& train_labels,
                                  const std::vector<Label>& eval_gold);

// Annotation values cover the 3-way annotation space.
enum class Annotation { non_commercial = 0, commercial = 1, unclear = 2 };

inline Annotation to_annotation(Label label) { return static_cast<Annotation>(label); }

struct AgreementReport {
  double observed = 0.0;  // p_o
  double expected = 0.0;  // p_e
  double kappa = 0.0;
};

AgreementReport cohen_kappa(const std::vector<Annotation>& a, const std::vector<Annotation>& b);

// Display value: metric scaled by 100 and rounded to two decimals.
double percent2(double fraction);

}  // namespace crosscue
