#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>

#include "mageval/label.hpp"

namespace mageval {

// Outcome counts of one evaluation group. Unresolved replies are tracked per
// gold class so that every metric can charge them against the class they
// failed to answer (an unresolved gold-yes behaves like a false negative, an
// unresolved gold-no like a false positive).
struct ConfusionMatrix {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t tn = 0;
  std::int64_t fn = 0;
  std::int64_t unresolved_gold_yes = 0;
  std::int64_t unresolved_gold_no = 0;

  std::int64_t total() const {
    return tp + fp + tn + fn + unresolved_gold_yes + unresolved_gold_no;
  }
  std::int64_t effective_fn() const { return fn + unresolved_gold_yes; }
  std::int64_t effective_fp() const { return fp + unresolved_gold_no; }
  std::int64_t gold_yes() const { return tp + fn + unresolved_gold_yes; }
  std::int64_t gold_no() const { return tn + fp + unresolved_gold_no; }
  std::int64_t unresolved() const { return unresolved_gold_yes + unresolved_gold_no; }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    tp += o.tp; fp += o.fp; tn += o.tn; fn += o.fn;
    unresolved_gold_yes += o.unresolved_gold_yes;
    unresolved_gold_no += o.unresolved_gold_no;
    return *this;
  }
  bool operator==(const ConfusionMatrix&) const = default;
};

// All values are ratios in [0,1]; use round_display() for table output.
// Every ratio with a zero denominator is defined as 0 so that degenerate
// all-one-class responders score 0 instead of raising.
struct MetricsReport {
  double accuracy = 0.0;
  double precision = 0.0;    // yes-class precision
  double recall_yes = 0.0;
  double recall_no = 0.0;
  double f1_pos = 0.0;
  double f1_neg = 0.0;
  double macro_f1 = 0.0;
  double h_recall = 0.0;     // harmonic mean of the two class recalls
  double phd_score = 0.0;    // harmonic mean of h_recall and accuracy
  double unresolved_rate = 0.0;
};

struct ImprovementDelta {
  std::string metric = "macro_f1";
  double baseline = 0.0;       // ratio scale
  double treated = 0.0;        // ratio scale
  double delta_percent = 0.0;  // 100 * (treated - baseline) / baseline
};

// Counts gold/answer outcomes. Throws ValidationError on an empty input.
ConfusionMatrix tally(std::span<const std::pair<Label, Answer>> outcomes);

// Computes the full report from counts. Throws ValidationError when total() == 0.
MetricsReport compute_metrics(const ConfusionMatrix& cm);

// Recovers integer counts from published (accuracy, precision, recall) ratios
// and known per-class totals:
//   tp = round(recall * n_yes), fp = round(tp/precision - tp),
//   tn = n_no - fp, fn = n_yes - tp.
// The result must re-derive all three input ratios within 0.005; otherwise a
// ValidationError naming the offending metric is thrown.
ConfusionMatrix reconstruct_confusion(double accuracy, double precision, double recall,
                                      std::int64_t n_yes, std::int64_t n_no);

// Relative macro-F1 improvement of `treated` over `baseline`, in percent.
// Throws ValidationError when the baseline macro F1 is zero.
ImprovementDelta relative_improvement(const MetricsReport& baseline, const MetricsReport& treated);

// Field-wise unweighted arithmetic mean over sub-task reports. The phd_score
// field is averaged directly, not re-derived from the averaged inputs.
// Throws ValidationError on an empty map.
MetricsReport aggregate_subtasks(const std::map<std::string, MetricsReport>& reports);

// Display rounding for tables: ratio -> one-decimal percentage, ties half-up.
double round_display(double ratio);

}  // namespace mageval
