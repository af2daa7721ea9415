#include "mageval/metrics.hpp"

#include <cmath>
#include <cstdio>

#include "mageval/errors.hpp"

namespace mageval {

namespace {

double safe_div(double num, double den) {
  return den == 0.0 ? 0.0 : num / den;
}

double harmonic(double a, double b) {
  return safe_div(2.0 * a * b, a + b);
}

std::int64_t round_count(double x) {
  // Counts are non-negative, so llround's half-away-from-zero is half-up here.
  return std::llround(x);
}

std::string fmt4(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", x);
  return buf;
}

}  // namespace

ConfusionMatrix tally(std::span<const std::pair<Label, Answer>> outcomes) {
  if (outcomes.empty()) throw ValidationError("tally: empty outcome sequence");
  ConfusionMatrix cm;
  for (const auto& [gold, answer] : outcomes) {
    if (gold == Label::yes) {
      if (answer == Answer::yes) ++cm.tp;
      else if (answer == Answer::no) ++cm.fn;
      else ++cm.unresolved_gold_yes;
    } else {
      if (answer == Answer::no) ++cm.tn;
      else if (answer == Answer::yes) ++cm.fp;
      else ++cm.unresolved_gold_no;
    }
  }
  return cm;
}

MetricsReport compute_metrics(const ConfusionMatrix& cm) {
  if (cm.tp < 0 || cm.fp < 0 || cm.tn < 0 || cm.fn < 0 ||
      cm.unresolved_gold_yes < 0 || cm.unresolved_gold_no < 0) {
    throw ValidationError("compute_metrics: negative count");
  }
  const double total = static_cast<double>(cm.total());
  if (total == 0.0) throw ValidationError("compute_metrics: empty confusion matrix");

  const double tp = static_cast<double>(cm.tp);
  const double tn = static_cast<double>(cm.tn);
  const double fpe = static_cast<double>(cm.effective_fp());
  const double fne = static_cast<double>(cm.effective_fn());

  MetricsReport r;
  r.accuracy = (tp + tn) / total;
  r.precision = safe_div(tp, tp + fpe);
  r.recall_yes = safe_div(tp, tp + fne);
  r.recall_no = safe_div(tn, tn + fpe);
  r.f1_pos = harmonic(r.precision, r.recall_yes);
  const double precision_no = safe_div(tn, tn + fne);
  r.f1_neg = harmonic(precision_no, r.recall_no);
  r.macro_f1 = (r.f1_pos + r.f1_neg) / 2.0;
  r.h_recall = harmonic(r.recall_yes, r.recall_no);
  r.phd_score = harmonic(r.h_recall, r.accuracy);
  r.unresolved_rate = static_cast<double>(cm.unresolved()) / total;
  return r;
}

ConfusionMatrix reconstruct_confusion(double accuracy, double precision, double recall,
                                      std::int64_t n_yes, std::int64_t n_no) {
  if (n_yes <= 0 || n_no <= 0) {
    throw ValidationError("reconstruct_confusion: class totals must be positive");
  }
  for (auto [name, v] : {std::pair{"accuracy", accuracy},
                         std::pair{"precision", precision},
                         std::pair{"recall", recall}}) {
    if (v < 0.0 || v > 1.0) {
      throw ValidationError(std::string("reconstruct_confusion: ") + name + " outside [0,1]");
    }
  }

  ConfusionMatrix cm;
  cm.tp = round_count(recall * static_cast<double>(n_yes));
  if (cm.tp > 0 && precision == 0.0) {
    throw ValidationError("inconsistent row: precision 0 with nonzero recall");
  }
  cm.fp = precision == 0.0
              ? 0
              : round_count(static_cast<double>(cm.tp) / precision - static_cast<double>(cm.tp));
  cm.tn = n_no - cm.fp;
  cm.fn = n_yes - cm.tp;
  if (cm.fp > n_no) throw ValidationError("inconsistent row: precision implies fp > n_no");

  const double tol = 0.005;
  const double acc2 = static_cast<double>(cm.tp + cm.tn) / static_cast<double>(n_yes + n_no);
  const double p2 = safe_div(static_cast<double>(cm.tp), static_cast<double>(cm.tp + cm.fp));
  const double r2 = safe_div(static_cast<double>(cm.tp), static_cast<double>(cm.tp + cm.fn));
  for (auto [name, got, want] : {std::tuple{"accuracy", acc2, accuracy},
                                 std::tuple{"precision", p2, precision},
                                 std::tuple{"recall", r2, recall}}) {
    if (std::fabs(got - want) > tol) {
      throw ValidationError(std::string("inconsistent row: ") + name + " re-derives to " +
                            fmt4(got) + " vs given " + fmt4(want));
    }
  }
  return cm;
}

ImprovementDelta relative_improvement(const MetricsReport& baseline, const MetricsReport& treated) {
  if (baseline.macro_f1 == 0.0) {
    throw ValidationError("relative_improvement: baseline macro F1 is zero");
  }
  ImprovementDelta d;
  d.baseline = baseline.macro_f1;
  d.treated = treated.macro_f1;
  d.delta_percent = 100.0 * (d.treated - d.baseline) / d.baseline;
  return d;
}

MetricsReport aggregate_subtasks(const std::map<std::string, MetricsReport>& reports) {
  if (reports.empty()) throw ValidationError("aggregate_subtasks: no sub-task reports");
  MetricsReport mean;
  for (const auto& [name, r] : reports) {
    mean.accuracy += r.accuracy;
    mean.precision += r.precision;
    mean.recall_yes += r.recall_yes;
    mean.recall_no += r.recall_no;
    mean.f1_pos += r.f1_pos;
    mean.f1_neg += r.f1_neg;
    mean.macro_f1 += r.macro_f1;
    mean.h_recall += r.h_recall;
    mean.phd_score += r.phd_score;
    mean.unresolved_rate += r.unresolved_rate;
  }
  const double n = static_cast<double>(reports.size());
  mean.accuracy /= n;
  mean.precision /= n;
  mean.recall_yes /= n;
  mean.recall_no /= n;
  mean.f1_pos /= n;
  mean.f1_neg /= n;
  mean.macro_f1 /= n;
  mean.h_recall /= n;
  mean.phd_score /= n;
  mean.unresolved_rate /= n;
  return mean;
}

double round_display(double ratio) {
  return static_cast<double>(std::llround(ratio * 1000.0)) / 10.0;
}

}  // namespace mageval
