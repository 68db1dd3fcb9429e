#pragma once

#include <vector>

#include "dfkd/types.hpp"

namespace dfkd::metrics {

// One evaluation batch: logits are (classes, batch), labels in [0, classes).
struct EvalBatch {
  Mat teacher_logits;
  Mat student_logits;
  IVec labels;
};

// Fraction of samples whose student argmax equals the label.
double top1_accuracy(const EvalBatch& batch);

// Fraction of samples whose student argmax equals the teacher argmax.
double top1_agreement(const EvalBatch& batch);

// Probability loyalty per sample: 1 - sqrt(JS2(p_teacher, p_student)) at
// temperature 1, with the JS divergence in bits (base-2 logs) so that it is
// bounded by 1 and the loyalty stays in [0, 1].
struct LoyaltyResult {
  Vec per_sample;
  double mean = 0.0;
};
LoyaltyResult probability_loyalty(const EvalBatch& batch);

// Equal-width histogram over [0, max(losses)].
struct Histogram {
  Vec edges;                 // bins + 1 ascending edges
  std::vector<long> counts;  // per bin, summing to the input length
};
Histogram difficulty_histogram(const Vec& losses, int bins);

// Mean and population variance of per-epoch accuracy from a window start
// (inclusive) to the end of the log.
struct StabilityStats {
  double mean = 0.0;
  double variance = 0.0;
  int window_start_epoch = 0;
};
StabilityStats stability_stats(const std::vector<double>& acc_by_epoch,
                               int window_start_epoch);

}  // namespace dfkd::metrics
