#include "dfkd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dfkd/errors.hpp"
#include "dfkd/losses.hpp"

namespace dfkd::metrics {
namespace {

void check_batch(const EvalBatch& b, bool need_labels) {
  if (b.teacher_logits.rows() != b.student_logits.rows() ||
      b.teacher_logits.cols() != b.student_logits.cols())
    throw argument_error("EvalBatch: teacher/student logit shapes differ");
  if (need_labels) {
    if (b.labels.size() != b.student_logits.cols())
      throw argument_error("EvalBatch: label count mismatch");
    for (Eigen::Index i = 0; i < b.labels.size(); ++i)
      if (b.labels[i] < 0 || b.labels[i] >= b.student_logits.rows())
        throw argument_error("EvalBatch: label out of range");
  }
}

}  // namespace

double top1_accuracy(const EvalBatch& batch) {
  check_batch(batch, true);
  const IVec pred = losses::col_argmax(batch.student_logits);
  long hits = 0;
  for (Eigen::Index i = 0; i < pred.size(); ++i)
    if (pred[i] == batch.labels[i]) ++hits;
  return pred.size() == 0 ? 0.0
                          : static_cast<double>(hits) /
                                static_cast<double>(pred.size());
}

double top1_agreement(const EvalBatch& batch) {
  check_batch(batch, false);
  const IVec sp = losses::col_argmax(batch.student_logits);
  const IVec tp = losses::col_argmax(batch.teacher_logits);
  long hits = 0;
  for (Eigen::Index i = 0; i < sp.size(); ++i)
    if (sp[i] == tp[i]) ++hits;
  return sp.size() == 0
             ? 0.0
             : static_cast<double>(hits) / static_cast<double>(sp.size());
}

LoyaltyResult probability_loyalty(const EvalBatch& batch) {
  check_batch(batch, false);
  const Mat logp = losses::log_softmax(batch.teacher_logits);
  const Mat logq = losses::log_softmax(batch.student_logits);
  const Eigen::Index n = batch.teacher_logits.cols();
  LoyaltyResult res;
  res.per_sample.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double js = 0.0;  // natural-log JS via probability ratios: exact 0 at p == q
    for (Eigen::Index i = 0; i < logp.rows(); ++i) {
      const double p = std::exp(logp(i, j));
      const double q = std::exp(logq(i, j));
      const double m = 0.5 * (p + q);
      if (p > 0.0) js += 0.5 * p * std::log(std::max(p / m, kLogFloor));
      if (q > 0.0) js += 0.5 * q * std::log(std::max(q / m, kLogFloor));
    }
    const double js_bits = std::clamp(js / std::numbers::ln2, 0.0, 1.0);
    res.per_sample[j] = 1.0 - std::sqrt(js_bits);
  }
  res.mean = n == 0 ? 0.0 : res.per_sample.mean();
  return res;
}

Histogram difficulty_histogram(const Vec& losses, int bins) {
  if (losses.size() == 0)
    throw argument_error("difficulty_histogram: empty loss vector");
  if (bins < 1) throw argument_error("difficulty_histogram: bins must be >= 1");
  const double max_loss = losses.maxCoeff();
  const double span = max_loss > 0.0 ? max_loss : 1.0;
  Histogram h;
  h.edges.resize(bins + 1);
  for (int i = 0; i <= bins; ++i)
    h.edges[i] = span * static_cast<double>(i) / bins;
  h.counts.assign(bins, 0);
  for (Eigen::Index i = 0; i < losses.size(); ++i) {
    int bin = static_cast<int>(losses[i] / span * bins);
    bin = std::clamp(bin, 0, bins - 1);
    ++h.counts[static_cast<std::size_t>(bin)];
  }
  return h;
}

StabilityStats stability_stats(const std::vector<double>& acc_by_epoch,
                               int window_start_epoch) {
  if (window_start_epoch < 0 ||
      static_cast<std::size_t>(window_start_epoch) >= acc_by_epoch.size())
    throw argument_error("stability_stats: window start beyond log");
  StabilityStats s;
  s.window_start_epoch = window_start_epoch;
  const std::size_t n = acc_by_epoch.size() - window_start_epoch;
  double sum = 0.0;
  for (std::size_t i = window_start_epoch; i < acc_by_epoch.size(); ++i)
    sum += acc_by_epoch[i];
  s.mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = window_start_epoch; i < acc_by_epoch.size(); ++i) {
    const double d = acc_by_epoch[i] - s.mean;
    ss += d * d;
  }
  s.variance = ss / static_cast<double>(n);
  return s;
}

}  // namespace dfkd::metrics
