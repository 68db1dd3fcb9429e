#pragma once

#include <string>
#include <vector>

#include "dfkd/types.hpp"

namespace dfkd::losses {

// Logit matrices are (classes, batch); each column is one sample.

Mat log_softmax(const Mat& logits);
Mat softmax(const Mat& logits);

// Argmax per column, ties broken toward the lowest class index.
IVec col_argmax(const Mat& logits);

enum class Divergence { KL, JS };
Divergence divergence_from_string(const std::string& name);  // "kl" | "js"
std::string to_string(Divergence d);

// Batch-mean divergence between temperature-softened class distributions,
// with analytic gradients w.r.t. both logit matrices. KL is taken
// teacher-first: KL(softmax(t/T) || softmax(s/T)). JS uses natural logs.
struct DivergenceResult {
  double value = 0.0;
  Mat d_teacher;
  Mat d_student;
};
DivergenceResult adversarial_divergence(const Mat& teacher_logits,
                                        const Mat& student_logits,
                                        Divergence kind, double temperature);

// Mean cross-entropy of the teacher's own distribution against its argmax
// pseudo-labels. Low when the teacher is confident; pushes generated samples
// toward class-pure regions.
struct OneHotResult {
  double value = 0.0;
  Mat d_logits;
};
OneHotResult one_hot_loss(const Mat& teacher_logits);

// Per-layer first/second moments at batch-norm layer inputs.
struct BNStatSet {
  enum class Source { TeacherRunning, BatchObserved };

  struct LayerStats {
    Vec mean;
    Vec var;
  };

  Source source = Source::BatchObserved;
  std::vector<LayerStats> layers;
};

// Sum over layers of squared L2 distances between the observed statistics
// and the reference (running) statistics; gradients are w.r.t. the observed
// side. Zero exactly when every layer matches.
struct BnAlignResult {
  double value = 0.0;
  std::vector<Vec> d_mean;
  std::vector<Vec> d_var;
};
BnAlignResult bn_alignment_loss(const BNStatSet& reference,
                                const BNStatSet& observed);

// Per-sample KL(softmax(t/T) || softmax(s/T)); the training difficulty
// measure and the distillation loss.
Vec per_sample_kd_loss(const Mat& teacher_logits, const Mat& student_logits,
                       double temperature);

// Gradient w.r.t. student logits of  scale * sum_i w_i * l_i  for the
// per-sample KD loss above.
Mat kd_grad_student(const Mat& teacher_logits, const Mat& student_logits,
                    double temperature, const Vec& weights, double scale);

// Mean cross-entropy against integer labels plus its logit gradient
// (teacher pretraining).
struct CeResult {
  double value = 0.0;
  Mat d_logits;
};
CeResult cross_entropy(const Mat& logits, const IVec& labels);

}  // namespace dfkd::losses
