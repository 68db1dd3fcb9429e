#include "dfkd/losses.hpp"

#include <cmath>

#include "dfkd/errors.hpp"

namespace dfkd::losses {
namespace {

void check_finite(const Mat& logits, const char* who) {
  if (!logits.allFinite())
    throw data_error(std::string(who) + ": non-finite logits");
}

void check_same_shape(const Mat& a, const Mat& b, const char* who) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw argument_error(std::string(who) + ": logit shapes differ");
}

}  // namespace

Mat log_softmax(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const double mx = logits.col(j).maxCoeff();
    const double lse = mx + std::log((logits.col(j).array() - mx).exp().sum());
    out.col(j) = logits.col(j).array() - lse;
  }
  return out;
}

Mat softmax(const Mat& logits) { return log_softmax(logits).array().exp(); }

IVec col_argmax(const Mat& logits) {
  IVec idx(logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    int best = 0;
    for (Eigen::Index i = 1; i < logits.rows(); ++i)
      if (logits(i, j) > logits(best, j)) best = static_cast<int>(i);
    idx[j] = best;
  }
  return idx;
}

Divergence divergence_from_string(const std::string& name) {
  if (name == "kl") return Divergence::KL;
  if (name == "js") return Divergence::JS;
  throw argument_error("unknown divergence '" + name + "' (expected kl|js)");
}

std::string to_string(Divergence d) {
  return d == Divergence::KL ? "kl" : "js";
}

DivergenceResult adversarial_divergence(const Mat& teacher_logits,
                                        const Mat& student_logits,
                                        Divergence kind, double temperature) {
  check_same_shape(teacher_logits, student_logits, "adversarial_divergence");
  check_finite(teacher_logits, "adversarial_divergence");
  check_finite(student_logits, "adversarial_divergence");
  if (!(temperature > 0.0))
    throw argument_error("adversarial_divergence: temperature must be > 0");

  const double inv_t = 1.0 / temperature;
  const Mat logp = log_softmax(teacher_logits * inv_t);
  const Mat logq = log_softmax(student_logits * inv_t);
  const Mat p = logp.array().exp();
  const Mat q = logq.array().exp();
  const Eigen::Index batch = teacher_logits.cols();
  const double inv_b = 1.0 / static_cast<double>(batch);

  DivergenceResult res;
  res.d_teacher = Mat::Zero(teacher_logits.rows(), batch);
  res.d_student = Mat::Zero(teacher_logits.rows(), batch);

  if (kind == Divergence::KL) {
    for (Eigen::Index j = 0; j < batch; ++j) {
      const Vec diff = logp.col(j) - logq.col(j);
      const double l = (p.col(j).array() * diff.array()).sum();
      res.value += l;
      // d l / d t_k = (1/T) p_k (diff_k - l);  d l / d s_k = (1/T)(q_k - p_k)
      res.d_teacher.col(j) =
          (inv_t * inv_b) * (p.col(j).array() * (diff.array() - l));
      res.d_student.col(j) = (inv_t * inv_b) * (q.col(j) - p.col(j));
    }
  } else {
    for (Eigen::Index j = 0; j < batch; ++j) {
      Vec g(p.rows()), h(p.rows());
      double js = 0.0;
      for (Eigen::Index i = 0; i < p.rows(); ++i) {
        const double m = 0.5 * (p(i, j) + q(i, j));
        // ratio form keeps a self-divergence at exactly zero
        g[i] = 0.5 * std::log(std::max(p(i, j) / m, kLogFloor));
        h[i] = 0.5 * std::log(std::max(q(i, j) / m, kLogFloor));
        if (p(i, j) > 0.0) js += p(i, j) * g[i];
        if (q(i, j) > 0.0) js += q(i, j) * h[i];
      }
      res.value += js;
      const double pg = (p.col(j).array() * g.array()).sum();
      const double qh = (q.col(j).array() * h.array()).sum();
      res.d_teacher.col(j) =
          (inv_t * inv_b) * (p.col(j).array() * (g.array() - pg));
      res.d_student.col(j) =
          (inv_t * inv_b) * (q.col(j).array() * (h.array() - qh));
    }
  }
  res.value *= inv_b;
  return res;
}

OneHotResult one_hot_loss(const Mat& teacher_logits) {
  check_finite(teacher_logits, "one_hot_loss");
  if (teacher_logits.rows() < 2)
    throw argument_error("one_hot_loss: need at least 2 classes");
  const Eigen::Index batch = teacher_logits.cols();
  const double inv_b = 1.0 / static_cast<double>(batch);
  const Mat logp = log_softmax(teacher_logits);
  const IVec labels = col_argmax(teacher_logits);

  OneHotResult res;
  res.d_logits = logp.array().exp() * inv_b;
  for (Eigen::Index j = 0; j < batch; ++j) {
    res.value -= logp(labels[j], j);
    res.d_logits(labels[j], j) -= inv_b;
  }
  res.value *= inv_b;
  return res;
}

BnAlignResult bn_alignment_loss(const BNStatSet& reference,
                                const BNStatSet& observed) {
  if (reference.layers.size() != observed.layers.size())
    throw argument_error("bn_alignment_loss: layer count mismatch");
  BnAlignResult res;
  res.d_mean.reserve(observed.layers.size());
  res.d_var.reserve(observed.layers.size());
  for (std::size_t l = 0; l < observed.layers.size(); ++l) {
    const auto& ref = reference.layers[l];
    const auto& obs = observed.layers[l];
    if (ref.mean.size() != obs.mean.size() || ref.var.size() != obs.var.size())
      throw argument_error("bn_alignment_loss: layer " + std::to_string(l) +
                           " dimension mismatch");
    const Vec dmean = obs.mean - ref.mean;
    const Vec dvar = obs.var - ref.var;
    res.value += dmean.squaredNorm() + dvar.squaredNorm();
    res.d_mean.push_back(2.0 * dmean);
    res.d_var.push_back(2.0 * dvar);
  }
  return res;
}

Vec per_sample_kd_loss(const Mat& teacher_logits, const Mat& student_logits,
                       double temperature) {
  check_same_shape(teacher_logits, student_logits, "per_sample_kd_loss");
  check_finite(teacher_logits, "per_sample_kd_loss");
  check_finite(student_logits, "per_sample_kd_loss");
  if (!(temperature > 0.0))
    throw argument_error("per_sample_kd_loss: temperature must be > 0");
  const double inv_t = 1.0 / temperature;
  const Mat logp = log_softmax(teacher_logits * inv_t);
  const Mat logq = log_softmax(student_logits * inv_t);
  Vec losses(teacher_logits.cols());
  for (Eigen::Index j = 0; j < teacher_logits.cols(); ++j) {
    losses[j] = (logp.col(j).array().exp() *
                 (logp.col(j) - logq.col(j)).array())
                    .sum();
    // Rounding can leave a tiny negative residue when p == q.
    if (losses[j] < 0.0 && losses[j] > -1e-15) losses[j] = 0.0;
  }
  return losses;
}

Mat kd_grad_student(const Mat& teacher_logits, const Mat& student_logits,
                    double temperature, const Vec& weights, double scale) {
  check_same_shape(teacher_logits, student_logits, "kd_grad_student");
  if (weights.size() != teacher_logits.cols())
    throw argument_error("kd_grad_student: weight count mismatch");
  const double inv_t = 1.0 / temperature;
  const Mat p = softmax(teacher_logits * inv_t);
  const Mat q = softmax(student_logits * inv_t);
  Mat grad(p.rows(), p.cols());
  for (Eigen::Index j = 0; j < p.cols(); ++j)
    grad.col(j) = (scale * weights[j] * inv_t) * (q.col(j) - p.col(j));
  return grad;
}

CeResult cross_entropy(const Mat& logits, const IVec& labels) {
  check_finite(logits, "cross_entropy");
  if (labels.size() != logits.cols())
    throw argument_error("cross_entropy: label count mismatch");
  const Eigen::Index batch = logits.cols();
  const double inv_b = 1.0 / static_cast<double>(batch);
  const Mat logp = log_softmax(logits);
  CeResult res;
  res.d_logits = logp.array().exp() * inv_b;
  for (Eigen::Index j = 0; j < batch; ++j) {
    const int y = labels[j];
    if (y < 0 || y >= logits.rows())
      throw argument_error("cross_entropy: label out of range");
    res.value -= logp(y, j);
    res.d_logits(y, j) -= inv_b;
  }
  res.value *= inv_b;
  return res;
}

}  // namespace dfkd::losses
