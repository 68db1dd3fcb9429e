#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "dfkd/adv_schedule.hpp"
#include "dfkd/generator.hpp"
#include "dfkd/metrics.hpp"
#include "dfkd/nn.hpp"
#include "dfkd/rng.hpp"
#include "dfkd/spl.hpp"

namespace dfkd::distill {

struct DistillConfig {
  double temperature = 4.0;    // softening inside the KD loss
  int total_epochs = 50;
  int gen_steps = 15;          // generator updates per epoch
  int student_steps = 15;      // student updates per epoch
  int batch_size = 256;
  spl::Strategy strategy = spl::Strategy::Logarithm;
  spl::LambdaSchedule lambda_schedule{};
  sched::AdvSchedule adv_schedule{};
  gen::GenCoefficients gen_coef{};
  double gen_lr = 1e-3;
  double student_lr = 1e-3;
  std::uint64_t seed = 0;

  // Vanilla ablation: the self-paced machinery is bypassed entirely (weights
  // are literal ones, no pace computation) and the adversarial coefficient is
  // frozen at fixed_alpha_adv for the whole run.
  bool curriculum = true;
  double fixed_alpha_adv = 0.0;

  void validate() const;
};

struct EpochReport {
  int epoch = 0;
  double acc1 = 0.0;
  double agree1 = 0.0;
  double loyalty_mean = 0.0;
  double lambda_t = 0.0;
  double alpha_adv_t = 0.0;
  double mean_weight = 0.0;
  double mean_difficulty = 0.0;
  gen::GenLossBreakdown gen_loss{};
  double weighted_kd_loss = 0.0;
};

// Held-out evaluation data prepared once per run: image chunks, labels, and
// the frozen teacher's logits over the same ordering.
struct EvalData {
  std::vector<Mat> x_chunks;
  IVec labels;
  Mat teacher_logits;  // (classes, total)
};

// One reweighted gradient step on  (1/B) * sum_i w_i * l_i  where l is the
// per-sample KD loss of the batch the student network just forwarded.
// Returns the weighted loss value. Throws training_diverged on non-finite
// loss. Weights must come from the same batch's losses.
double student_step(nn::Network& student, nn::Adam& opt, const Mat& teacher_logits,
                    const Mat& student_logits, const Vec& weights,
                    double temperature, int epoch, long step);

// Alternating-optimization trainer: per epoch, gen_steps generator updates at
// the scheduled adversarial coefficient, then student_steps reweighted student
// updates at the scheduled pace threshold, then evaluation.
class Trainer {
 public:
  Trainer(nn::Network* teacher, nn::Network* student, nn::Network* generator,
          const gen::GeneratorSpec& gen_spec, const DistillConfig& cfg);

  EpochReport train_epoch(int epoch, const EvalData& eval);

  // Per-sample difficulties accumulated over the student phase of the last
  // epoch (the data behind the difficulty histograms).
  const Vec& last_epoch_difficulties() const { return last_difficulties_; }

  metrics::EvalBatch evaluate(const EvalData& eval) const;

  // Mutable training state (student, generator, optimizers, RNG) for
  // checkpointing. Byte-exact round trip.
  void save_state(std::ostream& os) const;
  void load_state(std::istream& is);

  const DistillConfig& config() const { return cfg_; }

 private:
  nn::Network* teacher_;
  nn::Network* student_;
  nn::Network* generator_;
  gen::GeneratorSpec gen_spec_;
  DistillConfig cfg_;
  nn::Adam gen_opt_;
  nn::Adam student_opt_;
  Rng rng_;
  Vec last_difficulties_;
};

// MM convergence diagnostic on a frozen pseudo-batch: alternates the exact
// v-step (closed-form weights at fixed lambda) with a student gradient step
// that backtracks until the weighted loss (the majorant, up to a constant)
// does not increase, and records the latent objective after every step. The
// returned sequence is the Proposition-1 descent trace.
std::vector<double> mm_diagnostic(nn::Network& student, const Mat& x,
                                  const Mat& teacher_logits,
                                  spl::Strategy strategy, double lambda,
                                  double temperature, int steps,
                                  double lr = 0.05);

}  // namespace dfkd::distill
