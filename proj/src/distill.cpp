#include "dfkd/distill.hpp"

#include <cmath>

#include "dfkd/errors.hpp"
#include "dfkd/losses.hpp"

namespace dfkd::distill {

void DistillConfig::validate() const {
  if (!(temperature > 0.0)) throw argument_error("kd.T must be > 0");
  if (total_epochs < 1) throw argument_error("kd.epochs must be >= 1");
  if (batch_size < 1) throw argument_error("kd.batch_size must be >= 1");
  if (gen_steps < 1) throw argument_error("kd.gen_steps must be >= 1");
  if (student_steps < 1) throw argument_error("kd.student_steps must be >= 1");
}

double student_step(nn::Network& student, nn::Adam& opt, const Mat& teacher_logits,
                    const Mat& student_logits, const Vec& weights,
                    double temperature, int epoch, long step) {
  const Eigen::Index batch = teacher_logits.cols();
  if (weights.size() != batch)
    throw argument_error("student_step: weight/batch size mismatch");
  const Vec losses =
      losses::per_sample_kd_loss(teacher_logits, student_logits, temperature);
  const double weighted = weights.dot(losses) / static_cast<double>(batch);
  if (!std::isfinite(weighted))
    throw training_diverged("student loss is non-finite", epoch, step);

  const Mat grad =
      losses::kd_grad_student(teacher_logits, student_logits, temperature,
                              weights, 1.0 / static_cast<double>(batch));
  student.zero_grad();
  student.backward(grad, true);
  opt.step();
  return weighted;
}

Trainer::Trainer(nn::Network* teacher, nn::Network* student,
                 nn::Network* generator, const gen::GeneratorSpec& gen_spec,
                 const DistillConfig& cfg)
    : teacher_(teacher),
      student_(student),
      generator_(generator),
      gen_spec_(gen_spec),
      cfg_(cfg),
      gen_opt_(generator->params(), cfg.gen_lr),
      student_opt_(student->params(), cfg.student_lr),
      rng_(cfg.seed, /*stream=*/0x5EED) {
  cfg_.validate();
}

metrics::EvalBatch Trainer::evaluate(const EvalData& eval) const {
  metrics::EvalBatch batch;
  batch.teacher_logits = eval.teacher_logits;
  batch.labels = eval.labels;
  Mat s_logits(eval.teacher_logits.rows(), eval.teacher_logits.cols());
  Eigen::Index at = 0;
  for (const Mat& chunk : eval.x_chunks) {
    s_logits.middleCols(at, chunk.cols()) =
        student_->forward(chunk, nn::Mode::Eval);
    at += chunk.cols();
  }
  batch.student_logits = std::move(s_logits);
  return batch;
}

EpochReport Trainer::train_epoch(int epoch, const EvalData& eval) {
  EpochReport report;
  report.epoch = epoch;
  report.lambda_t = spl::lambda_at(cfg_.lambda_schedule, epoch);
  report.alpha_adv_t = cfg_.curriculum
                           ? sched::alpha_adv_at(cfg_.adv_schedule, epoch)
                           : cfg_.fixed_alpha_adv;

  // -- generation phase -----------------------------------------------------
  gen::GenCoefficients coef = cfg_.gen_coef;
  coef.alpha_adv = report.alpha_adv_t;
  gen::GenLossBreakdown acc{};
  for (int g = 0; g < cfg_.gen_steps; ++g) {
    const Mat z = rng_.normal_mat(gen_spec_.latent_dim, cfg_.batch_size);
    const auto breakdown = gen::generator_step(*generator_, gen_opt_, *teacher_,
                                               *student_, z, coef, epoch, g);
    acc.adv += breakdown.adv;
    acc.bn += breakdown.bn;
    acc.oh += breakdown.oh;
    acc.total += breakdown.total;
  }
  const double inv_g = 1.0 / static_cast<double>(cfg_.gen_steps);
  report.gen_loss = {acc.adv * inv_g, acc.bn * inv_g, acc.oh * inv_g,
                     acc.total * inv_g, coef.alpha_adv, coef.alpha_bn,
                     coef.alpha_oh};

  // -- student phase ---------------------------------------------------------
  double weight_sum = 0.0;
  double difficulty_sum = 0.0;
  double weighted_sum = 0.0;
  last_difficulties_.resize(
      static_cast<Eigen::Index>(cfg_.student_steps) * cfg_.batch_size);
  for (int s = 0; s < cfg_.student_steps; ++s) {
    const Mat z = rng_.normal_mat(gen_spec_.latent_dim, cfg_.batch_size);
    const Mat x = gen::synthesize(*generator_, gen_spec_, z);
    const Mat t_logits = teacher_->forward(x, nn::Mode::Eval);
    const Mat s_logits = student_->forward(x, nn::Mode::Train);
    const Vec losses =
        losses::per_sample_kd_loss(t_logits, s_logits, cfg_.temperature);
    const Vec weights = cfg_.curriculum
                            ? spl::sp_weights(cfg_.strategy, report.lambda_t, losses)
                            : Vec::Ones(losses.size());
    weighted_sum += student_step(*student_, student_opt_, t_logits, s_logits,
                                 weights, cfg_.temperature, epoch, s);
    weight_sum += weights.mean();
    difficulty_sum += losses.mean();
    last_difficulties_.segment(
        static_cast<Eigen::Index>(s) * cfg_.batch_size, cfg_.batch_size) = losses;
  }
  const double inv_s = 1.0 / static_cast<double>(cfg_.student_steps);
  report.mean_weight = weight_sum * inv_s;
  report.mean_difficulty = difficulty_sum * inv_s;
  report.weighted_kd_loss = weighted_sum * inv_s;

  // -- evaluation -------------------------------------------------------------
  const metrics::EvalBatch eb = evaluate(eval);
  report.acc1 = metrics::top1_accuracy(eb);
  report.agree1 = metrics::top1_agreement(eb);
  report.loyalty_mean = metrics::probability_loyalty(eb).mean;
  return report;
}

void Trainer::save_state(std::ostream& os) const {
  nn::write_tag(os, "trainer-v1");
  student_->save(os);
  generator_->save(os);
  student_opt_.save(os);
  gen_opt_.save(os);
  rng_.save(os);
}

void Trainer::load_state(std::istream& is) {
  nn::expect_tag(is, "trainer-v1");
  student_->load(is);
  generator_->load(is);
  student_opt_.load(is);
  gen_opt_.load(is);
  rng_.load(is);
}

std::vector<double> mm_diagnostic(nn::Network& student, const Mat& x,
                                  const Mat& teacher_logits,
                                  spl::Strategy strategy, double lambda,
                                  double temperature, int steps, double lr) {
  std::vector<double> trace;
  trace.reserve(steps);
  std::vector<nn::Param*> params = student.params();

  for (int k = 0; k < steps; ++k) {
    // v-step: exact minimization over the weights at the current losses.
    Mat s_logits = student.forward(x, nn::Mode::Train);
    Vec losses = losses::per_sample_kd_loss(teacher_logits, s_logits, temperature);
    const Vec weights = spl::sp_weights(strategy, lambda, losses);
    const double majorant_ref = weights.dot(losses);

    // w-step: gradient step on the majorant sum_i w_i l_i, backtracking until
    // it does not increase (a zero step is accepted in the worst case).
    std::vector<Mat> saved;
    saved.reserve(params.size());
    for (nn::Param* p : params) saved.push_back(p->value);

    const Mat grad = losses::kd_grad_student(teacher_logits, s_logits,
                                             temperature, weights, 1.0);
    student.zero_grad();
    student.backward(grad, true);

    double trial_lr = lr;
    bool accepted = false;
    for (int attempt = 0; attempt < 40 && !accepted; ++attempt) {
      for (std::size_t i = 0; i < params.size(); ++i)
        params[i]->value = saved[i] - trial_lr * params[i]->grad;
      s_logits = student.forward(x, nn::Mode::Train);
      losses = losses::per_sample_kd_loss(teacher_logits, s_logits, temperature);
      if (weights.dot(losses) <= majorant_ref) {
        accepted = true;
      } else {
        trial_lr *= 0.5;
      }
    }
    if (!accepted) {
      for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = saved[i];
      s_logits = student.forward(x, nn::Mode::Train);
      losses = losses::per_sample_kd_loss(teacher_logits, s_logits, temperature);
    }
    trace.push_back(spl::latent_objective(strategy, lambda, losses));
  }
  return trace;
}

}  // namespace dfkd::distill
