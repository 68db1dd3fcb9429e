#include "dfkd/generator.hpp"

#include <cmath>

#include "dfkd/errors.hpp"

namespace dfkd::gen {

nn::Network build_generator(const GeneratorSpec& spec) {
  if (spec.latent_dim < 1)
    throw argument_error("GeneratorSpec: latent_dim must be >= 1");
  const nn::Shape out = spec.output_shape;
  if (out.h % 4 != 0 || out.w % 4 != 0)
    throw argument_error("GeneratorSpec: output H and W must be divisible by 4");
  if (spec.architecture != "upconv3")
    throw argument_error("unknown generator architecture '" + spec.architecture + "'");

  Rng rng(spec.seed, /*stream=*/0xF00D);
  const int base_h = out.h / 4;
  const int base_w = out.w / 4;
  const int ch0 = 16;
  const int ch1 = 16;
  const int ch2 = 8;

  nn::Network net({spec.latent_dim, 1, 1});
  net.emplace<nn::Dense>(ch0 * base_h * base_w, rng);
  // Dense output is (features,1,1); normalize per feature, then reinterpret
  // as (ch0, base_h, base_w) via an explicit reshape layer-free convention:
  net.emplace<nn::BatchNorm>(/*track_running=*/false);
  net.emplace<nn::LeakyReLU>(0.2);
  net.emplace<nn::Reshape>(nn::Shape{ch0, base_h, base_w});
  net.emplace<nn::Upsample2>();
  net.emplace<nn::Conv2d>(ch1, 3, 1, 1, rng);
  net.emplace<nn::BatchNorm>(false);
  net.emplace<nn::LeakyReLU>(0.2);
  net.emplace<nn::Upsample2>();
  net.emplace<nn::Conv2d>(ch2, 3, 1, 1, rng);
  net.emplace<nn::BatchNorm>(false);
  net.emplace<nn::LeakyReLU>(0.2);
  net.emplace<nn::Conv2d>(out.c, 3, 1, 1, rng);
  net.emplace<nn::Sigmoid>();
  return net;
}

Mat synthesize(nn::Network& generator, const GeneratorSpec& spec, const Mat& z) {
  if (z.rows() != spec.latent_dim)
    throw argument_error("synthesize: z has " + std::to_string(z.rows()) +
                         " rows, expected latent_dim=" +
                         std::to_string(spec.latent_dim));
  // Train-mode normalization (batch statistics); generator BN layers track no
  // running buffers, so this mutates nothing.
  return generator.forward(z, nn::Mode::Train);
}

losses::BNStatSet teacher_running_stats(nn::Network& teacher) {
  losses::BNStatSet set;
  set.source = losses::BNStatSet::Source::TeacherRunning;
  for (nn::BatchNorm* bn : teacher.batch_norms())
    set.layers.push_back({bn->running_mean(), bn->running_var()});
  return set;
}

losses::BNStatSet teacher_observed_stats(nn::Network& teacher) {
  losses::BNStatSet set;
  set.source = losses::BNStatSet::Source::BatchObserved;
  for (nn::BatchNorm* bn : teacher.batch_norms())
    set.layers.push_back({bn->batch_mean(), bn->batch_var()});
  return set;
}

GenLossBreakdown generator_step(nn::Network& generator, nn::Adam& opt,
                                nn::Network& teacher, nn::Network& student,
                                const Mat& z, const GenCoefficients& coef,
                                int epoch, long step) {
  GenLossBreakdown out;
  out.alpha_adv = coef.alpha_adv;
  out.alpha_bn = coef.alpha_bn;
  out.alpha_oh = coef.alpha_oh;

  generator.zero_grad();
  const Mat x = generator.forward(z, nn::Mode::Train);

  teacher.set_bn_capture(true);
  const Mat t_logits = teacher.forward(x, nn::Mode::Eval);

  Mat d_t_logits = Mat::Zero(t_logits.rows(), t_logits.cols());
  Mat d_x_student;

  const bool use_adv = coef.alpha_adv != 0.0;
  if (use_adv) {
    const Mat s_logits = student.forward(x, nn::Mode::Eval);
    const auto div = losses::adversarial_divergence(t_logits, s_logits,
                                                    coef.divergence,
                                                    coef.temperature);
    out.adv = div.value;
    d_t_logits -= coef.alpha_adv * div.d_teacher;
    d_x_student =
        student.backward(Mat(-coef.alpha_adv * div.d_student), false);
  }

  const auto oh = losses::one_hot_loss(t_logits);
  out.oh = oh.value;
  d_t_logits += coef.alpha_oh * oh.d_logits;

  const auto bn = losses::bn_alignment_loss(teacher_running_stats(teacher),
                                            teacher_observed_stats(teacher));
  out.bn = bn.value;
  auto bns = teacher.batch_norms();
  for (std::size_t l = 0; l < bns.size(); ++l)
    bns[l]->set_stat_grads(coef.alpha_bn * bn.d_mean[l],
                           coef.alpha_bn * bn.d_var[l]);

  out.total = -coef.alpha_adv * out.adv + coef.alpha_bn * out.bn +
              coef.alpha_oh * out.oh;
  if (!std::isfinite(out.total))
    throw training_diverged("generator loss is non-finite", epoch, step);

  Mat d_x = teacher.backward(d_t_logits, false);
  teacher.set_bn_capture(false);
  if (use_adv) d_x += d_x_student;

  generator.backward(d_x, true);
  opt.step();
  return out;
}

}  // namespace dfkd::gen
