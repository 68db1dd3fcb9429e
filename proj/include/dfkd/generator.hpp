#pragma once

#include <cstdint>
#include <string>

#include "dfkd/losses.hpp"
#include "dfkd/nn.hpp"

namespace dfkd::gen {

// Declarative description of the latent-to-image generator. The network is
// rebuilt identically from (architecture, seed), so a spec plus a parameter
// blob fully determines synthesis.
struct GeneratorSpec {
  int latent_dim = 64;
  nn::Shape output_shape{1, 28, 28};
  std::string architecture = "upconv3";
  std::uint64_t seed = 0;
};

// upconv3: dense to (base_ch x H/4 x W/4), BN, LeakyReLU, then two
// nearest-upsample + 3x3 conv + BN + LeakyReLU stages and a sigmoid output
// conv. Generator BN layers always normalize by batch statistics and keep no
// running buffers, so synthesis is a pure function of (parameters, z).
nn::Network build_generator(const GeneratorSpec& spec);

// Forward pass; z is (latent_dim, batch). Deterministic for fixed parameters.
Mat synthesize(nn::Network& generator, const GeneratorSpec& spec, const Mat& z);

struct GenCoefficients {
  double alpha_adv = 0.0;
  double alpha_bn = 1.0;
  double alpha_oh = 1.0;
  losses::Divergence divergence = losses::Divergence::JS;
  double temperature = 1.0;  // softening inside the adversarial divergence
};

struct GenLossBreakdown {
  double adv = 0.0;    // divergence value D(f_t(x), f_s(x))
  double bn = 0.0;     // statistics alignment
  double oh = 0.0;     // one-hot confidence
  double total = 0.0;  // -alpha_adv*adv + alpha_bn*bn + alpha_oh*oh
  double alpha_adv = 0.0;
  double alpha_bn = 0.0;
  double alpha_oh = 0.0;
};

// Reads the teacher's running statistics / the captured batch statistics of
// its BN layers into BNStatSet form.
losses::BNStatSet teacher_running_stats(nn::Network& teacher);
losses::BNStatSet teacher_observed_stats(nn::Network& teacher);

// One optimizer step on the generator against frozen teacher and student:
//   L = -alpha_adv * D(f_t(x), f_s(x)) + alpha_bn * L_bn + alpha_oh * L_oh
// The student pass is skipped entirely when alpha_adv == 0 (warm-up), making
// the objective bit-exactly independent of the student. Throws
// training_diverged (tagged with epoch/step) if the loss goes non-finite.
GenLossBreakdown generator_step(nn::Network& generator, nn::Adam& opt,
                                nn::Network& teacher, nn::Network& student,
                                const Mat& z, const GenCoefficients& coef,
                                int epoch, long step);

}  // namespace dfkd::gen
