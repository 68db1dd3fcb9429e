#include "dfkd/spl.hpp"

#include <cmath>

#include "dfkd/errors.hpp"

namespace dfkd::spl {
namespace {

// log(1 + e^x) without overflow.
double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

void check_args(double lambda, const Vec& losses) {
  if (!(lambda > 0.0)) throw argument_error("spl: lambda must be > 0");
  for (Eigen::Index i = 0; i < losses.size(); ++i) {
    if (!std::isfinite(losses[i]))
      throw data_error("spl: non-finite loss at index " + std::to_string(i));
    if (losses[i] < 0.0)
      throw data_error("spl: negative loss at index " + std::to_string(i));
  }
}

}  // namespace

Strategy strategy_from_string(const std::string& name) {
  if (name == "hard") return Strategy::Hard;
  if (name == "soft") return Strategy::Soft;
  if (name == "log") return Strategy::Logarithm;
  throw argument_error("unknown SP strategy '" + name +
                       "' (expected hard|soft|log)");
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::Hard: return "hard";
    case Strategy::Soft: return "soft";
    case Strategy::Logarithm: return "log";
  }
  throw argument_error("invalid Strategy value");
}

LambdaSchedule::LambdaSchedule(double lambda0_, double rate_)
    : lambda0(lambda0_), rate(rate_) {
  if (!(lambda0 > 0.0)) throw argument_error("LambdaSchedule: lambda0 must be > 0");
  if (rate < 0.0) throw argument_error("LambdaSchedule: rate must be >= 0");
}

double lambda_at(const LambdaSchedule& schedule, double epoch) {
  if (epoch < 0.0) throw argument_error("lambda_at: epoch must be >= 0");
  return schedule.lambda0 + schedule.rate * epoch;
}

double sp_weight(Strategy strategy, double lambda, double loss) {
  switch (strategy) {
    case Strategy::Hard:
      return loss < lambda ? 1.0 : 0.0;
    case Strategy::Soft:
      return loss < lambda ? 1.0 - loss / lambda : 0.0;
    case Strategy::Logarithm:
      // exp(L - lambda) overflows to +inf for huge L and the ratio cleanly
      // underflows to 0, so the direct form is safe over the whole range.
      return (1.0 + std::exp(-lambda)) / (1.0 + std::exp(loss - lambda));
  }
  throw argument_error("invalid Strategy value");
}

Vec sp_weights(Strategy strategy, double lambda, const Vec& losses) {
  check_args(lambda, losses);
  Vec w(losses.size());
  for (Eigen::Index i = 0; i < losses.size(); ++i)
    w[i] = sp_weight(strategy, lambda, losses[i]);
  return w;
}

double latent_term(Strategy strategy, double lambda, double loss) {
  switch (strategy) {
    case Strategy::Hard:
      return std::min(loss, lambda);
    case Strategy::Soft:
      if (loss < lambda) return loss - loss * loss / (2.0 * lambda);
      return lambda / 2.0;
    case Strategy::Logarithm: {
      // integral_0^L (1+e^{-lambda})/(1+e^{l-lambda}) dl
      //   = (1+e^{-lambda}) [L - log(1+e^{L-lambda}) + log(1+e^{-lambda})],
      // with both logs evaluated as softplus to stay stable for L >> lambda.
      const double sp0 = softplus(-lambda);
      return (1.0 + std::exp(-lambda)) * (loss - softplus(loss - lambda) + sp0);
    }
  }
  throw argument_error("invalid Strategy value");
}

double latent_objective(Strategy strategy, double lambda, const Vec& losses) {
  check_args(lambda, losses);
  double total = 0.0;
  for (Eigen::Index i = 0; i < losses.size(); ++i)
    total += latent_term(strategy, lambda, losses[i]);
  return total;
}

double mm_majorant(Strategy strategy, double lambda, const Vec& losses_ref,
                   const Vec& losses_new) {
  if (losses_ref.size() != losses_new.size())
    throw argument_error("mm_majorant: loss vectors differ in length");
  check_args(lambda, losses_ref);
  check_args(lambda, losses_new);
  double q = 0.0;
  for (Eigen::Index i = 0; i < losses_ref.size(); ++i) {
    q += latent_term(strategy, lambda, losses_ref[i]) +
         sp_weight(strategy, lambda, losses_ref[i]) *
             (losses_new[i] - losses_ref[i]);
  }
  return q;
}

}  // namespace dfkd::spl
