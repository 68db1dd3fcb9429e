#pragma once

#include <string>
#include <vector>

#include "dfkd/types.hpp"

namespace dfkd::spl {

// Closed-form self-paced weighting strategies. Each one defines a weight
// v*(lambda, L) in [0,1] that is non-increasing in the per-sample loss L:
//   Hard       v* = 1(L < lambda)
//   Soft       v* = 1(L < lambda) * (1 - L/lambda)
//   Logarithm  v* = (1 + e^{-lambda}) / (1 + e^{L - lambda})
enum class Strategy { Hard, Soft, Logarithm };

Strategy strategy_from_string(const std::string& name);   // "hard"|"soft"|"log"
std::string to_string(Strategy s);

// Pace threshold as a linear function of the epoch: lambda(t) = lambda0 + rate*t.
struct LambdaSchedule {
  double lambda0 = 2.0;   // > 0, in loss units
  double rate = 0.0;      // >= 0, loss units per epoch

  LambdaSchedule() = default;
  LambdaSchedule(double lambda0_, double rate_);
};

double lambda_at(const LambdaSchedule& schedule, double epoch);

// Per-sample curriculum weights for one batch of losses. Throws
// argument_error for lambda <= 0 and data_error for non-finite losses.
Vec sp_weights(Strategy strategy, double lambda, const Vec& losses);

// Single-sample weight; the vector form maps this over its input.
double sp_weight(Strategy strategy, double lambda, double loss);

// Latent objective F_lambda(L) = sum_i integral_0^{L_i} v*(lambda, l) dl,
// evaluated through the closed-form antiderivative of each strategy.
// Concave and non-decreasing in every component.
double latent_objective(Strategy strategy, double lambda, const Vec& losses);

// Antiderivative for a single loss value.
double latent_term(Strategy strategy, double lambda, double loss);

// Linear majorant of the latent objective anchored at losses_ref:
//   Q(L | L*) = F_lambda(L*) + v*(lambda, L*) . (L - L*)
// Touches the latent objective at the anchor and upper-bounds it everywhere.
double mm_majorant(Strategy strategy, double lambda, const Vec& losses_ref,
                   const Vec& losses_new);

}  // namespace dfkd::spl
