#pragma once

#include <string>
#include <vector>

namespace dfkd::sched {

// Piecewise adversarial coefficient over epochs t in [0, N]:
//   0              for t <= k_begin * N      (warm-up)
//   alpha * t      for k_begin*N < t <= k_end*N
//   lambda_final   for t > k_end * N         (plateau)
// The ramp is alpha*t as printed, not alpha*(t - k_begin*N); the literal form
// jumps at the warm-up boundary and validate() reports the jump size.
struct AdvSchedule {
  double alpha = 0.0;          // ramp slope per epoch, >= 0
  double k_begin = 0.2;        // in (0, 1)
  double k_end = 0.75;         // in (k_begin, 1)
  int total_epochs = 1;        // N >= 1
  double lambda_final = 0.0;   // plateau value, >= 0

  AdvSchedule() = default;
  AdvSchedule(double alpha_, double k_begin_, double k_end_, int total_epochs_,
              double lambda_final_);
};

double alpha_adv_at(const AdvSchedule& schedule, double t);

struct ScheduleWarning {
  enum class Kind { PlateauDecrease, WarmupJump };
  Kind kind;
  double magnitude;     // size of the offending step
  std::string message;
};

// Non-mutating sanity checks: flags a plateau below the ramp endpoint
// (lambda_final < alpha*k_end*N breaks monotonicity) and a warm-up jump
// larger than one ramp increment.
std::vector<ScheduleWarning> validate_schedule(const AdvSchedule& schedule);

}  // namespace dfkd::sched
