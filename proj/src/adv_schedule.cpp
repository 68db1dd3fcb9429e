#include "dfkd/adv_schedule.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dfkd/errors.hpp"

namespace dfkd::sched {
namespace {

// Tolerance for t vs k*N comparisons so that rationals like 1/3 stored as
// doubles land on the mathematically intended side at integer epochs.
double boundary_eps(double kn) { return 1e-9 * std::max(1.0, std::abs(kn)); }

}  // namespace

AdvSchedule::AdvSchedule(double alpha_, double k_begin_, double k_end_,
                         int total_epochs_, double lambda_final_)
    : alpha(alpha_),
      k_begin(k_begin_),
      k_end(k_end_),
      total_epochs(total_epochs_),
      lambda_final(lambda_final_) {
  if (alpha < 0.0) throw argument_error("AdvSchedule: alpha must be >= 0");
  if (!(k_begin > 0.0 && k_begin < 1.0))
    throw argument_error("AdvSchedule: k_begin must lie in (0,1)");
  if (!(k_end > k_begin && k_end < 1.0))
    throw argument_error("AdvSchedule: need k_begin < k_end < 1");
  if (total_epochs < 1) throw argument_error("AdvSchedule: total_epochs must be >= 1");
  if (lambda_final < 0.0)
    throw argument_error("AdvSchedule: lambda_final must be >= 0");
}

double alpha_adv_at(const AdvSchedule& s, double t) {
  const double n = static_cast<double>(s.total_epochs);
  if (t < 0.0 || t > n)
    throw argument_error("alpha_adv_at: t outside [0, N]");
  const double begin = s.k_begin * n;
  const double end = s.k_end * n;
  if (t <= begin + boundary_eps(begin)) return 0.0;
  if (t <= end + boundary_eps(end)) return s.alpha * t;
  return s.lambda_final;
}

std::vector<ScheduleWarning> validate_schedule(const AdvSchedule& s) {
  std::vector<ScheduleWarning> warnings;
  const double n = static_cast<double>(s.total_epochs);
  const double ramp_top = s.alpha * s.k_end * n;

  if (s.lambda_final < ramp_top - 1e-12) {
    std::ostringstream msg;
    msg << "plateau decreases: lambda_final=" << s.lambda_final
        << " < alpha*k_end*N=" << ramp_top;
    warnings.push_back(
        {ScheduleWarning::Kind::PlateauDecrease, ramp_top - s.lambda_final, msg.str()});
  }

  if (s.alpha > 0.0) {
    // First epoch on the ramp branch; the coefficient jumps from 0 to alpha*t there.
    const double begin = s.k_begin * n;
    const double t_first = std::floor(begin + boundary_eps(begin)) + 1.0;
    if (t_first <= s.k_end * n + boundary_eps(s.k_end * n)) {
      const double jump = s.alpha * t_first;
      if (jump > s.alpha) {
        std::ostringstream msg;
        msg << "warm-up exit jumps by " << jump << " at t=" << t_first
            << " (one ramp increment is " << s.alpha << ")";
        warnings.push_back({ScheduleWarning::Kind::WarmupJump, jump, msg.str()});
      }
    }
  }
  return warnings;
}

}  // namespace dfkd::sched
