#pragma once

#include "diffsteer/common.hpp"

#include <string>

namespace diffsteer {

enum class ScheduleKind { linear };

std::string to_string(ScheduleKind k);
ScheduleKind schedule_kind_from_string(const std::string& s);

// Forward-process coefficient family. alpha_bars is the running product of
// (1 - beta); strictly decreasing, each value in (0,1). Coefficient arrays are
// recomputed from (T, kind, beta_start, beta_end) on load, never stored.
struct NoiseSchedule {
  int T = 0;
  Eigen::VectorXd betas;       // betas[t-1] for step t in 1..T
  Eigen::VectorXd alpha_bars;  // alpha_bars[t-1]

  // construction record, kept for serialization
  ScheduleKind kind = ScheduleKind::linear;
  double beta_start = 0.0;
  double beta_end = 0.0;

  // alpha_bar with the chain-boundary convention alpha_bar(0) = 1.
  double alpha_bar(int t) const;
  void validate() const;
};

NoiseSchedule make_schedule(int T, double beta_start, double beta_end,
                            ScheduleKind kind = ScheduleKind::linear);

// Standard toy defaults: linear 1e-4 -> 0.02 over 1000 steps.
NoiseSchedule default_schedule();

// Per-step reverse-process coefficients:
//   beta_t  = 1 - alpha_bar(t) / alpha_bar(t-1)
//   sigma_t = (1 - alpha_bar(t-1)) / (1 - alpha_bar(t)) * beta_t
// sigma_t is the raw posterior-variance coefficient; sigma_1 == 0 exactly.
struct StepCoeffs {
  double beta = 0.0;
  double sigma = 0.0;
};

StepCoeffs derived_coefficients(const NoiseSchedule& sched, int t);

}  // namespace diffsteer
