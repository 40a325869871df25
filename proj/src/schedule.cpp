#include "diffsteer/schedule.hpp"

#include <cmath>

namespace diffsteer {

std::string to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::linear:
      return "linear";
  }
  return "linear";
}

ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "linear") return ScheduleKind::linear;
  throw ParamError("unknown schedule kind: " + s);
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  if (t < 0 || t > T) throw std::out_of_range("alpha_bar: step out of range");
  return alpha_bars[t - 1];
}

void NoiseSchedule::validate() const {
  require(T >= 1, "schedule: T must be >= 1");
  require(betas.size() == T && alpha_bars.size() == T, "schedule: array sizes != T");
  double prev = 1.0;
  for (int t = 1; t <= T; ++t) {
    const double b = betas[t - 1];
    const double a = alpha_bars[t - 1];
    require(b > 0.0 && b < 1.0, "schedule: beta out of (0,1)");
    require(a > 0.0 && a < 1.0 && a < prev, "schedule: alpha_bars not strictly decreasing in (0,1)");
    prev = a;
  }
}

NoiseSchedule make_schedule(int T, double beta_start, double beta_end, ScheduleKind kind) {
  require(T >= 1, "make_schedule: T must be >= 1");
  require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0,
          "make_schedule: need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.T = T;
  s.kind = kind;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.betas.resize(T);
  s.alpha_bars.resize(T);
  double prod = 1.0;
  for (int t = 0; t < T; ++t) {
    const double frac = (T == 1) ? 0.0 : static_cast<double>(t) / (T - 1);
    const double b = beta_start + (beta_end - beta_start) * frac;
    s.betas[t] = b;
    prod *= (1.0 - b);
    s.alpha_bars[t] = prod;
  }
  s.validate();
  return s;
}

NoiseSchedule default_schedule() { return make_schedule(1000, 1e-4, 0.02); }

StepCoeffs derived_coefficients(const NoiseSchedule& sched, int t) {
  if (t < 1 || t > sched.T) throw std::out_of_range("derived_coefficients: t out of range");
  const double a = sched.alpha_bar(t);
  const double a_prev = sched.alpha_bar(t - 1);
  StepCoeffs c;
  c.beta = 1.0 - a / a_prev;
  c.sigma = (1.0 - a_prev) / (1.0 - a) * c.beta;
  return c;
}

}  // namespace diffsteer
