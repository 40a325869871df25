#pragma once

#include "diffsteer/common.hpp"
#include "diffsteer/rng.hpp"
#include "diffsteer/schedule.hpp"

#include <functional>

namespace diffsteer {

class Condition;  // conditions.hpp

// z_t = sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eta
Matrix forward_sample(const Matrix& z0, int t, const Matrix& eta,
                      const NoiseSchedule& sched);
// eta drawn internally from the supplied stream
Matrix forward_sample(const Matrix& z0, int t, const NoiseSchedule& sched, Rng& rng);

// Ancestral update form. `standard` uses a 1/sqrt(1-beta_t) prefactor and
// sqrt(sigma_t) noise scale; `alternate` uses 1/(1-beta_t) and sigma_t raw,
// kept selectable for side-by-side comparison.
enum class DdpmForm { standard, alternate };

// One ancestral step t -> t-1. The eta term vanishes at t=1 (sigma_1 = 0).
Matrix ddpm_step(const Matrix& z_t, int t, const Matrix& eps_hat,
                 const NoiseSchedule& sched, const Matrix& eta,
                 DdpmForm form = DdpmForm::standard);

// Deterministic update t -> t_prev (t_prev < t, t_prev = 0 lands on z0hat):
//   z0hat = (z_t - sqrt(1-a_t) eps) / sqrt(a_t)
//   z_prev = sqrt(a_prev) z0hat + sqrt(1-a_prev) eps
Matrix ddim_step(const Matrix& z_t, int t, int t_prev, const Matrix& eps_hat,
                 const NoiseSchedule& sched);

enum class SamplerKind { ddpm, ddim };

// eps = f(z, t, condition); condition may be null for unconditional models.
using DenoiseFn = std::function<Matrix(const Matrix&, int, const Condition*)>;

// Descending step sequence T = t_1 > ... > t_steps >= 1 with uniform stride.
std::vector<int> sample_timesteps(int T, int steps);

// Generates n points in R^dim from pure noise. Pure function of
// (inputs, seed): identical calls produce bit-identical output. Throws
// NumericalError naming the step if the denoiser returns non-finite values.
Matrix sample(const DenoiseFn& denoise_fn, const NoiseSchedule& sched, int n,
              int dim, const Condition* condition, SamplerKind sampler, int steps,
              std::uint64_t seed, DdpmForm form = DdpmForm::standard);

}  // namespace diffsteer
