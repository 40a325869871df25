#include "diffsteer/diffusion.hpp"

#include <cmath>
#include <string>

namespace diffsteer {

namespace {

void check_step(const NoiseSchedule& sched, int t) {
  if (t < 1 || t > sched.T) throw std::out_of_range("diffusion: step t out of range");
}

// Generalized ancestral update between arbitrary schedule positions; the
// adjacent case t_prev = t-1 is the plain chain.
Matrix ancestral_between(const Matrix& z_t, int t, int t_prev, const Matrix& eps_hat,
                         const NoiseSchedule& sched, const Matrix& eta, DdpmForm form) {
  const double a = sched.alpha_bar(t);
  const double a_prev = sched.alpha_bar(t_prev);
  const double beta = 1.0 - a / a_prev;
  const double sigma = (1.0 - a_prev) / (1.0 - a) * beta;
  const double prefactor =
      form == DdpmForm::standard ? 1.0 / std::sqrt(1.0 - beta) : 1.0 / (1.0 - beta);
  const double noise_scale = form == DdpmForm::standard ? std::sqrt(sigma) : sigma;
  Matrix out = prefactor * (z_t - (beta / std::sqrt(1.0 - a)) * eps_hat);
  if (noise_scale != 0.0) out += noise_scale * eta;
  return out;
}

}  // namespace

Matrix forward_sample(const Matrix& z0, int t, const Matrix& eta,
                      const NoiseSchedule& sched) {
  check_step(sched, t);
  require(z0.rows() == eta.rows() && z0.cols() == eta.cols(),
          "forward_sample: z0/eta shape mismatch");
  const double a = sched.alpha_bar(t);
  return std::sqrt(a) * z0 + std::sqrt(1.0 - a) * eta;
}

Matrix forward_sample(const Matrix& z0, int t, const NoiseSchedule& sched, Rng& rng) {
  return forward_sample(z0, t, rng.normal_matrix(z0.rows(), z0.cols()), sched);
}

Matrix ddpm_step(const Matrix& z_t, int t, const Matrix& eps_hat,
                 const NoiseSchedule& sched, const Matrix& eta, DdpmForm form) {
  check_step(sched, t);
  require(z_t.rows() == eps_hat.rows() && z_t.cols() == eps_hat.cols(),
          "ddpm_step: z/eps shape mismatch");
  require(z_t.rows() == eta.rows() && z_t.cols() == eta.cols(),
          "ddpm_step: z/eta shape mismatch");
  return ancestral_between(z_t, t, t - 1, eps_hat, sched, eta, form);
}

Matrix ddim_step(const Matrix& z_t, int t, int t_prev, const Matrix& eps_hat,
                 const NoiseSchedule& sched) {
  check_step(sched, t);
  require(t_prev >= 0 && t_prev < t, "ddim_step: need 0 <= t_prev < t");
  require(z_t.rows() == eps_hat.rows() && z_t.cols() == eps_hat.cols(),
          "ddim_step: z/eps shape mismatch");
  const double a = sched.alpha_bar(t);
  const double a_prev = sched.alpha_bar(t_prev);
  Matrix z0_hat = (z_t - std::sqrt(1.0 - a) * eps_hat) / std::sqrt(a);
  return std::sqrt(a_prev) * z0_hat + std::sqrt(1.0 - a_prev) * eps_hat;
}

std::vector<int> sample_timesteps(int T, int steps) {
  require(steps >= 1 && steps <= T, "sample: need 1 <= steps <= T");
  std::vector<int> ts;
  ts.reserve(steps);
  for (int k = 0; k < steps; ++k) {
    const int t = static_cast<int>(
        std::llround(static_cast<double>(T) * (steps - k) / steps));
    const int clamped = std::max(1, t);
    if (ts.empty() || clamped != ts.back()) ts.push_back(clamped);
  }
  return ts;
}

Matrix sample(const DenoiseFn& denoise_fn, const NoiseSchedule& sched, int n, int dim,
              const Condition* condition, SamplerKind sampler, int steps,
              std::uint64_t seed, DdpmForm form) {
  require(n >= 0, "sample: n must be >= 0");
  require(dim >= 1, "sample: dim must be >= 1");
  if (n == 0) return Matrix(0, dim);
  const std::vector<int> ts = sample_timesteps(sched.T, steps);
  Rng rng(seed);
  Matrix z = rng.normal_matrix(n, dim);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    const int t_prev = (i + 1 < ts.size()) ? ts[i + 1] : 0;
    Matrix eps = denoise_fn(z, t, condition);
    if (!eps.allFinite())
      throw NumericalError("sample: non-finite denoiser output at step t=" +
                           std::to_string(t));
    if (sampler == SamplerKind::ddim) {
      z = ddim_step(z, t, t_prev, eps, sched);
    } else {
      // noise is drawn unconditionally so the stream stays aligned across forms
      Matrix eta = rng.normal_matrix(n, dim);
      z = ancestral_between(z, t, t_prev, eps, sched, eta, form);
    }
  }
  return z;
}

}  // namespace diffsteer
