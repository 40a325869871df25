#pragma once

#include "diffsteer/common.hpp"
#include "diffsteer/datasets.hpp"
#include "diffsteer/schedule.hpp"

#include <vector>

namespace diffsteer {

// Gaussian mixture pushed through the forward process. Every quantity here
// is closed-form: component k at step t is N(sqrt(ab_t) mu_k, (ab_t sig2_k +
// 1 - ab_t) I). These are the independent references the learned pieces are
// checked against.
struct DiffusedMixture {
  GaussianMixtureSpec base;
  NoiseSchedule sched;

  void validate() const;
  int dim() const { return base.dim(); }
};

// log p(z_t); log-sum-exp over components, floored at 1e-300 density.
double gm_log_density(const DiffusedMixture& m, const RowVec& z, int t);
// log p(z_t | c)
double gm_conditional_log_density(const DiffusedMixture& m, const RowVec& z,
                                  int t, int c);
// p(c | z_t) for every component; log-space, sums to 1.
std::vector<double> gm_responsibilities(const DiffusedMixture& m, const RowVec& z,
                                        int t);

// grad_z log p(z_t): responsibility-weighted component scores.
RowVec gm_score(const DiffusedMixture& m, const RowVec& z, int t);
// grad_z log p(z_t | c): single diffused component score.
RowVec gm_conditional_score(const DiffusedMixture& m, const RowVec& z, int t, int c);

// -sqrt(1 - ab_t) * grad_z log p(c | z_t): the additive correction that turns
// the marginal denoiser into the component-conditional one.
RowVec steering_residual(const DiffusedMixture& m, const RowVec& z, int t, int c);

// Max absolute deviation of the two routes to the conditional denoiser
// (direct conditional score vs marginal score + residual) over every
// (point, t, component) combination.
double check_bayes_identity(const DiffusedMixture& m,
                            const std::vector<RowVec>& points,
                            const std::vector<int>& ts);

// Convenience: axis-aligned grid of side x side points spanning [lo, hi]^2.
std::vector<RowVec> square_grid(double lo, double hi, int side);

}  // namespace diffsteer
