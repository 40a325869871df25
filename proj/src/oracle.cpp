#include "diffsteer/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace diffsteer {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

struct DiffusedComponent {
  RowVec mean;
  double var = 1.0;
};

DiffusedComponent diffuse(const GaussianComponent& c, double ab) {
  return {std::sqrt(ab) * c.mean, ab * c.variance + (1.0 - ab)};
}

double log_normal(const RowVec& z, const DiffusedComponent& dc) {
  const double d = static_cast<double>(z.size());
  const double q = (z - dc.mean).squaredNorm() / dc.var;
  return -0.5 * (d * std::log(kTwoPi * dc.var) + q);
}

double logsumexp(const std::vector<double>& xs) {
  const double mx = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - mx);
  return mx + std::log(s);
}

void check_query(const DiffusedMixture& m, const RowVec& z, int t) {
  require(z.size() == m.dim(), "point dimension does not match mixture");
  require(t >= 1 && t <= m.sched.T, "timestep out of schedule range");
}

// log w_k + log N_k for every component
std::vector<double> component_logs(const DiffusedMixture& m, const RowVec& z,
                                   double ab) {
  std::vector<double> lg(m.base.components.size());
  for (std::size_t k = 0; k < lg.size(); ++k)
    lg[k] = std::log(m.base.weights[k]) +
            log_normal(z, diffuse(m.base.components[k], ab));
  return lg;
}

}  // namespace

void DiffusedMixture::validate() const {
  base.validate();
  sched.validate();
}

double gm_log_density(const DiffusedMixture& m, const RowVec& z, int t) {
  check_query(m, z, t);
  const double lse = logsumexp(component_logs(m, z, m.sched.alpha_bar(t)));
  // guard against exact zeros when a caller exponentiates far from all modes
  return std::max(lse, std::log(1e-300));
}

double gm_conditional_log_density(const DiffusedMixture& m, const RowVec& z,
                                  int t, int c) {
  check_query(m, z, t);
  require(c >= 0 && c < static_cast<int>(m.base.components.size()),
          "component index out of range");
  const double lg = log_normal(
      z, diffuse(m.base.components[static_cast<std::size_t>(c)], m.sched.alpha_bar(t)));
  return std::max(lg, std::log(1e-300));
}

std::vector<double> gm_responsibilities(const DiffusedMixture& m, const RowVec& z,
                                        int t) {
  check_query(m, z, t);
  const std::vector<double> lg = component_logs(m, z, m.sched.alpha_bar(t));
  const double lse = logsumexp(lg);
  std::vector<double> r(lg.size());
  for (std::size_t k = 0; k < lg.size(); ++k) r[k] = std::exp(lg[k] - lse);
  return r;
}

RowVec gm_score(const DiffusedMixture& m, const RowVec& z, int t) {
  check_query(m, z, t);
  const double ab = m.sched.alpha_bar(t);
  const std::vector<double> r = gm_responsibilities(m, z, t);
  RowVec score = RowVec::Zero(z.size());
  for (std::size_t k = 0; k < r.size(); ++k) {
    const DiffusedComponent dc = diffuse(m.base.components[k], ab);
    score += r[k] * (-(z - dc.mean) / dc.var);
  }
  return score;
}

RowVec gm_conditional_score(const DiffusedMixture& m, const RowVec& z, int t, int c) {
  check_query(m, z, t);
  require(c >= 0 && c < static_cast<int>(m.base.components.size()),
          "component index out of range");
  const DiffusedComponent dc =
      diffuse(m.base.components[static_cast<std::size_t>(c)], m.sched.alpha_bar(t));
  return -(z - dc.mean) / dc.var;
}

RowVec steering_residual(const DiffusedMixture& m, const RowVec& z, int t, int c) {
  check_query(m, z, t);
  require(c >= 0 && c < static_cast<int>(m.base.components.size()),
          "component index out of range");
  const double ab = m.sched.alpha_bar(t);
  // grad log p(c|z) = component score minus responsibility-weighted mean score
  const std::vector<double> r = gm_responsibilities(m, z, t);
  RowVec mean_score = RowVec::Zero(z.size());
  for (std::size_t k = 0; k < r.size(); ++k) {
    const DiffusedComponent dc = diffuse(m.base.components[k], ab);
    mean_score += r[k] * (-(z - dc.mean) / dc.var);
  }
  const DiffusedComponent dcc =
      diffuse(m.base.components[static_cast<std::size_t>(c)], ab);
  const RowVec comp_score = -(z - dcc.mean) / dcc.var;
  return -std::sqrt(1.0 - ab) * (comp_score - mean_score);
}

double check_bayes_identity(const DiffusedMixture& m,
                            const std::vector<RowVec>& points,
                            const std::vector<int>& ts) {
  m.validate();
  require(!points.empty(), "empty point grid");
  require(!ts.empty(), "empty timestep list");
  const int K = static_cast<int>(m.base.components.size());
  double worst = 0.0;
  for (int t : ts) {
    const double root = std::sqrt(1.0 - m.sched.alpha_bar(t));
    for (const RowVec& z : points) {
      const RowVec eps_prior = -root * gm_score(m, z, t);
      for (int c = 0; c < K; ++c) {
        const RowVec eps_cond = -root * gm_conditional_score(m, z, t, c);
        const RowVec via_residual = steering_residual(m, z, t, c) + eps_prior;
        worst = std::max(worst, (eps_cond - via_residual).cwiseAbs().maxCoeff());
      }
    }
  }
  return worst;
}

std::vector<RowVec> square_grid(double lo, double hi, int side) {
  require(side >= 1, "grid side must be >= 1");
  require(hi >= lo, "grid bounds reversed");
  std::vector<RowVec> pts;
  pts.reserve(static_cast<std::size_t>(side) * static_cast<std::size_t>(side));
  const double step = side > 1 ? (hi - lo) / (side - 1) : 0.0;
  for (int i = 0; i < side; ++i) {
    for (int j = 0; j < side; ++j) {
      RowVec p(2);
      p << lo + step * i, lo + step * j;
      pts.push_back(p);
    }
  }
  return pts;
}

}  // namespace diffsteer
