#include "diffsteer/datasets.hpp"

#include "diffsteer/rng.hpp"

#include <cmath>
#include <numeric>

namespace diffsteer {

namespace {

void check_weights(const std::vector<double>& w, std::size_t n_parts) {
  require(w.size() == n_parts, "mixture: weights/components size mismatch");
  double sum = 0.0;
  for (double x : w) {
    require(x >= 0.0, "mixture: negative weight");
    sum += x;
  }
  require(std::abs(sum - 1.0) <= 1e-12, "mixture: weights must sum to 1");
}

int pick_component(const std::vector<double>& w, double u) {
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < w.size(); ++k) {
    acc += w[k];
    if (u < acc) return static_cast<int>(k);
  }
  return static_cast<int>(w.size()) - 1;
}

}  // namespace

void RingMixtureSpec::validate() const {
  require(!rings.empty(), "ring spec: no rings");
  for (const Ring& r : rings)
    require(r.r_inner > 0.0 && r.r_inner < r.r_outer,
            "ring spec: need 0 < r_inner < r_outer");
  check_weights(weights, rings.size());
}

RingMixtureSpec default_ring_spec() {
  RingMixtureSpec s;
  s.rings = {{{0.0, 0.0}, 0.6, 1.0}, {{5.0, 0.0}, 0.6, 1.0}};
  s.weights = {0.7, 0.3};
  return s;
}

int GaussianMixtureSpec::dim() const {
  return components.empty() ? 0 : static_cast<int>(components.front().mean.size());
}

void GaussianMixtureSpec::validate() const {
  require(!components.empty(), "gaussian spec: no components");
  const auto d = components.front().mean.size();
  for (const GaussianComponent& c : components) {
    require(c.mean.size() == d, "gaussian spec: mixed dimensions");
    require(c.variance > 0.0, "gaussian spec: variance must be positive");
  }
  check_weights(weights, components.size());
}

void LabeledDataset::validate() const {
  require(static_cast<int>(labels.size()) == size(),
          "dataset: points/labels length mismatch");
  for (int l : labels)
    require(l >= 0 && l < num_classes, "dataset: label out of range");
}

LabeledDataset sample_ring_mixture(const RingMixtureSpec& spec, int n,
                                   std::uint64_t seed) {
  spec.validate();
  require(n >= 0, "sample_ring_mixture: n must be >= 0");
  Rng rng(seed);
  LabeledDataset ds;
  ds.points.resize(n, 2);
  ds.labels.resize(n);
  ds.num_classes = static_cast<int>(spec.rings.size());
  for (int i = 0; i < n; ++i) {
    const int k = pick_component(spec.weights, rng.uniform());
    const Ring& r = spec.rings[k];
    // radius by inverse CDF of the area-uniform density f(r) ~ r
    const double u = rng.uniform();
    const double rad = std::sqrt(r.r_inner * r.r_inner +
                                 u * (r.r_outer * r.r_outer - r.r_inner * r.r_inner));
    const double theta = rng.uniform(0.0, 2.0 * M_PI);
    ds.points(i, 0) = r.center[0] + rad * std::cos(theta);
    ds.points(i, 1) = r.center[1] + rad * std::sin(theta);
    ds.labels[i] = k;
  }
  return ds;
}

LabeledDataset sample_gaussian_mixture(const GaussianMixtureSpec& spec, int n,
                                       std::uint64_t seed) {
  spec.validate();
  require(n >= 0, "sample_gaussian_mixture: n must be >= 0");
  Rng rng(seed);
  const int d = spec.dim();
  LabeledDataset ds;
  ds.points.resize(n, d);
  ds.labels.resize(n);
  ds.num_classes = static_cast<int>(spec.components.size());
  for (int i = 0; i < n; ++i) {
    const int k = pick_component(spec.weights, rng.uniform());
    const GaussianComponent& c = spec.components[k];
    const double sd = std::sqrt(c.variance);
    for (int j = 0; j < d; ++j) ds.points(i, j) = c.mean[j] + sd * rng.normal();
    ds.labels[i] = k;
  }
  return ds;
}

}  // namespace diffsteer
