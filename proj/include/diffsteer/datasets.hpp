#pragma once

#include "diffsteer/common.hpp"

#include <cstdint>
#include <vector>

namespace diffsteer {

struct Ring {
  Eigen::RowVector2d center;
  double r_inner = 0.0;
  double r_outer = 0.0;
};

// Mixture of uniform annuli in 2D. "Uniform" means uniform over the annulus
// area, so the radial density is proportional to r on [r_inner, r_outer].
struct RingMixtureSpec {
  std::vector<Ring> rings;
  std::vector<double> weights;  // nonnegative, sum to 1

  void validate() const;
};

// Two rings of radii (0.6, 1.0) centered at (0,0) and (5,0), weights 0.7/0.3.
RingMixtureSpec default_ring_spec();

struct GaussianComponent {
  RowVec mean;
  double variance = 1.0;  // isotropic
};

struct GaussianMixtureSpec {
  std::vector<GaussianComponent> components;
  std::vector<double> weights;

  int dim() const;
  void validate() const;
};

struct LabeledDataset {
  Matrix points;            // n x d
  std::vector<int> labels;  // in [0, num_classes)
  int num_classes = 0;

  int size() const { return static_cast<int>(points.rows()); }
  int dim() const { return static_cast<int>(points.cols()); }
  void validate() const;
};

LabeledDataset sample_ring_mixture(const RingMixtureSpec& spec, int n,
                                   std::uint64_t seed);
LabeledDataset sample_gaussian_mixture(const GaussianMixtureSpec& spec, int n,
                                       std::uint64_t seed);

}  // namespace diffsteer
