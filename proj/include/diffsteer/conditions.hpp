#pragma once

#include "diffsteer/common.hpp"

#include <cstdint>
#include <vector>

namespace diffsteer {

// Axis-aligned box on a pixel grid, bounds inclusive-exclusive, label >= 1.
struct LayoutBox {
  int label = 1;
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

// Tagged union over the supported condition encodings. Steering adapters
// consume the flattened vector; the structured payloads are kept so grids can
// be round-tripped and inspected.
class Condition {
 public:
  enum class Kind { label, layout, concat };

  static Condition make_label(int k, int K);
  static Condition make_layout(Eigen::MatrixXi labels_ch, Eigen::MatrixXi count_ch);
  static Condition make_concat(std::vector<Condition> parts);

  Kind kind() const { return kind_; }

  // label payload
  const Eigen::VectorXd& onehot() const;
  int label_index() const;

  // layout payload; channel 1 accumulates box labels, channel 2 counts covers
  const Eigen::MatrixXi& layout_labels() const;
  const Eigen::MatrixXi& layout_counts() const;

  const std::vector<Condition>& parts() const;

  Eigen::VectorXd flatten() const;
  int flat_dim() const;

  void validate() const;

 private:
  Condition() = default;
  Kind kind_ = Kind::label;
  Eigen::VectorXd onehot_;
  Eigen::MatrixXi ch_labels_, ch_counts_;  // H x W
  std::vector<Condition> parts_;
};

// One-hot over K classes, position k.
Condition encode_ring_label(int k, int K);

// Rasterizes boxes onto an H x W grid: channel 1 sums the labels of covering
// boxes per pixel, channel 2 counts them. Order-independent.
Condition encode_layout(const std::vector<LayoutBox>& boxes, int H, int W);

Condition concat_conditions(std::vector<Condition> parts);

// Uniform seeded draw from a nonempty list of alternatives.
const Condition& sample_condition_level(const std::vector<Condition>& levels,
                                        std::uint64_t seed);

}  // namespace diffsteer
