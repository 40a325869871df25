#include "diffsteer/conditions.hpp"

#include "diffsteer/rng.hpp"

namespace diffsteer {

Condition Condition::make_label(int k, int K) {
  require(K >= 1, "label condition: K must be >= 1");
  require(k >= 0 && k < K, "label condition: index out of range");
  Condition c;
  c.kind_ = Kind::label;
  c.onehot_ = Eigen::VectorXd::Zero(K);
  c.onehot_[k] = 1.0;
  return c;
}

Condition Condition::make_layout(Eigen::MatrixXi labels_ch, Eigen::MatrixXi count_ch) {
  require(labels_ch.rows() == count_ch.rows() && labels_ch.cols() == count_ch.cols(),
          "layout condition: channel shape mismatch");
  Condition c;
  c.kind_ = Kind::layout;
  c.ch_labels_ = std::move(labels_ch);
  c.ch_counts_ = std::move(count_ch);
  c.validate();
  return c;
}

Condition Condition::make_concat(std::vector<Condition> parts) {
  require(!parts.empty(), "concat condition: empty part list");
  Condition c;
  c.kind_ = Kind::concat;
  c.parts_ = std::move(parts);
  return c;
}

const Eigen::VectorXd& Condition::onehot() const {
  require(kind_ == Kind::label, "condition: not a label");
  return onehot_;
}

int Condition::label_index() const {
  const Eigen::VectorXd& v = onehot();
  Eigen::Index arg = 0;
  v.maxCoeff(&arg);
  return static_cast<int>(arg);
}

const Eigen::MatrixXi& Condition::layout_labels() const {
  require(kind_ == Kind::layout, "condition: not a layout");
  return ch_labels_;
}

const Eigen::MatrixXi& Condition::layout_counts() const {
  require(kind_ == Kind::layout, "condition: not a layout");
  return ch_counts_;
}

const std::vector<Condition>& Condition::parts() const {
  require(kind_ == Kind::concat, "condition: not a concat");
  return parts_;
}

Eigen::VectorXd Condition::flatten() const {
  switch (kind_) {
    case Kind::label:
      return onehot_;
    case Kind::layout: {
      // row-major pixel order, label channel then count channel per pixel
      const auto H = ch_labels_.rows();
      const auto W = ch_labels_.cols();
      Eigen::VectorXd out(2 * H * W);
      Eigen::Index p = 0;
      for (Eigen::Index y = 0; y < H; ++y)
        for (Eigen::Index x = 0; x < W; ++x) {
          out[p++] = static_cast<double>(ch_labels_(y, x));
          out[p++] = static_cast<double>(ch_counts_(y, x));
        }
      return out;
    }
    case Kind::concat: {
      Eigen::VectorXd out(flat_dim());
      Eigen::Index at = 0;
      for (const Condition& part : parts_) {
        Eigen::VectorXd f = part.flatten();
        out.segment(at, f.size()) = f;
        at += f.size();
      }
      return out;
    }
  }
  throw ParamError("condition: unknown kind");
}

int Condition::flat_dim() const {
  switch (kind_) {
    case Kind::label:
      return static_cast<int>(onehot_.size());
    case Kind::layout:
      return static_cast<int>(2 * ch_labels_.size());
    case Kind::concat: {
      int n = 0;
      for (const Condition& part : parts_) n += part.flat_dim();
      return n;
    }
  }
  return 0;
}

void Condition::validate() const {
  switch (kind_) {
    case Kind::label: {
      int ones = 0;
      for (Eigen::Index i = 0; i < onehot_.size(); ++i) {
        require(onehot_[i] == 0.0 || onehot_[i] == 1.0, "label condition: not one-hot");
        if (onehot_[i] == 1.0) ++ones;
      }
      require(ones == 1, "label condition: exactly one entry must be 1");
      return;
    }
    case Kind::layout: {
      for (Eigen::Index y = 0; y < ch_labels_.rows(); ++y)
        for (Eigen::Index x = 0; x < ch_labels_.cols(); ++x) {
          require(ch_labels_(y, x) >= 0 && ch_counts_(y, x) >= 0,
                  "layout condition: negative channel value");
          if (ch_labels_(y, x) > 0)
            require(ch_counts_(y, x) >= 1,
                    "layout condition: active label pixel with zero count");
        }
      return;
    }
    case Kind::concat:
      for (const Condition& part : parts_) part.validate();
      return;
  }
}

Condition encode_ring_label(int k, int K) { return Condition::make_label(k, K); }

Condition encode_layout(const std::vector<LayoutBox>& boxes, int H, int W) {
  require(H >= 1 && W >= 1, "encode_layout: grid must be at least 1x1");
  Eigen::MatrixXi labels = Eigen::MatrixXi::Zero(H, W);
  Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(H, W);
  for (const LayoutBox& b : boxes) {
    require(b.label >= 1, "encode_layout: box label must be >= 1");
    require(0 <= b.x0 && b.x0 < b.x1 && b.x1 <= W, "encode_layout: x bounds invalid");
    require(0 <= b.y0 && b.y0 < b.y1 && b.y1 <= H, "encode_layout: y bounds invalid");
    for (int y = b.y0; y < b.y1; ++y)
      for (int x = b.x0; x < b.x1; ++x) {
        labels(y, x) += b.label;
        counts(y, x) += 1;
      }
  }
  return Condition::make_layout(std::move(labels), std::move(counts));
}

Condition concat_conditions(std::vector<Condition> parts) {
  return Condition::make_concat(std::move(parts));
}

const Condition& sample_condition_level(const std::vector<Condition>& levels,
                                        std::uint64_t seed) {
  require(!levels.empty(), "sample_condition_level: empty level list");
  Rng rng(seed);
  const auto k = rng.uniform_int(0, static_cast<std::int64_t>(levels.size()) - 1);
  return levels[static_cast<std::size_t>(k)];
}

}  // namespace diffsteer
