#pragma once

#include "diffsteer/common.hpp"
#include "diffsteer/rng.hpp"
#include "diffsteer/tape.hpp"

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace diffsteer {

// Flat, insertion-ordered parameter store keyed by layer name. Iteration
// order is construction order, which fixes the optimizer and checksum
// traversal and keeps runs reproducible.
class ParamStore {
 public:
  Matrix& add(const std::string& name, Matrix value);
  Matrix& at(const std::string& name);
  const Matrix& at(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  int index_of(const std::string& name) const;

  std::size_t count() const { return items_.size(); }
  Eigen::Index scalar_count() const;
  std::uint64_t checksum() const;

  const std::vector<std::pair<std::string, Matrix>>& items() const { return items_; }
  std::vector<std::pair<std::string, Matrix>>& items() { return items_; }

 private:
  std::vector<std::pair<std::string, Matrix>> items_;
  std::unordered_map<std::string, int> index_;
};

// Leaves for every parameter of a store, in store order.
struct TapeParams {
  const ParamStore* store = nullptr;
  std::vector<tape::Value> values;

  static TapeParams make(tape::Tape& tp, const ParamStore& ps, bool requires_grad);
  tape::Value at(const std::string& name) const;
  // Gradients in store order; zero matrices for untouched parameters.
  std::vector<Matrix> collect_grads(const tape::Tape& tp) const;
};

// Glorot-normal initialization, biases zero.
Matrix glorot(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng);

}  // namespace diffsteer
