#include "diffsteer/params.hpp"

#include <cmath>

namespace diffsteer {

Matrix& ParamStore::add(const std::string& name, Matrix value) {
  require(index_.count(name) == 0, "duplicate parameter name: " + name);
  index_[name] = static_cast<int>(items_.size());
  items_.emplace_back(name, std::move(value));
  return items_.back().second;
}

int ParamStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  require(it != index_.end(), "unknown parameter name: " + name);
  return it->second;
}

Matrix& ParamStore::at(const std::string& name) { return items_[index_of(name)].second; }
const Matrix& ParamStore::at(const std::string& name) const { return items_[index_of(name)].second; }

Eigen::Index ParamStore::scalar_count() const {
  Eigen::Index n = 0;
  for (const auto& [name, m] : items_) n += m.size();
  return n;
}

std::uint64_t ParamStore::checksum() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& [name, m] : items_) {
    h = fnv1a(name, h);
    h = fnv1a(m, h);
  }
  return h;
}

TapeParams TapeParams::make(tape::Tape& tp, const ParamStore& ps, bool requires_grad) {
  TapeParams out;
  out.store = &ps;
  out.values.reserve(ps.count());
  for (const auto& [name, m] : ps.items()) out.values.push_back(tp.leaf(m, requires_grad));
  return out;
}

tape::Value TapeParams::at(const std::string& name) const {
  return values[static_cast<std::size_t>(store->index_of(name))];
}

std::vector<Matrix> TapeParams::collect_grads(const tape::Tape& tp) const {
  std::vector<Matrix> grads;
  grads.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const Matrix& g = tp.grad(values[i]);
    if (g.size() == 0) {
      const Matrix& p = store->items()[i].second;
      grads.push_back(Matrix::Zero(p.rows(), p.cols()));
    } else {
      grads.push_back(g);
    }
  }
  return grads;
}

Matrix glorot(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng) {
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  return std * rng.normal_matrix(fan_in, fan_out);
}

}  // namespace diffsteer
