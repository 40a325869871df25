#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace diffsteer {

inline constexpr const char* kVersion = "0.1.0";

// Batches are row-major: one sample per row, one coordinate per column.
using Matrix = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;

// Invalid user-supplied values (ranges, shapes at API boundaries).
class ParamError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Mismatched components (wrong checkpoint, module built for another backbone).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values surfacing mid-computation; message names the location.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;

// FNV-1a over raw bytes; used for parameter checksums and dataset hashes.
inline std::uint64_t fnv1a(const void* data, std::size_t len,
                           std::uint64_t h = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = kFnvOffset) {
  return fnv1a(s.data(), s.size(), h);
}

inline std::uint64_t fnv1a(const Matrix& m, std::uint64_t h = kFnvOffset) {
  // Eigen stores column-major; hash includes dims so transposes differ.
  const Eigen::Index dims[2] = {m.rows(), m.cols()};
  h = fnv1a(dims, sizeof(dims), h);
  return fnv1a(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()), h);
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ParamError(msg);
}

}  // namespace diffsteer
