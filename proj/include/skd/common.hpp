#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace skd {

using Scalar = double;
using Vec = Eigen::VectorXd;
// Column-per-sample layout: a logit batch is K x B.
using Mat = Eigen::MatrixXd;

// Thrown when an operation receives inputs violating its contract.
struct InvalidInput : std::runtime_error {
  explicit InvalidInput(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when training produces a non-finite loss.
struct Divergence : std::runtime_error {
  explicit Divergence(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

inline bool all_finite(const Mat& m) { return m.allFinite(); }

// FNV-1a, used for stable run identifiers derived from resolved configs.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace skd
