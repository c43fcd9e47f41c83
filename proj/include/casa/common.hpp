#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace casa {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using MatX = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;

/// Thrown when an input violates a documented precondition or invariant.
/// The CLI maps this to exit code 1; everything else maps to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {
template <typename... Args>
std::string format_msg(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}
}  // namespace detail

template <typename... Args>
void check(bool cond, Args&&... args) {
  if (!cond) throw ValidationError(detail::format_msg(std::forward<Args>(args)...));
}

template <typename... Args>
[[noreturn]] void fail(Args&&... args) {
  throw ValidationError(detail::format_msg(std::forward<Args>(args)...));
}

/// Deterministic RNG used across the library; one engine per seeded scope.
using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  return d(rng);
}

inline bool all_finite(const MatX& m) { return m.allFinite(); }

}  // namespace casa
