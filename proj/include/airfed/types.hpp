#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace airfed {

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using CVec = Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, 1>;
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using cplx = std::complex<double>;
using vec = Vec<double>;
using cvec = CVec<double>;
using mat = Mat<double>;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or precondition on user-supplied parameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// The handshake could not complete a round after its retry.
class ProtocolAbort : public Error {
 public:
  using Error::Error;
};

/// Reduce an angle to (-pi, pi].
template <typename Scalar>
Scalar wrap_angle(Scalar a) {
  const Scalar two_pi = Scalar(2) * std::numbers::pi_v<Scalar>;
  a = std::remainder(a, two_pi);
  if (a <= -std::numbers::pi_v<Scalar>) a += two_pi;
  return a;
}

/// One splitmix64 step from state a, advanced b + 1 times; derives independent stream seeds.
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// ||est - truth||^2 / ||truth||^2. Throws when truth is identically zero.
template <typename DerivedA, typename DerivedB>
double nmse(const Eigen::MatrixBase<DerivedA>& est, const Eigen::MatrixBase<DerivedB>& truth) {
  const double denom = truth.squaredNorm();
  if (!(denom > 0.0)) throw Error("nmse: reference has zero energy");
  return (est - truth).squaredNorm() / denom;
}

}  // namespace airfed
