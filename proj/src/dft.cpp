#include "airfed/dft.hpp"

#include <unsupported/Eigen/FFT>

namespace airfed {

namespace {

Eigen::FFT<double>& engine() {
  thread_local Eigen::FFT<double> fft;
  return fft;
}

}  // namespace

cvec fft(const cvec& x) {
  cvec out(x.size());
  if (x.size() == 0) return out;
  engine().fwd(out, x);
  return out;
}

cvec ifft(const cvec& X) {
  cvec out(X.size());
  if (X.size() == 0) return out;
  engine().inv(out, X);
  return out;
}

cvec bins_to_centered(const cvec& bins) {
  const Eigen::Index n = bins.size();
  const Eigen::Index half = n / 2;
  cvec out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = bins[(i - half + n) % n];
  return out;
}

cvec centered_to_bins(const cvec& centered) {
  const Eigen::Index n = centered.size();
  const Eigen::Index half = n / 2;
  cvec out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[(i - half + n) % n] = centered[i];
  return out;
}

vec centered_indices(int n) {
  return vec::LinSpaced(n, -n / 2, n - 1 - n / 2);
}

}  // namespace airfed
