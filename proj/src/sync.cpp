#include "airfed/sync.hpp"

#include <cmath>

namespace airfed {

double coarse_cfo_estimate(const SampleStream& r_init, const PhyConfig& config) {
  const int64_t m = config.m_cfo_init;
  const int64_t lag = config.l_span;
  if (r_init.size() < m + lag) throw Error("coarse_cfo_estimate: preamble shorter than m_cfo_init + l_span");
  const cplx* r = r_init.samples.data();
  cplx acc(0.0, 0.0);
  for (int64_t i = 0; i < m; ++i) acc += std::conj(r[i]) * r[i + lag];
  return std::arg(acc) / (kTwoPi * config.ts() * static_cast<double>(lag));
}

double coarse_cfo_range(const PhyConfig& config) { return 1.0 / (2.0 * config.ts() * config.l_span); }

CfoEstimate track_residual_cfo(const CfoEstimate& state, const OfdmSymbol& rx_pilot, double t_p,
                               const PhyConfig& config) {
  CfoEstimate next = state;
  next.prev_pilot = rx_pilot.freq;
  next.last_t_s = t_p;
  if (!state.prev_pilot) return next;

  const cvec& prev = *state.prev_pilot;
  const double dt = t_p - state.last_t_s;
  if (!(dt > 0.0)) throw Error("track_residual_cfo: pilots must be strictly increasing in time");
  double angle_sum = 0.0;
  int count = 0;
  for (int n : config.used_carriers()) {
    const int i = carrier_pos(n, config.n_fft);
    angle_sum += std::arg(rx_pilot.freq[i] * std::conj(prev[i]));
    ++count;
  }
  const double single = angle_sum / (kTwoPi * dt * count);
  next.p_count = state.p_count + 1;
  const double p = next.p_count;
  next.residual_hz = (p - 1.0) / p * state.residual_hz + single / p;
  next.last_single_hz = single;
  return next;
}

bool needs_recorrection(const CfoEstimate& state, double delta_t_s) {
  return delta_t_s * std::abs(state.residual_hz) > 0.5;
}

double cfo_nmse(const vec& est, const vec& truth) {
  if (est.size() != truth.size()) throw Error("cfo_nmse: length mismatch");
  return nmse(est, truth);
}

}  // namespace airfed
