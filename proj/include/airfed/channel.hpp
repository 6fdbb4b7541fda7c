#pragma once

#include <limits>
#include <random>
#include <vector>

#include "airfed/phy_config.hpp"
#include "airfed/signal.hpp"

namespace airfed {

struct Tap {
  cplx gain;
  double delay_s = 0.0;
};

/// Discrete multipath response h(t) = sum_p a_p delta(t - tau_p).
struct MultipathProfile {
  std::vector<Tap> taps;

  int p_count() const { return static_cast<int>(taps.size()); }
  double power() const;
  /// Throws ConfigError unless delays are non-negative, strictly increasing,
  /// whole samples and shorter than the cyclic prefix, with positive finite power.
  void validate(const PhyConfig& cfg) const;
};

/// Ground-truth impairments of one sensor's link to the access point.
struct SensorLinkState {
  MultipathProfile profile;
  double cfo_hz = 0.0;    // sensor oscillator offset seen on the downlink
  double to_dl_s = 0.0;   // downlink timing offset (positive: late sampling)
  double to_ul_s = 0.0;   // uplink timing offset at the access point
  double clock_s = 0.0;   // last timestamp recorded by the sensor
};

/// Impairment draw parameters.
struct ChannelConfig {
  bool impairments = true;          // false: unit tap, no CFO, no TO
  double cfo_max_hz = 2000.0;       // CFO ~ U(-max, max)
  int to_max_samples = 8;           // TO ~ U{-max..max} samples, each direction
  std::vector<int> tap_delays_samples{0, 2, 5};
  double tap_decay_samples = 1.0;   // tap power ~ exp(-delay / decay)
  bool random_tap_phase = true;

  void validate(const PhyConfig& cfg) const;
};

/// Linear convolution with the tap response; output grows by the largest delay.
SampleStream apply_multipath(const SampleStream& x, const MultipathProfile& profile,
                             const PhyConfig& cfg);

/// Multiply sample m by exp(j 2 pi cfo (t0 + m Ts)).
SampleStream apply_cfo(const SampleStream& x, double cfo_hz, const PhyConfig& cfg);

/// Delay the stream by dt_s (negative dt advances it). The whole-sample part is a
/// shift with zero fill at constant length; the remainder is a band-limited
/// circular delay, a phase ramp exp(-j 2 pi n frac / M) over the M-sample input.
SampleStream apply_timing_offset(const SampleStream& x, double dt_s, const PhyConfig& cfg);

inline constexpr double kNoiseless = std::numeric_limits<double>::infinity();

/// Complex AWGN at snr_db relative to the mean power of x; snr_db = +inf is a no-op.
SampleStream add_awgn(const SampleStream& x, double snr_db, uint64_t rng_seed);

/// Complex AWGN with the given per-sample variance (0 is a no-op).
void add_noise(SampleStream& x, double noise_var, std::mt19937_64& rng);

double mean_power(const cvec& x);

/// Multipath coefficients a~[n] = sum_p a_p exp(-j 2 pi n fs tau_p / N), centered order.
cvec multipath_response(const MultipathProfile& profile, const PhyConfig& cfg);

/// Ground-truth effective channel exp(j 2 pi (+-dfr t + n fs dT / N)) a~[n];
/// + for the downlink, - for the uplink. Test oracle only.
FreqChannelEstimate effective_channel_oracle(const SensorLinkState& state, Direction direction,
                                             double t_s, double residual_cfo_hz,
                                             const PhyConfig& cfg);

/// Exponentially decaying taps at the configured delays, unit total power.
MultipathProfile default_profile(const PhyConfig& cfg, const ChannelConfig& ch,
                                 std::mt19937_64& rng);

/// Draw one sensor's link impairments.
SensorLinkState draw_link(const PhyConfig& cfg, const ChannelConfig& ch, std::mt19937_64& rng);

/// One-way propagation: multipath, timing offset, then receiver-side CFO
/// (+cfo on the downlink, -cfo on the uplink). The input is zero-padded by
/// cp_len samples on both ends first so shifts lose nothing; t0_s moves accordingly.
SampleStream propagate(const SampleStream& tx, const SensorLinkState& link, Direction direction,
                       const PhyConfig& cfg);

}  // namespace airfed
