#include "airfed/channel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "airfed/dft.hpp"

namespace airfed {

// ---- PhyConfig -------------------------------------------------------------

void PhyConfig::validate() const {
  if (n_fft < 4 || n_fft % 2 != 0) throw ConfigError("phy.n_fft must be even and >= 4");
  if (cp_len < 0 || cp_len >= n_fft) throw ConfigError("phy.cp_len must satisfy 0 <= cp_len < n_fft");
  if (!(fs_hz > 0.0)) throw ConfigError("phy.fs_hz must be positive");
  if (m_ft < 4 || m_ft % 2 != 0) throw ConfigError("phy.m_ft must be even and >= 4");
  if (m_cfo_init <= n_fft) throw ConfigError("phy.m_cfo_init must exceed n_fft");
  if (m_cfo_frame <= n_fft) throw ConfigError("phy.m_cfo_frame must exceed n_fft");
  if (n_cfo_tone < -n_fft / 2 || n_cfo_tone >= n_fft / 2)
    throw ConfigError("phy.n_cfo_tone outside -N/2..N/2-1");
  if (l_span <= 0) throw ConfigError("phy.l_span must be positive");
  // Zero lag-product phase for the single-tone sub-frame.
  const int period = n_fft / std::gcd(std::abs(n_cfo_tone), n_fft);
  if (l_span % period != 0)
    throw ConfigError("phy.l_span must be a multiple of N / gcd(n_cfo_tone, N) = " +
                      std::to_string(period));
  if (!(gamma_th > 0.0) || gamma_th > m_ft - 2) throw ConfigError("phy.gamma_th must lie in (0, m_ft - 2]");
  if (kappa < 1) throw ConfigError("phy.kappa must be >= 1");
  if (cp_backoff < 0 || cp_backoff > cp_len) throw ConfigError("phy.cp_backoff must lie in [0, cp_len]");
  if (!(ft_amp > 0.0) || !(cfo_pilot_amp > 0.0) || !(pam_amp > 0.0))
    throw ConfigError("phy amplitudes must be positive");
  if (null_guards && (guard_width < 0 || 2 * guard_width + 2 >= n_fft))
    throw ConfigError("phy.guard_width leaves no usable carriers");
}

std::vector<int> PhyConfig::used_carriers() const {
  std::vector<int> out;
  out.reserve(static_cast<size_t>(n_fft));
  for (int n = -n_fft / 2; n < n_fft / 2; ++n) {
    if (null_guards && (n == 0 || n < -n_fft / 2 + guard_width || n >= n_fft / 2 - guard_width)) continue;
    out.push_back(n);
  }
  return out;
}

Eigen::Array<bool, Eigen::Dynamic, 1> PhyConfig::used_mask() const {
  Eigen::Array<bool, Eigen::Dynamic, 1> mask = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(n_fft, false);
  for (int n : used_carriers()) mask[carrier_pos(n, n_fft)] = true;
  return mask;
}

std::string to_string(ChannelKind kind) {
  switch (kind) {
    case ChannelKind::DL: return "DL";
    case ChannelKind::UL: return "UL";
    case ChannelKind::OTA: return "OTA";
  }
  return "?";
}

std::string to_string(Modulation mod) {
  switch (mod) {
    case Modulation::QAM4: return "QAM4";
    case Modulation::QAM16: return "QAM16";
    case Modulation::PAM: return "PAM";
    case Modulation::Raw: return "Raw";
  }
  return "?";
}

// ---- profiles --------------------------------------------------------------

namespace {

int whole_samples(double delay_s, const PhyConfig& cfg) {
  const double d = delay_s * cfg.fs_hz;
  const double r = std::round(d);
  if (std::abs(d - r) > 1e-6) throw ConfigError("multipath delays must be whole samples");
  return static_cast<int>(r);
}

}  // namespace

double MultipathProfile::power() const {
  double p = 0.0;
  for (const Tap& t : taps) p += std::norm(t.gain);
  return p;
}

void MultipathProfile::validate(const PhyConfig& cfg) const {
  if (taps.empty()) throw ConfigError("multipath profile has no taps");
  double prev = -1.0;
  for (const Tap& t : taps) {
    if (!std::isfinite(t.gain.real()) || !std::isfinite(t.gain.imag()))
      throw ConfigError("multipath gain is not finite");
    if (t.delay_s < 0.0) throw ConfigError("multipath delay is negative");
    if (t.delay_s <= prev) throw ConfigError("multipath delays must be strictly increasing");
    if (t.delay_s >= cfg.cp_len * cfg.ts()) throw ConfigError("multipath delay exceeds the cyclic prefix");
    whole_samples(t.delay_s, cfg);
    prev = t.delay_s;
  }
  const double p = power();
  if (!(p > 0.0) || !std::isfinite(p)) throw ConfigError("multipath power must be finite and positive");
}

void ChannelConfig::validate(const PhyConfig& cfg) const {
  if (cfo_max_hz < 0.0) throw ConfigError("channel.cfo_max_hz must be >= 0");
  if (to_max_samples < 0 || to_max_samples >= cfg.cp_len)
    throw ConfigError("channel.to_max_samples must lie in [0, cp_len)");
  if (tap_delays_samples.empty()) throw ConfigError("channel.tap_delays_samples is empty");
  for (size_t i = 0; i < tap_delays_samples.size(); ++i) {
    if (tap_delays_samples[i] < 0 || tap_delays_samples[i] >= cfg.cp_len)
      throw ConfigError("channel.tap_delays_samples must lie in [0, cp_len)");
    if (i > 0 && tap_delays_samples[i] <= tap_delays_samples[i - 1])
      throw ConfigError("channel.tap_delays_samples must be strictly increasing");
  }
  if (!(tap_decay_samples > 0.0)) throw ConfigError("channel.tap_decay_samples must be positive");
}

MultipathProfile default_profile(const PhyConfig& cfg, const ChannelConfig& ch, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> phase(-kPi, kPi);
  MultipathProfile prof;
  for (int d : ch.tap_delays_samples) {
    const double amp = std::sqrt(std::exp(-d / ch.tap_decay_samples));
    const double ph = ch.random_tap_phase ? phase(rng) : 0.0;
    prof.taps.push_back({std::polar(amp, ph), d * cfg.ts()});
  }
  const double norm = std::sqrt(prof.power());
  for (Tap& t : prof.taps) t.gain /= norm;
  return prof;
}

SensorLinkState draw_link(const PhyConfig& cfg, const ChannelConfig& ch, std::mt19937_64& rng) {
  SensorLinkState link;
  if (!ch.impairments) {
    link.profile.taps = {{cplx(1.0, 0.0), 0.0}};
    return link;
  }
  link.profile = default_profile(cfg, ch, rng);
  std::uniform_real_distribution<double> cfo(-ch.cfo_max_hz, ch.cfo_max_hz);
  std::uniform_int_distribution<int> to(-ch.to_max_samples, ch.to_max_samples);
  link.cfo_hz = cfo(rng);
  link.to_dl_s = to(rng) * cfg.ts();
  link.to_ul_s = to(rng) * cfg.ts();
  return link;
}

// ---- stream operations -----------------------------------------------------

SampleStream apply_multipath(const SampleStream& x, const MultipathProfile& profile, const PhyConfig& cfg) {
  profile.validate(cfg);
  int max_delay = 0;
  for (const Tap& t : profile.taps) max_delay = std::max(max_delay, whole_samples(t.delay_s, cfg));
  SampleStream y{cvec::Zero(x.size() + max_delay), x.t0_s};
  for (const Tap& t : profile.taps) {
    const int d = whole_samples(t.delay_s, cfg);
    y.samples.segment(d, x.size()) += t.gain * x.samples;
  }
  return y;
}

SampleStream apply_cfo(const SampleStream& x, double cfo_hz, const PhyConfig& cfg) {
  SampleStream y = x;
  if (cfo_hz == 0.0) return y;
  const double ts = cfg.ts();
  for (Eigen::Index m = 0; m < x.size(); ++m) {
    const double t = x.t0_s + static_cast<double>(m) * ts;
    y.samples[m] *= std::polar(1.0, kTwoPi * std::remainder(cfo_hz * t, 1.0));
  }
  return y;
}

SampleStream apply_timing_offset(const SampleStream& x, double dt_s, const PhyConfig& cfg) {
  if (!(std::abs(dt_s) < cfg.cp_len * cfg.ts()))
    throw ConfigError("timing offset must be smaller than the cyclic prefix");
  const double total = dt_s * cfg.fs_hz;
  const double whole = std::trunc(total);
  const double frac = total - whole;
  const auto shift = static_cast<Eigen::Index>(whole);
  const Eigen::Index m = x.size();

  SampleStream y{cvec::Zero(m), x.t0_s};
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::Index src = i - shift;
    if (src >= 0 && src < m) y.samples[i] = x.samples[src];
  }
  if (std::abs(frac) > 1e-12 && m > 0) {
    cvec spec = bins_to_centered(fft(y.samples));
    const vec n = centered_indices(static_cast<int>(m));
    for (Eigen::Index i = 0; i < m; ++i)
      spec[i] *= std::polar(1.0, -kTwoPi * n[i] * frac / static_cast<double>(m));
    y.samples = ifft(centered_to_bins(spec));
  }
  return y;
}

double mean_power(const cvec& x) {
  if (x.size() == 0) return 0.0;
  return x.squaredNorm() / static_cast<double>(x.size());
}

void add_noise(SampleStream& x, double noise_var, std::mt19937_64& rng) {
  if (!(noise_var > 0.0)) return;
  std::normal_distribution<double> gauss(0.0, std::sqrt(noise_var / 2.0));
  for (Eigen::Index m = 0; m < x.size(); ++m) {
    const double re = gauss(rng);
    const double im = gauss(rng);
    x.samples[m] += cplx(re, im);
  }
}

SampleStream add_awgn(const SampleStream& x, double snr_db, uint64_t rng_seed) {
  SampleStream y = x;
  if (std::isinf(snr_db) && snr_db > 0) return y;
  const double p = mean_power(x.samples);
  if (!(p > 0.0)) throw Error("add_awgn: input has zero power");
  std::mt19937_64 rng(rng_seed);
  add_noise(y, p / std::pow(10.0, snr_db / 10.0), rng);
  return y;
}

cvec multipath_response(const MultipathProfile& profile, const PhyConfig& cfg) {
  const vec n = centered_indices(cfg.n_fft);
  cvec a = cvec::Zero(cfg.n_fft);
  for (const Tap& t : profile.taps)
    for (int i = 0; i < cfg.n_fft; ++i)
      a[i] += t.gain * std::polar(1.0, -kTwoPi * n[i] * cfg.fs_hz * t.delay_s / cfg.n_fft);
  return a;
}

FreqChannelEstimate effective_channel_oracle(const SensorLinkState& state, Direction direction, double t_s,
                                             double residual_cfo_hz, const PhyConfig& cfg) {
  const double sign = direction == Direction::DL ? 1.0 : -1.0;
  const double to = direction == Direction::DL ? state.to_dl_s : state.to_ul_s;
  const cvec a = multipath_response(state.profile, cfg);
  const vec n = centered_indices(cfg.n_fft);
  const double cfo_phase = kTwoPi * std::remainder(sign * residual_cfo_hz * t_s, 1.0);
  FreqChannelEstimate est;
  est.h.resize(cfg.n_fft);
  for (int i = 0; i < cfg.n_fft; ++i)
    est.h[i] = std::polar(1.0, cfo_phase + kTwoPi * n[i] * cfg.fs_hz * to / cfg.n_fft) * a[i];
  est.valid = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(cfg.n_fft, true);
  est.t_est_s = t_s;
  est.kind = direction == Direction::DL ? ChannelKind::DL : ChannelKind::UL;
  return est;
}

SampleStream propagate(const SampleStream& tx, const SensorLinkState& link, Direction direction,
                       const PhyConfig& cfg) {
  const Eigen::Index pad = cfg.cp_len;
  SampleStream padded{cvec::Zero(tx.size() + 2 * pad), tx.t0_s - static_cast<double>(pad) * cfg.ts()};
  padded.samples.segment(pad, tx.size()) = tx.samples;
  SampleStream y = apply_multipath(padded, link.profile, cfg);
  const double to = direction == Direction::DL ? link.to_dl_s : link.to_ul_s;
  // Late sampling by to is the same as the stream arriving early by to.
  if (to != 0.0) y = apply_timing_offset(y, -to, cfg);
  const double cfo = direction == Direction::DL ? link.cfo_hz : -link.cfo_hz;
  return apply_cfo(y, cfo, cfg);
}

}  // namespace airfed
