#include "airfed/ofdm.hpp"

#include <cmath>
#include <random>

#include "airfed/dft.hpp"

namespace airfed {

SampleStream ofdm_modulate(const OfdmSymbol& sym, const PhyConfig& config, double t0_s) {
  const int n = config.n_fft;
  const int l = config.cp_len;
  if (sym.freq.size() != n) throw Error("ofdm_modulate: symbol length differs from n_fft");
  const cvec body = ifft(centered_to_bins(sym.freq));
  SampleStream out{cvec(n + l), t0_s};
  out.samples.head(l) = body.tail(l);
  out.samples.tail(n) = body;
  return out;
}

OfdmSymbol ofdm_demodulate(const SampleStream& r, const PhyConfig& config, int64_t start, int backoff) {
  const int n = config.n_fft;
  const int l = config.cp_len;
  if (backoff < 0 || backoff > l) throw Error("ofdm_demodulate: backoff outside the cyclic prefix");
  const int64_t first = start + l - backoff;
  if (start < 0 || first + n > r.size()) throw Error("ofdm_demodulate: input shorter than one OFDM symbol");
  OfdmSymbol sym{bins_to_centered(fft(r.samples.segment(first, n))), Modulation::Raw};
  if (backoff != 0) {
    const vec idx = centered_indices(n);
    for (int i = 0; i < n; ++i) sym.freq[i] *= std::polar(1.0, kTwoPi * idx[i] * backoff / n);
  }
  return sym;
}

// ---- QAM -------------------------------------------------------------------

namespace {

int bits_per_symbol(int order) {
  if (order == 4) return 2;
  if (order == 16) return 4;
  throw ConfigError("QAM order must be 4 or 16");
}

// Gray levels per axis for two bits: 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3.
double gray_level(uint8_t b0, uint8_t b1) {
  if (b0 == 0) return b1 == 0 ? -3.0 : -1.0;
  return b1 == 0 ? 3.0 : 1.0;
}

void gray_decide(double v, Bits& out) {
  if (v < -2.0) {
    out.push_back(0), out.push_back(0);
  } else if (v < 0.0) {
    out.push_back(0), out.push_back(1);
  } else if (v < 2.0) {
    out.push_back(1), out.push_back(1);
  } else {
    out.push_back(1), out.push_back(0);
  }
}

const double kQam16Scale = 1.0 / std::sqrt(10.0);
const double kQam4Scale = 1.0 / std::sqrt(2.0);

}  // namespace

cplx qam_point(const Bits& bits, size_t offset, int order) {
  if (order == 4) {
    const double re = bits[offset] ? 1.0 : -1.0;
    const double im = bits[offset + 1] ? 1.0 : -1.0;
    return cplx(re, im) * kQam4Scale;
  }
  if (order == 16)
    return cplx(gray_level(bits[offset], bits[offset + 1]), gray_level(bits[offset + 2], bits[offset + 3])) *
           kQam16Scale;
  throw ConfigError("QAM order must be 4 or 16");
}

void qam_decide(cplx point, int order, Bits& out) {
  if (order == 4) {
    out.push_back(point.real() >= 0.0 ? 1 : 0);
    out.push_back(point.imag() >= 0.0 ? 1 : 0);
    return;
  }
  if (order == 16) {
    gray_decide(point.real() / kQam16Scale, out);
    gray_decide(point.imag() / kQam16Scale, out);
    return;
  }
  throw ConfigError("QAM order must be 4 or 16");
}

std::vector<OfdmSymbol> map_qam(const Bits& bits, int order, const PhyConfig& config) {
  const int bps = bits_per_symbol(order);
  const std::vector<int> used = config.used_carriers();
  const size_t per_symbol = static_cast<size_t>(bps) * used.size();
  if (bits.empty() || bits.size() % per_symbol != 0)
    throw Error("map_qam: bit count must be a multiple of log2(order) * used carriers");
  for (uint8_t b : bits)
    if (b > 1) throw Error("map_qam: bits must be 0 or 1");
  const Modulation mod = order == 4 ? Modulation::QAM4 : Modulation::QAM16;
  std::vector<OfdmSymbol> out;
  size_t offset = 0;
  while (offset < bits.size()) {
    OfdmSymbol sym{cvec::Zero(config.n_fft), mod};
    for (int n : used) {
      sym.freq[carrier_pos(n, config.n_fft)] = qam_point(bits, offset, order);
      offset += static_cast<size_t>(bps);
    }
    out.push_back(std::move(sym));
  }
  return out;
}

Bits demap_qam(const std::vector<OfdmSymbol>& syms, int order, const PhyConfig& config) {
  bits_per_symbol(order);
  const std::vector<int> used = config.used_carriers();
  Bits out;
  for (const OfdmSymbol& sym : syms)
    for (int n : used) qam_decide(sym.freq[carrier_pos(n, config.n_fft)], order, out);
  return out;
}

// ---- PAM -------------------------------------------------------------------

OfdmSymbol map_pam(const vec& values, const PhyConfig& config) {
  const std::vector<int> used = config.used_carriers();
  if (values.size() != static_cast<Eigen::Index>(used.size()))
    throw Error("map_pam: expected " + std::to_string(used.size()) + " values, got " +
                std::to_string(values.size()));
  OfdmSymbol sym{cvec::Zero(config.n_fft), Modulation::PAM};
  for (size_t i = 0; i < used.size(); ++i) {
    const double v = values[static_cast<Eigen::Index>(i)];
    if (!(std::abs(v) <= 1.0)) throw Error("map_pam: value outside [-1, 1]");
    sym.freq[carrier_pos(used[i], config.n_fft)] = v * config.pam_amp;
  }
  return sym;
}

vec demap_pam(const OfdmSymbol& sym, const PhyConfig& config) {
  const std::vector<int> used = config.used_carriers();
  vec out(static_cast<Eigen::Index>(used.size()));
  for (size_t i = 0; i < used.size(); ++i)
    out[static_cast<Eigen::Index>(i)] = sym.freq[carrier_pos(used[i], config.n_fft)].real() / config.pam_amp;
  return out;
}

// ---- estimation ------------------------------------------------------------

FreqChannelEstimate ls_channel_estimate(const OfdmSymbol& rx_pilot, const OfdmSymbol& known_pilot, double t_s,
                                        const PhyConfig& config, ChannelKind kind) {
  const int n = config.n_fft;
  if (rx_pilot.freq.size() != n || known_pilot.freq.size() != n)
    throw Error("ls_channel_estimate: symbol length differs from n_fft");
  FreqChannelEstimate est;
  est.h = cvec::Zero(n);
  est.valid = config.used_mask();
  est.t_est_s = t_s;
  est.kind = kind;
  for (int i = 0; i < n; ++i) {
    if (!est.valid[i]) continue;
    if (known_pilot.freq[i] == cplx(0.0, 0.0)) throw Error("ls_channel_estimate: zero pilot on a used carrier");
    est.h[i] = rx_pilot.freq[i] / known_pilot.freq[i];
  }
  return est;
}

FreqChannelEstimate average_estimates(const std::vector<FreqChannelEstimate>& ests) {
  if (ests.empty()) throw Error("average_estimates: no estimates");
  FreqChannelEstimate out = ests.front();
  double t = out.t_est_s;
  for (size_t i = 1; i < ests.size(); ++i) {
    if (ests[i].h.size() != out.h.size()) throw Error("average_estimates: length mismatch");
    out.h += ests[i].h;
    out.valid = out.valid && ests[i].valid;
    t += ests[i].t_est_s;
  }
  const double k = static_cast<double>(ests.size());
  out.h /= k;
  out.t_est_s = t / k;
  return out;
}

Equalized equalize(const OfdmSymbol& data, const FreqChannelEstimate& est) {
  if (data.freq.size() != est.h.size()) throw Error("equalize: length mismatch");
  Equalized out{OfdmSymbol{cvec::Zero(data.freq.size()), data.modulation},
                Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(data.freq.size(), false)};
  for (Eigen::Index i = 0; i < data.freq.size(); ++i) {
    if (!est.valid[i] || !(std::abs(est.h[i]) >= kEqualizerFloor)) continue;
    out.symbol.freq[i] = data.freq[i] / est.h[i];
    out.reliable[i] = true;
  }
  return out;
}

PilotPlan make_pilot_plan(const PhyConfig& config, int k_sensors, uint64_t seed) {
  if (k_sensors < 1) throw ConfigError("pilot plan needs at least one sensor");
  std::mt19937_64 rng(seed);
  const int used = config.used_count();
  auto draw = [&]() {
    Bits bits(static_cast<size_t>(2 * used));
    for (uint8_t& b : bits) b = static_cast<uint8_t>(rng() >> 63);
    return map_qam(bits, 4, config).front();
  };
  PilotPlan plan;
  plan.k_sensors = k_sensors;
  for (int k = 0; k < k_sensors; ++k) plan.pilot_symbols.push_back(draw());
  plan.common = draw();
  return plan;
}

double transmission_efficiency(const PhyConfig& config) {
  return static_cast<double>(config.n_fft - config.cp_len) / config.n_fft;
}

}  // namespace airfed
