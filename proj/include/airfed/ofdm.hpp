#pragma once

#include <cstdint>
#include <vector>

#include "airfed/phy_config.hpp"
#include "airfed/signal.hpp"

namespace airfed {

/// IDFT of the centered carriers with the last cp_len samples prepended.
SampleStream ofdm_modulate(const OfdmSymbol& sym, const PhyConfig& config, double t0_s = 0.0);

/// Drop the cyclic prefix and take the DFT of the next N samples.
///
/// With backoff > 0 the window starts backoff samples early, inside the cyclic
/// prefix, and the resulting exp(-j 2 pi n backoff / N) ramp is removed so the
/// output matches a window aligned to the end of the prefix. `start` is the
/// index of the first CP sample in r.
OfdmSymbol ofdm_demodulate(const SampleStream& r, const PhyConfig& config, int64_t start = 0, int backoff = 0);

using Bits = std::vector<uint8_t>;

/// Gray-mapped, unit average power. One OFDM symbol per log2(order) * used carriers bits.
std::vector<OfdmSymbol> map_qam(const Bits& bits, int order, const PhyConfig& config);
Bits demap_qam(const std::vector<OfdmSymbol>& syms, int order, const PhyConfig& config);

/// Constellation point for the bits starting at bits[offset].
cplx qam_point(const Bits& bits, size_t offset, int order);
/// Hard decision, appends log2(order) bits.
void qam_decide(cplx point, int order, Bits& out);

/// Real amplitudes v * pam_amp on the used carriers, ascending carrier index.
/// Throws when |v| > 1 or the length differs from the used carrier count.
OfdmSymbol map_pam(const vec& values, const PhyConfig& config);
vec demap_pam(const OfdmSymbol& sym, const PhyConfig& config);

/// Least-squares estimate r[n] / x[n] on used carriers; other carriers invalid.
FreqChannelEstimate ls_channel_estimate(const OfdmSymbol& rx_pilot, const OfdmSymbol& known_pilot, double t_s,
                                        const PhyConfig& config, ChannelKind kind = ChannelKind::DL);

/// Element-wise mean of several estimates of the same channel.
FreqChannelEstimate average_estimates(const std::vector<FreqChannelEstimate>& ests);

inline constexpr double kEqualizerFloor = 1e-6;

struct Equalized {
  OfdmSymbol symbol;
  Eigen::Array<bool, Eigen::Dynamic, 1> reliable;  // false where |h| < floor or the estimate is invalid
};

/// x[n] = r[n] / h[n]; carriers below kEqualizerFloor are zeroed and flagged.
Equalized equalize(const OfdmSymbol& data, const FreqChannelEstimate& est);

/// Time-division orthogonal pilots: sensor k owns pilot slot k.
struct PilotPlan {
  int k_sensors = 0;
  std::vector<OfdmSymbol> pilot_symbols;  // one seeded 4-QAM symbol per slot
  OfdmSymbol common;                      // shared pilot of the OTA frame

  int slot_of(int k) const { return k; }
};

PilotPlan make_pilot_plan(const PhyConfig& config, int k_sensors, uint64_t seed);

/// (N - L) / N.
double transmission_efficiency(const PhyConfig& config);

}  // namespace airfed
