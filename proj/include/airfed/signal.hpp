#pragma once

#include <cstdint>
#include <string>

#include "airfed/types.hpp"

namespace airfed {

/// Complex baseband samples on the global sample grid. Sample m sits at t0_s + m * Ts.
struct SampleStream {
  cvec samples;
  double t0_s = 0.0;

  Eigen::Index size() const { return samples.size(); }
};

enum class Modulation { QAM4, QAM16, PAM, Raw };

/// One OFDM symbol in the frequency domain, centered order (position i is carrier i - N/2).
struct OfdmSymbol {
  cvec freq;
  Modulation modulation = Modulation::Raw;
};

enum class ChannelKind { DL, UL, OTA };
enum class Direction { DL, UL };

/// Per-subcarrier channel estimate, centered order.
struct FreqChannelEstimate {
  cvec h;
  Eigen::Array<bool, Eigen::Dynamic, 1> valid;
  double t_est_s = 0.0;
  ChannelKind kind = ChannelKind::DL;
};

std::string to_string(ChannelKind kind);
std::string to_string(Modulation mod);

}  // namespace airfed
