#pragma once

#include <cstdint>
#include <vector>

#include "airfed/types.hpp"

namespace airfed {

/// Physical-layer constants shared by every transmitter and receiver.
struct PhyConfig {
  int n_fft = 256;                  // subcarriers
  int cp_len = 32;                  // cyclic prefix samples
  double fs_hz = 15.36e6;           // baseband sample rate
  int m_ft = 128;                   // frame-timing sequence length (even)
  int64_t m_cfo_init = 1'000'000;   // lag products in the initialization preamble
  int m_cfo_frame = 2 * (256 + 32); // CFO sub-frame in digital frames (two OFDM symbols)
  int n_cfo_tone = 4;               // active subcarrier of the CFO sub-frame
  int l_span = 512;                 // lag of the coarse CFO correlator
  double gamma_th = 63.0;           // frame-timing threshold, (m_ft - 2) / 2
  int kappa = 3;                    // OFDM symbols per OTA frame
  int cp_backoff = 16;              // receiver FFT window advance into the CP
  double ft_amp = 0.0625;           // FT sample magnitude, 1/sqrt(n_fft) matches OFDM power
  double cfo_pilot_amp = 0.0625;    // CFO tone magnitude
  double pam_amp = 1.7320508075688772;  // sqrt(3): uniform [-1,1] payload at unit carrier power
  bool null_guards = false;         // null DC and edge carriers
  int guard_width = 8;              // carriers nulled at each band edge when null_guards is set
  uint64_t ft_seed = 0x5eed'f7;
  uint64_t pilot_seed = 0x5eed'9170;

  double ts() const { return 1.0 / fs_hz; }
  int symbol_len() const { return n_fft + cp_len; }

  /// Throws ConfigError when an invariant is violated.
  void validate() const;

  /// Centered indices (-N/2 .. N/2-1) of carriers that carry energy.
  std::vector<int> used_carriers() const;
  /// Mask over centered positions 0..N-1 (position i is carrier i - N/2).
  Eigen::Array<bool, Eigen::Dynamic, 1> used_mask() const;
  int used_count() const { return static_cast<int>(used_carriers().size()); }
};

/// Position in a centered length-N vector of carrier index n.
inline int carrier_pos(int n, int n_fft) { return n + n_fft / 2; }
/// Carrier index of centered position i.
inline int carrier_index(int i, int n_fft) { return i - n_fft / 2; }

}  // namespace airfed
