#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "airfed/phy_config.hpp"
#include "airfed/signal.hpp"

namespace airfed {

/// Differentially encoded, sample-repeated BPSK sequence used for frame timing.
/// symbols[0] = symbols[1] = +1 and symbols[m + 2] = symbols[m] * q[m], where q
/// repeats each element of the base PRBS twice.
struct FtSequence {
  vec symbols;
  std::vector<int> prbs;  // base sequence, m_ft / 2 entries of +-1
  uint64_t seed = 0;

  /// The repeated sequence q of length m_ft.
  vec q() const;
};

/// Build from an explicit base PRBS of length m_ft / 2.
FtSequence ft_from_prbs(const std::vector<int>& prbs);
/// Seeded uniform PRBS. Throws ConfigError for odd m_ft.
FtSequence gen_ft(const PhyConfig& config, uint64_t seed);
FtSequence gen_ft(int m_ft, uint64_t seed);

/// FT samples scaled by amp, starting at t0_s.
SampleStream ft_waveform(const FtSequence& ft, double amp, double t0_s = 0.0);

/// Single active subcarrier: x[m] = amp * exp(j 2 pi m n_cfo / N), m = 0..length-1.
SampleStream gen_cfo_subframe(const PhyConfig& config, int64_t length, double pilot_amp,
                              double t0_s = 0.0);

struct TimingDecision {
  int64_t m0 = 0;
  double peak = 0.0;
  bool valid = false;
};

/// Lag-2 differential decoding followed by correlation with q. The correlator
/// output at index j covers samples j - m_ft + 1 .. j, so m0 = argmax |Corr| - m_ft + 1.
/// Ties go to the earliest index.
TimingDecision detect_frame(const SampleStream& r, const FtSequence& ft, const PhyConfig& config);

/// Correlator output for every j in [m_ft - 1, len), exposed for diagnostics.
vec ft_correlation(const SampleStream& r, const FtSequence& ft);

enum class FrameKind { InitPreamble, DigitalFrame, OtaFrame };

struct Section {
  std::string name;
  int64_t offset = 0;
  int64_t length = 0;
};

struct FrameLayout {
  FrameKind kind = FrameKind::DigitalFrame;
  std::vector<Section> sections;

  int64_t total_length() const;
  const Section& section(const std::string& name) const;
  bool has(const std::string& name) const;
};

std::string to_string(FrameKind kind);

/// FT + CFO (m_cfo_init + l_span samples, enough for m_cfo_init lag products).
FrameLayout init_preamble_layout(const PhyConfig& config);
/// FT + CFO (m_cfo_frame) + k_pilots pilot symbols + data_symbols OFDM symbols.
FrameLayout digital_frame_layout(const PhyConfig& config, int k_pilots, int data_symbols);
/// FT + one common pilot symbol + data_symbols PAM symbols.
FrameLayout ota_frame_layout(const PhyConfig& config, int data_symbols);

/// Concatenate parts in layout order. Zero-length sections may be omitted.
SampleStream assemble_frame(const FrameLayout& layout, const std::map<std::string, SampleStream>& parts);
/// Inverse of assemble_frame.
std::map<std::string, SampleStream> slice_frame(const FrameLayout& layout, const SampleStream& frame,
                                                double ts);

}  // namespace airfed
