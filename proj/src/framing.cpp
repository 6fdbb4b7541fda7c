#include "airfed/framing.hpp"

#include <cmath>
#include <random>

namespace airfed {

vec FtSequence::q() const {
  vec out(2 * static_cast<Eigen::Index>(prbs.size()));
  for (size_t i = 0; i < prbs.size(); ++i) {
    out[2 * i] = prbs[i];
    out[2 * i + 1] = prbs[i];
  }
  return out;
}

FtSequence ft_from_prbs(const std::vector<int>& prbs) {
  if (prbs.size() < 2) throw ConfigError("FT base sequence needs at least 2 entries");
  for (int v : prbs)
    if (v != 1 && v != -1) throw ConfigError("FT base sequence must be +-1");
  FtSequence ft;
  ft.prbs = prbs;
  const vec q = ft.q();
  const Eigen::Index m_ft = q.size();
  ft.symbols.resize(m_ft);
  ft.symbols[0] = 1.0;
  ft.symbols[1] = 1.0;
  for (Eigen::Index m = 0; m + 2 < m_ft; ++m) ft.symbols[m + 2] = ft.symbols[m] * q[m];
  return ft;
}

FtSequence gen_ft(int m_ft, uint64_t seed) {
  if (m_ft < 4 || m_ft % 2 != 0) throw ConfigError("m_ft must be even and >= 4");
  std::mt19937_64 rng(seed);
  std::vector<int> prbs(static_cast<size_t>(m_ft / 2));
  for (int& v : prbs) v = (rng() >> 63) ? 1 : -1;
  FtSequence ft = ft_from_prbs(prbs);
  ft.seed = seed;
  return ft;
}

FtSequence gen_ft(const PhyConfig& config, uint64_t seed) { return gen_ft(config.m_ft, seed); }

SampleStream ft_waveform(const FtSequence& ft, double amp, double t0_s) {
  return SampleStream{(ft.symbols * amp).cast<cplx>(), t0_s};
}

SampleStream gen_cfo_subframe(const PhyConfig& config, int64_t length, double pilot_amp, double t0_s) {
  if (length <= config.n_fft) throw ConfigError("CFO sub-frame must be longer than n_fft");
  SampleStream x{cvec(length), t0_s};
  const int n = config.n_fft;
  for (int64_t m = 0; m < length; ++m) {
    // Reduce m * n_cfo modulo N before scaling to keep the phase exact.
    const int64_t k = ((m % n) * config.n_cfo_tone % n + n) % n;
    x.samples[m] = std::polar(pilot_amp, kTwoPi * static_cast<double>(k) / n);
  }
  return x;
}

vec ft_correlation(const SampleStream& r, const FtSequence& ft) {
  const Eigen::Index len = r.size();
  const Eigen::Index m_ft = ft.symbols.size();
  if (len < m_ft) throw Error("detect_frame: stream shorter than the FT sequence");
  // qhat[m] uses r[m] and r[m + 2].
  vec qhat(len - 2);
  for (Eigen::Index m = 0; m + 2 < len; ++m) {
    const double d = (r.samples[m] * std::conj(r.samples[m + 2])).real();
    qhat[m] = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
  }
  const vec q = ft.q().head(m_ft - 2);
  vec corr(len - m_ft + 1);
  for (Eigen::Index j = m_ft - 1; j < len; ++j)
    corr[j - (m_ft - 1)] = qhat.segment(j - m_ft + 1, m_ft - 2).dot(q);
  return corr;
}

TimingDecision detect_frame(const SampleStream& r, const FtSequence& ft, const PhyConfig& config) {
  const vec corr = ft_correlation(r, ft);
  Eigen::Index best = 0;
  double peak = -1.0;
  for (Eigen::Index i = 0; i < corr.size(); ++i) {
    if (std::abs(corr[i]) > peak) {
      peak = std::abs(corr[i]);
      best = i;
    }
  }
  const Eigen::Index m_ft = ft.symbols.size();
  TimingDecision d;
  // corr[i] is correlator output index j = i + m_ft - 1.
  d.m0 = static_cast<int64_t>(best + m_ft - 1) - static_cast<int64_t>(m_ft) + 1;
  d.peak = peak;
  d.valid = peak >= config.gamma_th;
  return d;
}

// ---- layouts ---------------------------------------------------------------

int64_t FrameLayout::total_length() const {
  int64_t n = 0;
  for (const Section& s : sections) n += s.length;
  return n;
}

const Section& FrameLayout::section(const std::string& name) const {
  for (const Section& s : sections)
    if (s.name == name) return s;
  throw Error("frame layout has no section '" + name + "'");
}

bool FrameLayout::has(const std::string& name) const {
  for (const Section& s : sections)
    if (s.name == name) return true;
  return false;
}

std::string to_string(FrameKind kind) {
  switch (kind) {
    case FrameKind::InitPreamble: return "InitPreamble";
    case FrameKind::DigitalFrame: return "DigitalFrame";
    case FrameKind::OtaFrame: return "OtaFrame";
  }
  return "?";
}

namespace {

FrameLayout build(FrameKind kind, const std::vector<std::pair<std::string, int64_t>>& parts) {
  FrameLayout layout{kind, {}};
  int64_t offset = 0;
  for (const auto& [name, len] : parts) {
    layout.sections.push_back({name, offset, len});
    offset += len;
  }
  return layout;
}

}  // namespace

FrameLayout init_preamble_layout(const PhyConfig& config) {
  return build(FrameKind::InitPreamble, {{"ft", config.m_ft}, {"cfo", config.m_cfo_init + config.l_span}});
}

FrameLayout digital_frame_layout(const PhyConfig& config, int k_pilots, int data_symbols) {
  if (k_pilots < 1 || data_symbols < 0) throw ConfigError("digital frame needs >= 1 pilot and >= 0 data symbols");
  const int64_t sym = config.symbol_len();
  return build(FrameKind::DigitalFrame, {{"ft", config.m_ft},
                                         {"cfo", config.m_cfo_frame},
                                         {"pilots", k_pilots * sym},
                                         {"data", data_symbols * sym}});
}

FrameLayout ota_frame_layout(const PhyConfig& config, int data_symbols) {
  if (data_symbols < 0) throw ConfigError("OTA frame data symbol count is negative");
  const int64_t sym = config.symbol_len();
  return build(FrameKind::OtaFrame, {{"ft", config.m_ft}, {"pilots", sym}, {"data", data_symbols * sym}});
}

SampleStream assemble_frame(const FrameLayout& layout, const std::map<std::string, SampleStream>& parts) {
  SampleStream out{cvec(layout.total_length()), 0.0};
  bool first = true;
  for (const Section& s : layout.sections) {
    auto it = parts.find(s.name);
    if (it == parts.end()) {
      if (s.length == 0) continue;
      throw Error("assemble_frame: missing part '" + s.name + "'");
    }
    if (it->second.size() != s.length)
      throw Error("assemble_frame: part '" + s.name + "' has length " + std::to_string(it->second.size()) +
                  ", layout expects " + std::to_string(s.length));
    out.samples.segment(s.offset, s.length) = it->second.samples;
    if (first) {
      out.t0_s = it->second.t0_s;
      first = false;
    }
  }
  for (const auto& [name, part] : parts)
    if (!layout.has(name)) throw Error("assemble_frame: unexpected part '" + name + "'");
  return out;
}

std::map<std::string, SampleStream> slice_frame(const FrameLayout& layout, const SampleStream& frame, double ts) {
  if (frame.size() < layout.total_length()) throw Error("slice_frame: frame shorter than layout");
  std::map<std::string, SampleStream> parts;
  for (const Section& s : layout.sections)
    parts[s.name] = SampleStream{frame.samples.segment(s.offset, s.length),
                                 frame.t0_s + static_cast<double>(s.offset) * ts};
  return parts;
}

}  // namespace airfed
