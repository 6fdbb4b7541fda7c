#include "airfed/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "airfed/dft.hpp"

namespace airfed {

namespace {

void check_estimate(const FreqChannelEstimate& h, const PhyConfig& config, const char* who) {
  if (h.h.size() != config.n_fft || h.valid.size() != config.n_fft)
    throw Error(std::string(who) + ": estimate length differs from n_fft");
  if (!h.h.allFinite()) throw Error(std::string(who) + ": non-finite channel estimate");
}

bool usable(const FreqChannelEstimate& h, int i) { return h.valid[i] && std::abs(h.h[i]) > 0.0; }

}  // namespace

double estimate_phi0(const FreqChannelEstimate& h_ota, const PhyConfig& config) {
  check_estimate(h_ota, config, "estimate_phi0");
  const int n_fft = config.n_fft;
  const int half = n_fft / 2;
  // Anchor at the valid carrier nearest DC, then unwrap outward in both directions.
  int anchor = -1;
  for (int d = 0; d < half && anchor < 0; ++d) {
    if (usable(h_ota, half + d)) anchor = half + d;
    else if (d > 0 && usable(h_ota, half - d)) anchor = half - d;
  }
  if (anchor < 0) throw Error("estimate_phi0: no valid carriers");
  std::vector<double> unwrapped(static_cast<size_t>(n_fft), 0.0);
  std::vector<bool> have(static_cast<size_t>(n_fft), false);
  unwrapped[anchor] = std::arg(h_ota.h[anchor]);
  have[anchor] = true;
  for (int step : {1, -1}) {
    int prev = anchor;
    for (int i = anchor + step; i >= 0 && i < n_fft; i += step) {
      if (!usable(h_ota, i)) continue;
      unwrapped[i] = unwrapped[prev] + wrap_angle(std::arg(h_ota.h[i]) - std::arg(h_ota.h[prev]));
      have[i] = true;
      prev = i;
    }
  }
  double sum = 0.0;
  int pairs = 0;
  for (int n = 1; n < half; ++n) {
    const int hi = half + n;
    const int lo = half - n;
    if (!have[hi] || !have[lo]) continue;
    sum += unwrapped[hi] + unwrapped[lo];
    ++pairs;
  }
  if (pairs == 0) throw Error("estimate_phi0: no symmetric carrier pairs");
  return wrap_angle(sum / (2.0 * pairs));
}

namespace {

double slope_delay(const FreqChannelEstimate& h, const PhyConfig& config) {
  cplx acc(0.0, 0.0);
  for (int i = 0; i + 1 < config.n_fft; ++i)
    if (h.valid[i] && h.valid[i + 1]) acc += std::conj(h.h[i]) * h.h[i + 1];
  if (acc == cplx(0.0, 0.0)) throw Error("estimate_tau0: no adjacent valid carriers");
  return config.n_fft / (kTwoPi * config.fs_hz) * std::arg(acc);
}

}  // namespace

double estimate_tau0(const FreqChannelEstimate& h_ota, const PhyConfig& config) {
  check_estimate(h_ota, config, "estimate_tau0");
  return slope_delay(h_ota, config);
}

double estimate_residual_cfo_sensor(const FreqChannelEstimate& h_dl_prev, const FreqChannelEstimate& h_dl_now,
                                    double dt_dl_s) {
  if (h_dl_prev.h.size() != h_dl_now.h.size()) throw Error("estimate_residual_cfo_sensor: length mismatch");
  if (!(dt_dl_s > 0.0)) throw Error("estimate_residual_cfo_sensor: dt_dl must be positive");
  cplx acc(0.0, 0.0);
  for (Eigen::Index i = 0; i < h_dl_now.h.size(); ++i)
    if (h_dl_prev.valid[i] && h_dl_now.valid[i]) acc += std::conj(h_dl_prev.h[i]) * h_dl_now.h[i];
  if (!std::isfinite(std::abs(acc))) throw Error("estimate_residual_cfo_sensor: non-finite estimate");
  return std::arg(acc) / (kTwoPi * dt_dl_s);
}

double update_phi(const PreEqState& state, double dt_dl_s, double dt_ul_s) {
  return wrap_angle(state.phi_hat - kTwoPi * std::remainder(state.dfr_hat * (dt_dl_s + dt_ul_s), 1.0));
}

double update_tau(const PreEqState& state, const FreqChannelEstimate& h_dl_prev, const FreqChannelEstimate& h_dl_now,
                  const PhyConfig& config) {
  check_estimate(h_dl_prev, config, "update_tau");
  check_estimate(h_dl_now, config, "update_tau");
  const double diff = (slope_delay(h_dl_now, config) - slope_delay(h_dl_prev, config)) * config.fs_hz;
  const double step = std::round(diff);
  if (std::abs(step) > 1.0) {
    std::ostringstream msg;
    msg << "sync loss: downlink timing moved by " << diff << " samples between rounds";
    throw SyncLoss(msg.str());
  }
  return state.tau_hat + step * config.ts();
}

PreEqualized pre_equalize(const OfdmSymbol& x, const PreEqState& state, const FreqChannelEstimate& h_dl_now,
                          const PhyConfig& config, double power_cap, bool compensate) {
  const int n_fft = config.n_fft;
  if (x.freq.size() != n_fft || h_dl_now.h.size() != n_fft) throw Error("pre_equalize: length mismatch");
  const double phi = compensate ? state.phi_hat : 0.0;
  const double tau = compensate ? state.tau_hat : 0.0;
  PreEqualized out{OfdmSymbol{cvec::Zero(n_fft), x.modulation}};
  double p_in = 0.0;
  double p_out = 0.0;
  for (int i = 0; i < n_fft; ++i) {
    if (x.freq[i] == cplx(0.0, 0.0)) continue;
    p_in += std::norm(x.freq[i]);
    const cplx h = h_dl_now.h[i];
    if (!h_dl_now.valid[i] || !(std::abs(h) >= kEqualizerFloor)) {
      ++out.floored_carriers;
      continue;
    }
    const double n = carrier_index(i, n_fft);
    const cplx rot = std::polar(1.0, phi + kTwoPi * n * config.fs_hz * tau / n_fft);
    out.symbol.freq[i] = x.freq[i] / (rot * h);
    p_out += std::norm(out.symbol.freq[i]);
  }
  out.power_gain = p_in > 0.0 ? p_out / p_in : 1.0;
  out.power_cap_exceeded = !(out.power_gain <= power_cap);
  return out;
}

// ---- handshake -------------------------------------------------------------

std::string to_string(EventKind kind) {
  switch (kind) {
    case EventKind::DlTrigger: return "DL_TRIGGER";
    case EventKind::UlPreEqAck: return "UL_PREEQ_ACK";
    case EventKind::DlOtaRequest: return "DL_OTA_REQUEST";
    case EventKind::UlOtaFrame: return "UL_OTA_FRAME";
    case EventKind::CtrlBroadcast: return "CTRL_BROADCAST";
  }
  return "?";
}

void HandshakeMachine::record(const ProtocolEvent& ev) {
  auto illegal = [&](const char* why) {
    throw Error("illegal handshake event " + to_string(ev.kind) + ": " + why);
  };
  if (ev.kind != EventKind::CtrlBroadcast && ev.sensor >= k_sensors_) illegal("unknown sensor");
  switch (ev.kind) {
    case EventKind::DlTrigger:
      triggered_ = true;
      acks_ = 0;
      requested_ = false;
      ota_done_ = false;
      break;
    case EventKind::UlPreEqAck:
      if (!triggered_ || requested_) illegal("no pending trigger");
      if (acks_ >= k_sensors_) illegal("more acknowledgements than sensors");
      ++acks_;
      break;
    case EventKind::CtrlBroadcast:
      if (!stage1_complete()) illegal("pre-equalization stage incomplete");
      if (ota_done_) illegal("estimates already delivered");
      break;
    case EventKind::DlOtaRequest:
      if (!stage1_complete()) illegal("pre-equalization stage incomplete");
      if (!ota_done_ && (log_.empty() || (log_.back().kind != EventKind::CtrlBroadcast)))
        illegal("first request must follow the control broadcast");
      requested_ = true;
      ul_frames_ = 0;
      break;
    case EventKind::UlOtaFrame:
      if (!requested_) illegal("no pending request");
      if (ul_frames_ >= k_sensors_) illegal("more frames than sensors");
      if (++ul_frames_ == k_sensors_) ota_done_ = true;
      break;
  }
  log_.push_back(ev);
}

void ProtocolConfig::validate() const {
  if (k_sensors < 1) throw ConfigError("protocol.k_sensors must be >= 1");
  if (std::isnan(snr_db)) throw ConfigError("protocol.snr_db is NaN");
  if (!(turnaround_s >= 0.0) || !(round_gap_s >= 0.0)) throw ConfigError("protocol gaps must be non-negative");
  if (!(power_cap >= 1.0)) throw ConfigError("protocol.power_cap must be >= 1");
  if (max_timing_error < 0) throw ConfigError("protocol.max_timing_error must be >= 0");
  if (!(validity_limit > 0.0)) throw ConfigError("protocol.validity_limit must be positive");
}

OtaTruth ota_truth(const SensorLinkState& link, double residual_cfo_hz, double t_dl_s, double t_ul_s) {
  return {wrap_angle(-kTwoPi * std::remainder(residual_cfo_hz * (t_dl_s + t_ul_s), 1.0)),
          link.to_ul_s - link.to_dl_s};
}

// ---- session ---------------------------------------------------------------

class OtaSession::RoundFailure : public Error {
 public:
  using Error::Error;
};

namespace {

SampleStream symbols_stream(const std::vector<OfdmSymbol>& syms, const PhyConfig& config, double t0) {
  const int len = config.symbol_len();
  SampleStream out{cvec::Zero(static_cast<Eigen::Index>(syms.size()) * len), t0};
  for (size_t s = 0; s < syms.size(); ++s)
    out.samples.segment(static_cast<Eigen::Index>(s) * len, len) = ofdm_modulate(syms[s], config).samples;
  return out;
}

OfdmSymbol zero_symbol(const PhyConfig& config) { return OfdmSymbol{cvec::Zero(config.n_fft), Modulation::Raw}; }

}  // namespace

OtaSession::OtaSession(PhyConfig phy, ProtocolConfig proto, std::vector<SensorLinkState> links, uint64_t seed)
    : phy_(std::move(phy)),
      proto_(std::move(proto)),
      ft_(gen_ft(phy_, phy_.ft_seed)),
      rng_(seed),
      machine_(static_cast<int>(links.size())) {
  phy_.validate();
  proto_.validate();
  if (static_cast<int>(links.size()) != proto_.k_sensors)
    throw ConfigError("OtaSession: link count differs from protocol.k_sensors");
  for (auto& l : links) {
    l.profile.validate(phy_);
    sensors_.push_back(Sensor{std::move(l), {}, {}});
  }
  plan_ = make_pilot_plan(phy_, proto_.k_sensors, phy_.pilot_seed);
  ap_phi0_.assign(sensors_.size(), 0.0);
  ap_tau0_.assign(sensors_.size(), 0.0);
}

int64_t OtaSession::samples(double seconds) const { return std::llround(seconds * phy_.fs_hz); }

double OtaSession::noise_var() const {
  if (std::isinf(proto_.snr_db) && proto_.snr_db > 0.0) return 0.0;
  return (1.0 / phy_.n_fft) / std::pow(10.0, proto_.snr_db / 10.0);
}

OtaSession::Received OtaSession::receive(const std::vector<std::pair<SampleStream, const SensorLinkState*>>& txs,
                                         Direction dir, int64_t start, int64_t length) {
  const int64_t margin = 2 * phy_.cp_len;
  Received rx;
  rx.origin = start - margin;
  const int64_t total = length + 2 * margin;
  rx.buf = SampleStream{cvec::Zero(total), static_cast<double>(rx.origin) * phy_.ts()};
  for (const auto& [tx, link] : txs) {
    const SampleStream y = propagate(tx, *link, dir, phy_);
    const int64_t first = std::llround(y.t0_s * phy_.fs_hz) - rx.origin;
    for (Eigen::Index m = 0; m < y.size(); ++m) {
      const int64_t g = first + m;
      if (g >= 0 && g < total) rx.buf.samples[g] += y.samples[m];
    }
  }
  add_noise(rx.buf, noise_var(), rng_);
  return rx;
}

void OtaSession::gate(const Received& rx, int64_t frame_start, const char* what) const {
  const int64_t w = proto_.max_timing_error;
  const int64_t begin = std::max<int64_t>(0, frame_start - w - rx.origin);
  const int64_t len = std::min<int64_t>(phy_.m_ft + 2 * w, rx.buf.size() - begin);
  const SampleStream win{rx.buf.samples.segment(begin, len), 0.0};
  const TimingDecision d = detect_frame(win, ft_, phy_);
  const int64_t m0 = rx.origin + begin + d.m0;
  if (!d.valid || std::abs(m0 - frame_start) > w) {
    std::ostringstream msg;
    msg << what << " frame detection failed (peak " << d.peak << ", offset " << (m0 - frame_start) << ")";
    throw RoundFailure(msg.str());
  }
}

SampleStream OtaSession::ap_digital_frame(int64_t start) const {
  const int k = proto_.k_sensors;
  const FrameLayout layout = digital_frame_layout(phy_, k, 0);
  const double t0 = static_cast<double>(start) * phy_.ts();
  SampleStream frame = assemble_frame(
      layout, {{"ft", ft_waveform(ft_, phy_.ft_amp)},
               {"cfo", gen_cfo_subframe(phy_, phy_.m_cfo_frame, phy_.cfo_pilot_amp)},
               {"pilots", symbols_stream(plan_.pilot_symbols, phy_, 0.0)}});
  frame.t0_s = t0;
  return frame;
}

OtaSession::DlResult OtaSession::sensor_receive_dl(int k, int64_t frame_start, const FrameLayout& layout) {
  Sensor& s = sensors_[k];
  const SampleStream tx = ap_digital_frame(frame_start);
  Received rx = receive({{tx, &s.link}}, Direction::DL, frame_start, layout.total_length());
  rx.buf = apply_cfo(rx.buf, -s.cfo.coarse_hz, phy_);
  gate(rx, frame_start, "downlink");
  const Section& pilots = layout.section("pilots");
  std::vector<FreqChannelEstimate> ests;
  DlResult out;
  for (int j = 0; j < proto_.k_sensors; ++j) {
    const int64_t sym_start = frame_start + pilots.offset + static_cast<int64_t>(j) * phy_.symbol_len();
    const OfdmSymbol r = ofdm_demodulate(rx.buf, phy_, sym_start - rx.origin, phy_.cp_backoff);
    if (j == 0) out.first_pilot = r;
    ests.push_back(ls_channel_estimate(r, plan_.pilot_symbols[j], static_cast<double>(sym_start) * phy_.ts(), phy_,
                                       ChannelKind::DL));
  }
  out.h = average_estimates(ests);
  out.t = out.h.t_est_s;
  return out;
}

SampleStream OtaSession::sensor_tx(int k, const SampleStream& frame) const {
  return apply_cfo(frame, sensors_[k].cfo.coarse_hz, phy_);
}

void OtaSession::initialize() {
  const int k_count = proto_.k_sensors;
  for (int attempt = 0;; ++attempt) {
    try {
      // Initialization preamble: coarse CFO per sensor.
      const FrameLayout pre = init_preamble_layout(phy_);
      const int64_t pre_start = now_;
      SampleStream pre_tx = assemble_frame(
          pre, {{"ft", ft_waveform(ft_, phy_.ft_amp)},
                {"cfo", gen_cfo_subframe(phy_, pre.section("cfo").length, phy_.cfo_pilot_amp)}});
      pre_tx.t0_s = static_cast<double>(pre_start) * phy_.ts();
      machine_.record({EventKind::DlTrigger, round_, -1, pre_tx.t0_s, {}});
      for (int k = 0; k < k_count; ++k) {
        Sensor& s = sensors_[k];
        const Received rx = receive({{pre_tx, &s.link}}, Direction::DL, pre_start, pre.total_length());
        gate(rx, pre_start, "preamble");
        const Section& cfo = pre.section("cfo");
        const SampleStream seg{rx.buf.samples.segment(pre_start + cfo.offset - rx.origin, cfo.length), 0.0};
        s.cfo = CfoEstimate{};
        s.cfo.coarse_hz = coarse_cfo_estimate(seg, phy_);
      }
      now_ = pre_start + pre.total_length() + samples(proto_.round_gap_s);

      // Pre-equalization stage, downlink.
      const FrameLayout dl = digital_frame_layout(phy_, k_count, 0);
      const int64_t dl_start = now_;
      std::vector<DlResult> dl_res;
      for (int k = 0; k < k_count; ++k) dl_res.push_back(sensor_receive_dl(k, dl_start, dl));
      const int64_t ul_start = dl_start + dl.total_length() + samples(proto_.turnaround_s);

      // Uplink: each sensor fills its own pilot slot, pre-equalized by the downlink channel.
      const FrameLayout ul = digital_frame_layout(phy_, k_count, 0);
      const Section& pilots = ul.section("pilots");
      std::vector<std::pair<SampleStream, const SensorLinkState*>> txs;
      std::vector<double> t_ul(k_count);
      for (int k = 0; k < k_count; ++k) {
        std::vector<OfdmSymbol> slots(k_count, zero_symbol(phy_));
        const int slot = plan_.slot_of(k);
        PreEqualized pe = pre_equalize(plan_.pilot_symbols[slot], PreEqState{}, dl_res[k].h, phy_, proto_.power_cap,
                                       false);
        if (pe.power_cap_exceeded) throw RoundFailure("stage-one pilot exceeds the power cap");
        slots[slot] = pe.symbol;
        SampleStream frame = assemble_frame(
            ul, {{"ft", ft_waveform(ft_, phy_.ft_amp)},
                 {"cfo", gen_cfo_subframe(phy_, phy_.m_cfo_frame, phy_.cfo_pilot_amp)},
                 {"pilots", symbols_stream(slots, phy_, 0.0)}});
        frame.t0_s = static_cast<double>(ul_start) * phy_.ts();
        t_ul[k] = static_cast<double>(ul_start + pilots.offset + static_cast<int64_t>(slot) * phy_.symbol_len()) *
                  phy_.ts();
        txs.emplace_back(sensor_tx(k, frame), &sensors_[k].link);
      }
      const Received rx = receive(txs, Direction::UL, ul_start, ul.total_length());
      if (proto_.ul_detection_gate) gate(rx, ul_start, "uplink");
      for (int k = 0; k < k_count; ++k) {
        const int slot = plan_.slot_of(k);
        const int64_t sym_start = ul_start + pilots.offset + static_cast<int64_t>(slot) * phy_.symbol_len();
        const OfdmSymbol r = ofdm_demodulate(rx.buf, phy_, sym_start - rx.origin, phy_.cp_backoff);
        const FreqChannelEstimate h_ota =
            ls_channel_estimate(r, plan_.pilot_symbols[slot], t_ul[k], phy_, ChannelKind::OTA);
        ap_phi0_[k] = estimate_phi0(h_ota, phy_);
        ap_tau0_[k] = estimate_tau0(h_ota, phy_);
      }

      // Commit.
      for (int k = 0; k < k_count; ++k) {
        Sensor& s = sensors_[k];
        s.cfo = track_residual_cfo(s.cfo, dl_res[k].first_pilot, dl_res[k].t, phy_);
        s.pre = PreEqState{};
        s.pre.h_dl_prev = dl_res[k].h;
        s.pre.t_dl_prev = dl_res[k].t;
        s.pre.t_ul_prev = t_ul[k];
        s.t_dl0 = dl_res[k].t;
        s.t_ul0 = t_ul[k];
        s.link.clock_s = t_ul[k];
        machine_.record({EventKind::UlPreEqAck, round_, k, t_ul[k], {}});
      }
      now_ = ul_start + ul.total_length() + samples(proto_.round_gap_s);
      ctrl_pending_ = true;
      initialized_ = true;
      return;
    } catch (const RoundFailure& e) {
      now_ += samples(proto_.round_gap_s);
      if (attempt >= 1) throw ProtocolAbort(std::string("initialization failed twice: ") + e.what());
    }
  }
}

RoundResult OtaSession::aggregate(const std::vector<std::vector<vec>>& payloads) {
  if (!initialized_) throw Error("OtaSession::aggregate called before initialize");
  if (static_cast<int>(payloads.size()) != proto_.k_sensors) throw Error("aggregate: one payload per sensor");
  const size_t n_sym = payloads.front().size();
  for (const auto& p : payloads)
    if (p.size() != n_sym) throw Error("aggregate: sensors must send the same number of symbols");
  std::vector<std::string> causes;
  for (int attempt = 1;; ++attempt) {
    try {
      RoundResult res = attempt_round(payloads);
      res.attempts = attempt;
      res.flags.insert(res.flags.begin(), causes.begin(), causes.end());
      return res;
    } catch (const RoundFailure& e) {
      causes.push_back(std::string("retry: ") + e.what());
      now_ += samples(proto_.round_gap_s);
      if (attempt >= 2) throw ProtocolAbort("round " + std::to_string(round_ + 1) + " failed twice: " + e.what());
    } catch (const SyncLoss& e) {
      causes.push_back(std::string("retry: ") + e.what());
      now_ += samples(proto_.round_gap_s);
      if (attempt >= 2) throw ProtocolAbort("round " + std::to_string(round_ + 1) + " failed twice: " + e.what());
    }
  }
}

RoundResult OtaSession::attempt_round(const std::vector<std::vector<vec>>& payloads) {
  const int k_count = proto_.k_sensors;
  const int n_data = static_cast<int>(payloads.front().size());
  const int round = round_ + 1;
  RoundResult res;
  res.round = round;

  const FrameLayout dl = digital_frame_layout(phy_, k_count, 0);
  const int64_t dl_start = now_;
  const double dl_t0 = static_cast<double>(dl_start) * phy_.ts();
  now_ = dl_start + dl.total_length();
  if (ctrl_pending_) {
    std::vector<double> payload;
    for (int k = 0; k < k_count; ++k) payload.insert(payload.end(), {ap_phi0_[k], ap_tau0_[k]});
    machine_.record({EventKind::CtrlBroadcast, round, -1, dl_t0, payload});
  }
  machine_.record({EventKind::DlOtaRequest, round, -1, dl_t0, {}});

  const FrameLayout ul = ota_frame_layout(phy_, n_data);
  const int64_t ul_start = dl_start + dl.total_length() + samples(proto_.turnaround_s);
  const Section& data_sec = ul.section("data");
  const Section& pilot_sec = ul.section("pilots");
  const double t_ul = static_cast<double>(ul_start + data_sec.offset) * phy_.ts();
  const int frame_symbols = 1 + n_data;

  std::vector<Sensor> next(sensors_.begin(), sensors_.end());
  std::vector<std::pair<SampleStream, const SensorLinkState*>> txs;
  bool recorrect = false;
  for (int k = 0; k < k_count; ++k) {
    Sensor& s = next[k];
    if (ctrl_pending_) {
      s.pre.phi_hat = ap_phi0_[k];
      s.pre.tau_hat = ap_tau0_[k];
    }
    const DlResult d = sensor_receive_dl(k, dl_start, dl);
    const double dt_dl = d.t - s.pre.t_dl_prev;
    const double dt_ul = t_ul - s.pre.t_ul_prev;
    s.cfo = track_residual_cfo(s.cfo, d.first_pilot, d.t, phy_);
    if (needs_recorrection(s.cfo, dt_dl)) recorrect = true;
    PreEqState& pre = s.pre;
    pre.dfr_hat = estimate_residual_cfo_sensor(pre.h_dl_prev, d.h, dt_dl);
    pre.phi_hat = update_phi(pre, dt_dl, dt_ul);
    pre.tau_hat = update_tau(pre, pre.h_dl_prev, d.h, phy_);
    pre.h_dl_prev = d.h;
    pre.t_dl_prev = d.t;
    pre.t_ul_prev = t_ul;
    pre.round_i = round;
    s.link.clock_s = t_ul;

    const double drift = frame_symbols * phy_.n_fft * std::abs(s.cfo.residual_hz) * phy_.ts();
    if (drift >= proto_.validity_limit) {
      std::ostringstream msg;
      msg << "sensor " << k << ": residual CFO " << s.cfo.residual_hz << " Hz breaks the static-channel assumption";
      res.flags.push_back(msg.str());
    }

    std::vector<OfdmSymbol> data_syms;
    double gain = 0.0;
    int floored = 0;
    auto pre_eq = [&](const OfdmSymbol& x) {
      PreEqualized pe = pre_equalize(x, pre, d.h, phy_, proto_.power_cap, proto_.compensation);
      if (pe.power_cap_exceeded) throw RoundFailure("sensor " + std::to_string(k) + " exceeds the power cap");
      gain = std::max(gain, pe.power_gain);
      floored += pe.floored_carriers;
      return pe.symbol;
    };
    const OfdmSymbol pilot = pre_eq(plan_.common);
    for (const vec& v : payloads[k]) data_syms.push_back(pre_eq(map_pam(v, phy_)));
    SampleStream frame = assemble_frame(ul, {{"ft", ft_waveform(ft_, phy_.ft_amp)},
                                             {"pilots", ofdm_modulate(pilot, phy_)},
                                             {"data", symbols_stream(data_syms, phy_, 0.0)}});
    frame.t0_s = static_cast<double>(ul_start) * phy_.ts();
    txs.emplace_back(sensor_tx(k, frame), &sensors_[k].link);

    SensorRoundTrace tr;
    tr.phi_hat = pre.phi_hat;
    tr.tau_hat = pre.tau_hat;
    tr.dfr_hat = pre.dfr_hat;
    tr.dfr_mean = s.cfo.residual_hz;
    tr.dt_dl = dt_dl;
    tr.dt_ul = dt_ul;
    tr.t_dl = d.t;
    tr.t_ul = t_ul;
    tr.power_gain = gain;
    tr.floored = floored;
    res.sensors.push_back(tr);
  }
  if (recorrect) {
    // Residual phase steps are no longer unambiguous: redo the whole initialization.
    res.flags.push_back("residual CFO re-correction");
    initialize();
    return attempt_round(payloads);
  }

  const Received rx = receive(txs, Direction::UL, ul_start, ul.total_length());
  now_ = ul_start + ul.total_length() + samples(proto_.round_gap_s);
  if (proto_.ul_detection_gate) gate(rx, ul_start, "uplink");

  const OfdmSymbol rp = ofdm_demodulate(rx.buf, phy_, ul_start + pilot_sec.offset - rx.origin, phy_.cp_backoff);
  double g = 0.0;
  const std::vector<int> used = phy_.used_carriers();
  for (int n : used) {
    const int i = carrier_pos(n, phy_.n_fft);
    g += (rp.freq[i] / plan_.common.freq[i]).real();
  }
  res.pilot_gain = g / (static_cast<double>(used.size()) * k_count);
  for (int j = 0; j < n_data; ++j) {
    const int64_t start = ul_start + data_sec.offset + static_cast<int64_t>(j) * phy_.symbol_len();
    res.aggregate.push_back(demap_pam(ofdm_demodulate(rx.buf, phy_, start - rx.origin, phy_.cp_backoff), phy_));
  }
  res.t_s = t_ul;

  for (int k = 0; k < k_count; ++k) machine_.record({EventKind::UlOtaFrame, round, k, t_ul, {}});
  sensors_ = std::move(next);
  ctrl_pending_ = false;
  round_ = round;
  return res;
}

std::vector<RoundResult> run_handshake(const std::vector<SensorLinkState>& sensors, const PhyConfig& config,
                                       const ProtocolConfig& proto, int rounds, const PayloadSource& payload_source,
                                       uint64_t seed) {
  OtaSession session(config, proto, sensors, seed);
  session.initialize();
  std::vector<RoundResult> out;
  out.reserve(static_cast<size_t>(std::max(rounds, 0)));
  for (int r = 1; r <= rounds; ++r) out.push_back(session.aggregate(payload_source(r)));
  return out;
}

}  // namespace airfed
