#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "airfed/channel.hpp"
#include "airfed/framing.hpp"
#include "airfed/ofdm.hpp"
#include "airfed/sync.hpp"

namespace airfed {

/// A sensor's pre-equalization parameters for the current OTA round.
struct PreEqState {
  double phi_hat = 0.0;   // phase error, radians in (-pi, pi]
  double tau_hat = 0.0;   // timing-offset difference, seconds
  double dfr_hat = 0.0;   // residual CFO from consecutive downlink channels, Hz
  FreqChannelEstimate h_dl_prev;
  double t_dl_prev = 0.0;
  double t_ul_prev = 0.0;
  int round_i = 0;
};

// ---- estimators ------------------------------------------------------------

/// Intercept of the OTA channel phase response: the per-carrier phase is
/// unwrapped outward from the carrier closest to DC and angle(h[-n]) + angle(h[n])
/// is averaged over the pairs n = 1 .. N/2 - 1 where both carriers are valid.
double estimate_phi0(const FreqChannelEstimate& h_ota, const PhyConfig& config);

/// N / (2 pi fs) * angle(sum_n conj(h[n]) h[n + 1]), seconds.
double estimate_tau0(const FreqChannelEstimate& h_ota, const PhyConfig& config);

/// angle(sum_n conj(h_prev[n]) h_now[n]) / (2 pi dt_dl), Hz.
double estimate_residual_cfo_sensor(const FreqChannelEstimate& h_dl_prev, const FreqChannelEstimate& h_dl_now,
                                    double dt_dl_s);

/// phi_hat - 2 pi dfr_hat (dt_dl + dt_ul), reduced to (-pi, pi].
double update_phi(const PreEqState& state, double dt_dl_s, double dt_ul_s);

/// Thrown by update_tau when consecutive downlink channels differ by more than one sample.
class SyncLoss : public Error {
 public:
  using Error::Error;
};

/// tau_hat plus the whole-sample change in slope delay between two downlink channels.
double update_tau(const PreEqState& state, const FreqChannelEstimate& h_dl_prev,
                  const FreqChannelEstimate& h_dl_now, const PhyConfig& config);

struct PreEqualized {
  OfdmSymbol symbol;
  double power_gain = 1.0;      // mean |x_e|^2 / mean |x|^2 over active carriers
  int floored_carriers = 0;     // carriers zeroed because |h| < kEqualizerFloor
  bool power_cap_exceeded = false;
};

/// x_e[n] = x[n] / (exp(j (phi_hat + 2 pi n fs tau_hat / N)) h_dl[n]).
/// With compensate = false only the downlink channel is inverted.
PreEqualized pre_equalize(const OfdmSymbol& x, const PreEqState& state, const FreqChannelEstimate& h_dl_now,
                          const PhyConfig& config, double power_cap = 10.0, bool compensate = true);

// ---- handshake -------------------------------------------------------------

enum class EventKind { DlTrigger, UlPreEqAck, DlOtaRequest, UlOtaFrame, CtrlBroadcast };
std::string to_string(EventKind kind);

struct ProtocolEvent {
  EventKind kind = EventKind::DlTrigger;
  int round = 0;
  int sensor = -1;  // -1 for broadcasts
  double t_s = 0.0;
  std::vector<double> payload;  // CtrlBroadcast: phi_0, tau_0 per sensor
};

/// Enforces the two-stage event order: DlTrigger, UlPreEqAck..., then rounds of
/// [CtrlBroadcast] DlOtaRequest UlOtaFrame... A DlTrigger restarts the handshake.
class HandshakeMachine {
 public:
  explicit HandshakeMachine(int k_sensors) : k_sensors_(k_sensors) {}
  /// Throws Error on an illegal transition.
  void record(const ProtocolEvent& ev);
  const std::vector<ProtocolEvent>& log() const { return log_; }
  bool stage1_complete() const { return acks_ == k_sensors_; }

 private:
  int k_sensors_;
  int acks_ = 0;
  int ul_frames_ = 0;
  bool triggered_ = false;
  bool requested_ = false;
  bool ota_done_ = false;
  std::vector<ProtocolEvent> log_;
};

struct ProtocolConfig {
  int k_sensors = 2;
  double snr_db = 20.0;          // per-link SNR against a unit-carrier OFDM symbol; +inf: noiseless
  bool compensation = true;      // phase and timing pre-compensation
  double turnaround_s = 0.5e-3;  // sensor: end of downlink frame to uplink frame
  double round_gap_s = 0.5e-3;   // access point: end of uplink frame to next downlink frame
  double power_cap = 10.0;       // allowed mean power amplification of pre-equalized symbols
  int max_timing_error = 16;     // detection gate: |m0 - nominal| in samples
  bool ul_detection_gate = false; // FT detector on the summed uplink frames at the access point
  double validity_limit = 0.01;  // kappa N |dfr| Ts above this emits a warning

  void validate() const;
};

struct SensorRoundTrace {
  double phi_hat = 0.0;
  double tau_hat = 0.0;
  double dfr_hat = 0.0;
  double dfr_mean = 0.0;
  double dt_dl = 0.0;
  double dt_ul = 0.0;
  double t_dl = 0.0;
  double t_ul = 0.0;
  double power_gain = 1.0;
  int floored = 0;
};

struct RoundResult {
  int round = 0;
  int attempts = 0;
  std::vector<vec> aggregate;           // demapped PAM per data symbol
  std::vector<SensorRoundTrace> sensors;
  std::vector<std::string> flags;       // warnings and retry causes
  double pilot_gain = 0.0;              // mean Re(r / p) over the common pilot, divided by K
  double t_s = 0.0;
};

/// One access point and K sensors sharing a simulated air interface.
///
/// Time advances in whole samples. Every receiver anchors its FFT windows on
/// the scheduled frame position; the FT detector gates each frame and a
/// detection outside max_timing_error counts as a failed frame.
class OtaSession {
 public:
  OtaSession(PhyConfig phy, ProtocolConfig proto, std::vector<SensorLinkState> links, uint64_t seed);

  /// Initialization preamble (coarse CFO) followed by the pre-equalization stage.
  void initialize();

  /// One OTA aggregation round. payloads[k] holds sensor k's PAM vectors, one
  /// per data symbol, each of used_count() values in [-1, 1]. Retries once on a
  /// failed round, then throws ProtocolAbort.
  RoundResult aggregate(const std::vector<std::vector<vec>>& payloads);

  const PhyConfig& phy() const { return phy_; }
  const ProtocolConfig& config() const { return proto_; }
  int k_sensors() const { return static_cast<int>(sensors_.size()); }
  const SensorLinkState& link(int k) const { return sensors_[k].link; }
  const CfoEstimate& cfo_state(int k) const { return sensors_[k].cfo; }
  const PreEqState& preeq_state(int k) const { return sensors_[k].pre; }
  /// Stage-one estimates held by the access point.
  double ap_phi0(int k) const { return ap_phi0_[k]; }
  double ap_tau0(int k) const { return ap_tau0_[k]; }
  /// Stage-one timestamps recorded by sensor k.
  double stage1_t_dl(int k) const { return sensors_[k].t_dl0; }
  double stage1_t_ul(int k) const { return sensors_[k].t_ul0; }
  const std::vector<ProtocolEvent>& events() const { return machine_.log(); }
  double now_s() const { return static_cast<double>(now_) * phy_.ts(); }
  int rounds_completed() const { return round_; }

 private:
  struct Sensor {
    SensorLinkState link;
    CfoEstimate cfo;
    PreEqState pre;
    double t_dl0 = 0.0;
    double t_ul0 = 0.0;
  };
  struct Received {
    SampleStream buf;
    int64_t origin = 0;  // global sample index of buf.samples[0]
  };
  struct DlResult {
    FreqChannelEstimate h;
    OfdmSymbol first_pilot;
    double t = 0.0;
  };
  class RoundFailure;

  double noise_var() const;
  SampleStream ap_digital_frame(int64_t start) const;
  Received receive(const std::vector<std::pair<SampleStream, const SensorLinkState*>>& txs, Direction dir,
                   int64_t start, int64_t length);
  void gate(const Received& rx, int64_t frame_start, const char* what) const;
  DlResult sensor_receive_dl(int k, int64_t frame_start, const FrameLayout& layout);
  SampleStream sensor_tx(int k, const SampleStream& frame) const;
  int64_t samples(double seconds) const;
  RoundResult attempt_round(const std::vector<std::vector<vec>>& payloads);

  PhyConfig phy_;
  ProtocolConfig proto_;
  std::vector<Sensor> sensors_;
  std::vector<double> ap_phi0_;
  std::vector<double> ap_tau0_;
  FtSequence ft_;
  PilotPlan plan_;
  std::mt19937_64 rng_;
  HandshakeMachine machine_;
  int64_t now_ = 0;
  int round_ = 0;
  bool ctrl_pending_ = false;
  bool initialized_ = false;
};

using PayloadSource = std::function<std::vector<std::vector<vec>>(int round)>;

/// Run initialize() and `rounds` aggregation rounds.
std::vector<RoundResult> run_handshake(const std::vector<SensorLinkState>& sensors, const PhyConfig& config,
                                       const ProtocolConfig& proto, int rounds, const PayloadSource& payload_source,
                                       uint64_t seed);

/// Ground-truth OTA channel parameters of a link at the given stamps:
/// phi = -2 pi dfr (t_dl + t_ul), tau = TO_UL - TO_DL.
struct OtaTruth {
  double phi = 0.0;
  double tau = 0.0;
};
OtaTruth ota_truth(const SensorLinkState& link, double residual_cfo_hz, double t_dl_s, double t_ul_s);

}  // namespace airfed
