#include <cmath>

#include "airfed/protocol.hpp"
#include "support.hpp"

using namespace airfed;
using airfed::test::max_abs_diff;
using airfed::test::random_cvec;

namespace {

FreqChannelEstimate ramp(const PhyConfig& cfg, double phi, double tau_s) {
  FreqChannelEstimate h{cvec(cfg.n_fft), Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(cfg.n_fft, true)};
  for (int i = 0; i < cfg.n_fft; ++i)
    h.h[i] = std::polar(1.0, phi + kTwoPi * carrier_index(i, cfg.n_fft) * cfg.fs_hz * tau_s / cfg.n_fft);
  return h;
}

double angle_diff(double a, double b) { return std::abs(std::remainder(a - b, kTwoPi)); }

/// OTA channel seen by the AP in stage one: uplink channel divided by the sensor's downlink estimate.
FreqChannelEstimate stage_one_ota(const SensorLinkState& l, double dfr, double t_dl, double t_ul, const PhyConfig& cfg) {
  const auto dl = effective_channel_oracle(l, Direction::DL, t_dl, dfr, cfg);
  auto ul = effective_channel_oracle(l, Direction::UL, t_ul, dfr, cfg);
  ul.h = ul.h.cwiseQuotient(dl.h);
  ul.kind = ChannelKind::OTA;
  return ul;
}

std::vector<vec> random_payload(int symbols, int used, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<vec> out;
  for (int s = 0; s < symbols; ++s) {
    vec v(used);
    for (auto& x : v) x = u(rng);
    out.push_back(v);
  }
  return out;
}

}  // namespace

TEST_SUITE("ota_protocol") {
  TEST_CASE("phi0 of flat and sloped channels") {
    PhyConfig cfg;
    CHECK(estimate_phi0(ramp(cfg, 0.0, 0.0), cfg) == doctest::Approx(0.0));
    CHECK(estimate_phi0(ramp(cfg, 1.1, 0.0), cfg) == doctest::Approx(1.1).epsilon(1e-12));
    for (double tau : {1.0, -3.0, 7.5, 12.0})
      CHECK(angle_diff(estimate_phi0(ramp(cfg, -2.9, tau * cfg.ts()), cfg), -2.9) < 1e-9);
  }

  TEST_CASE("tau0 of flat and sloped channels") {
    PhyConfig cfg;
    CHECK(estimate_tau0(ramp(cfg, 0.0, 0.0), cfg) == doctest::Approx(0.0));
    CHECK(std::abs(estimate_tau0(ramp(cfg, 0.0, 1.5 * cfg.ts()), cfg) - 1.5 * cfg.ts()) < 1e-9 * cfg.ts());
    CHECK(estimate_tau0(ramp(cfg, 2.2, -4.0 * cfg.ts()), cfg) ==
          doctest::Approx(estimate_tau0(ramp(cfg, 0.0, -4.0 * cfg.ts()), cfg)).epsilon(1e-12));
  }

  TEST_CASE("sensor-side residual CFO from two downlink channels") {
    PhyConfig cfg;
    std::mt19937_64 rng(1);
    FreqChannelEstimate a{random_cvec(cfg.n_fft, rng), Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(cfg.n_fft, true)};
    CHECK(estimate_residual_cfo_sensor(a, a, 1e-3) == 0.0);
    FreqChannelEstimate b = a;
    const double dt = 1.3e-3;
    b.h *= std::polar(1.0, kTwoPi * 50.0 * dt);
    CHECK(std::abs(estimate_residual_cfo_sensor(a, b, dt) - 50.0) < 1e-9);
    CHECK_THROWS(estimate_residual_cfo_sensor(a, b, 0.0));
  }

  TEST_CASE("residual CFO estimator is unbiased at 20 dB") {
    PhyConfig cfg;
    std::mt19937_64 rng(2);
    const FreqChannelEstimate h{random_cvec(cfg.n_fft, rng, std::sqrt(0.5)),
                                Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(cfg.n_fft, true)};
    const double dfr = 40.0, dt = 1e-3, sigma = std::sqrt(0.01 / 2.0);
    std::vector<double> est;
    for (int t = 0; t < 1000; ++t) {
      FreqChannelEstimate a = h, b = h;
      b.h *= std::polar(1.0, kTwoPi * dfr * dt);
      a.h += random_cvec(cfg.n_fft, rng, sigma);
      b.h += random_cvec(cfg.n_fft, rng, sigma);
      est.push_back(estimate_residual_cfo_sensor(a, b, dt));
    }
    double mean = 0.0, var = 0.0;
    for (double e : est) mean += e;
    mean /= est.size();
    for (double e : est) var += (e - mean) * (e - mean);
    const double se = std::sqrt(var / (est.size() - 1) / est.size());
    CHECK(std::abs(mean - dfr) < 3.0 * se);
  }

  TEST_CASE("phase update arithmetic") {
    PreEqState s;
    s.phi_hat = 0.3;
    CHECK(update_phi(s, 0.4e-3, 0.6e-3) == 0.3);
    s.dfr_hat = 100.0;
    CHECK(update_phi(s, 0.4e-3, 0.6e-3) == doctest::Approx(0.3 - 0.2 * kPi).epsilon(1e-12));
    PreEqState twice = s;
    twice.phi_hat = update_phi(s, 0.4e-3, 0.6e-3);
    CHECK(angle_diff(update_phi(twice, 0.7e-3, 0.5e-3), update_phi(s, 1.1e-3, 1.1e-3)) < 1e-12);
  }

  TEST_CASE("timing update rounds the slope-delay change") {
    PhyConfig cfg;
    PreEqState s;
    s.tau_hat = 2.0 * cfg.ts();
    const auto h0 = ramp(cfg, 0.4, 1.0 * cfg.ts());
    CHECK(update_tau(s, h0, h0, cfg) == s.tau_hat);
    CHECK(update_tau(s, h0, ramp(cfg, 0.4, 2.0 * cfg.ts()), cfg) == doctest::Approx(3.0 * cfg.ts()).epsilon(1e-12));
    CHECK(update_tau(s, h0, ramp(cfg, 0.4, 0.0), cfg) == doctest::Approx(1.0 * cfg.ts()).epsilon(1e-12));
    CHECK(update_tau(s, h0, ramp(cfg, 0.4, 1.4 * cfg.ts()), cfg) == s.tau_hat);
    CHECK_THROWS_AS(update_tau(s, h0, ramp(cfg, 0.4, 3.0 * cfg.ts()), cfg), SyncLoss);
  }

  TEST_CASE("pre-equalization identity") {
    PhyConfig cfg;
    std::mt19937_64 rng(3);
    const OfdmSymbol x{random_cvec(cfg.n_fft, rng)};
    const PreEqualized p = pre_equalize(x, PreEqState{}, ramp(cfg, 0.0, 0.0), cfg);
    CHECK(max_abs_diff(p.symbol.freq, x.freq) < 1e-15);
    CHECK(p.power_gain == doctest::Approx(1.0));
    CHECK_FALSE(p.power_cap_exceeded);
  }

  TEST_CASE("perfect estimates cancel the uplink channel exactly") {
    PhyConfig cfg;
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 10; ++trial) {
      const SensorLinkState l = draw_link(cfg, ChannelConfig{}, rng);
      const double dfr = std::uniform_real_distribution<double>(-20.0, 20.0)(rng);
      const double t_dl = 3.1e-3 + trial * 1e-3, t_ul = t_dl + 0.7e-3;
      const OtaTruth truth = ota_truth(l, dfr, t_dl, t_ul);
      PreEqState s;
      s.phi_hat = truth.phi;
      s.tau_hat = truth.tau;
      const auto h_dl = effective_channel_oracle(l, Direction::DL, t_dl, dfr, cfg);
      const auto h_ul = effective_channel_oracle(l, Direction::UL, t_ul, dfr, cfg);
      const OfdmSymbol x{random_cvec(cfg.n_fft, rng)};
      const PreEqualized p = pre_equalize(x, s, h_dl, cfg, 1e9);
      CHECK(max_abs_diff(p.symbol.freq.cwiseProduct(h_ul.h), x.freq) < 1e-12);
    }
  }

  TEST_CASE("stage-one estimators recover the ground truth") {
    PhyConfig cfg;
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      const SensorLinkState l = draw_link(cfg, ChannelConfig{}, rng);
      const double dfr = std::uniform_real_distribution<double>(-20.0, 20.0)(rng);
      const double t_dl = 1e-3 * (1 + trial), t_ul = t_dl + 0.9e-3;
      const OtaTruth truth = ota_truth(l, dfr, t_dl, t_ul);
      const auto h = stage_one_ota(l, dfr, t_dl, t_ul, cfg);
      CHECK(angle_diff(estimate_phi0(h, cfg), truth.phi) < 1e-9);
      CHECK(std::abs(estimate_tau0(h, cfg) - truth.tau) < 1e-9 * cfg.ts());
    }
  }

  TEST_CASE("power cap and floored carriers") {
    PhyConfig cfg;
    OfdmSymbol x{cvec::Ones(cfg.n_fft)};
    FreqChannelEstimate h = ramp(cfg, 0.0, 0.0);
    h.h *= 0.2;
    CHECK(pre_equalize(x, PreEqState{}, h, cfg, 10.0).power_cap_exceeded);
    h.h[3] = 0.0;
    const PreEqualized p = pre_equalize(x, PreEqState{}, h, cfg, 100.0);
    CHECK(p.floored_carriers == 1);
    CHECK(p.symbol.freq[3] == cplx(0.0, 0.0));
    CHECK_FALSE(p.power_cap_exceeded);
  }

  TEST_CASE("handshake ordering") {
    HandshakeMachine m(2);
    CHECK_THROWS(m.record({EventKind::UlPreEqAck, 0, 0}));
    m.record({EventKind::DlTrigger, 0, -1});
    m.record({EventKind::UlPreEqAck, 0, 0});
    CHECK_THROWS(m.record({EventKind::DlOtaRequest, 1, -1}));
    m.record({EventKind::UlPreEqAck, 0, 1});
    CHECK(m.stage1_complete());
    CHECK_THROWS(m.record({EventKind::UlPreEqAck, 0, 1}));
    CHECK_THROWS(m.record({EventKind::DlOtaRequest, 1, -1}));
    m.record({EventKind::CtrlBroadcast, 1, -1});
    m.record({EventKind::DlOtaRequest, 1, -1});
    m.record({EventKind::UlOtaFrame, 1, 0});
    m.record({EventKind::UlOtaFrame, 1, 1});
    CHECK_THROWS(m.record({EventKind::UlOtaFrame, 1, 0}));
    CHECK_THROWS(m.record({EventKind::CtrlBroadcast, 2, -1}));
    m.record({EventKind::DlOtaRequest, 2, -1});
    CHECK_THROWS(m.record({EventKind::UlOtaFrame, 2, 5}));
    CHECK(m.log().size() == 8);
  }

  TEST_CASE("single clean sensor: aggregate equals its payload") {
    PhyConfig cfg;
    ChannelConfig ch;
    ch.impairments = false;
    std::mt19937_64 rng(6);
    ProtocolConfig proto;
    proto.k_sensors = 1;
    proto.snr_db = kNoiseless;
    std::vector<std::vector<vec>> sent;
    const auto results = run_handshake(
        {draw_link(cfg, ch, rng)}, cfg, proto, 5,
        [&](int) {
          sent.push_back(random_payload(2, cfg.used_count(), rng));
          return std::vector<std::vector<vec>>{sent.back()};
        },
        7);
    REQUIRE(results.size() == 5);
    for (size_t r = 0; r < results.size(); ++r)
      for (int s = 0; s < 2; ++s) CHECK((results[r].aggregate[s] - sent[r][s]).cwiseAbs().maxCoeff() < 1e-9);
  }

  TEST_CASE("noise-free session: stage-one estimates match the truth at the stamped times") {
    PhyConfig cfg;
    ProtocolConfig proto;
    proto.snr_db = kNoiseless;
    std::mt19937_64 rng(8);
    std::vector<SensorLinkState> links{draw_link(cfg, ChannelConfig{}, rng), draw_link(cfg, ChannelConfig{}, rng)};
    OtaSession s(cfg, proto, links, 9);
    s.initialize();
    for (int k = 0; k < 2; ++k) {
      // The multipath onset inside the preamble window leaves a few mHz of coarse error.
      const double dfr = s.link(k).cfo_hz - s.cfo_state(k).coarse_hz;
      CHECK(std::abs(dfr) < 0.05);
      const OtaTruth truth = ota_truth(s.link(k), dfr, s.stage1_t_dl(k), s.stage1_t_ul(k));
      // The uplink CFO runs on the AP clock, TO_UL after the sensor's pre-rotation.
      const double cross = kTwoPi * s.link(k).cfo_hz * s.link(k).to_ul_s;
      CHECK(angle_diff(s.ap_phi0(k), truth.phi + cross) < 1e-5);
      CHECK(std::abs(s.ap_tau0(k) - truth.tau) < 1e-4 * cfg.ts());
    }
  }

  TEST_CASE("event log, timers and the validity warning") {
    PhyConfig cfg;
    ProtocolConfig proto;
    proto.validity_limit = 1e-15;
    std::mt19937_64 rng(10);
    std::vector<SensorLinkState> links{draw_link(cfg, ChannelConfig{}, rng), draw_link(cfg, ChannelConfig{}, rng)};
    OtaSession s(cfg, proto, links, 11);
    s.initialize();
    std::vector<RoundResult> res;
    for (int r = 0; r < 3; ++r)
      res.push_back(s.aggregate({random_payload(1, cfg.used_count(), rng), random_payload(1, cfg.used_count(), rng)}));

    std::vector<EventKind> kinds;
    for (const auto& e : s.events()) kinds.push_back(e.kind);
    using E = EventKind;
    const std::vector<EventKind> want{E::DlTrigger,  E::UlPreEqAck,   E::UlPreEqAck, E::CtrlBroadcast,
                                      E::DlOtaRequest, E::UlOtaFrame, E::UlOtaFrame, E::DlOtaRequest,
                                      E::UlOtaFrame, E::UlOtaFrame,   E::DlOtaRequest, E::UlOtaFrame,
                                      E::UlOtaFrame};
    CHECK(kinds == want);
    CHECK(s.events()[3].payload.size() == 4);
    CHECK(s.rounds_completed() == 3);

    for (size_t r = 1; r < res.size(); ++r)
      for (int k = 0; k < 2; ++k) {
        CHECK(res[r].sensors[k].dt_dl == res[r].sensors[k].t_dl - res[r - 1].sensors[k].t_dl);
        CHECK(res[r].sensors[k].dt_ul == res[r].sensors[k].t_ul - res[r - 1].sensors[k].t_ul);
      }
    CHECK(res[0].sensors[0].dt_dl == res[0].sensors[0].t_dl - s.stage1_t_dl(0));
    bool warned = false;
    for (const auto& f : res[1].flags) warned |= f.find("static-channel") != std::string::npos;
    CHECK(warned);
  }

  TEST_CASE("unusable link aborts after one retry") {
    PhyConfig cfg;
    ProtocolConfig proto;
    proto.snr_db = -30.0;
    std::mt19937_64 rng(12);
    OtaSession s(cfg, proto, {draw_link(cfg, ChannelConfig{}, rng), draw_link(cfg, ChannelConfig{}, rng)}, 13);
    CHECK_THROWS_AS(s.initialize(), ProtocolAbort);
  }

  TEST_CASE("aggregate before initialize and mismatched payloads are errors") {
    PhyConfig cfg;
    ProtocolConfig proto;
    std::mt19937_64 rng(14);
    OtaSession s(cfg, proto, {draw_link(cfg, ChannelConfig{}, rng), draw_link(cfg, ChannelConfig{}, rng)}, 15);
    CHECK_THROWS(s.aggregate({random_payload(1, cfg.used_count(), rng), random_payload(1, cfg.used_count(), rng)}));
    s.initialize();
    CHECK_THROWS(s.aggregate({random_payload(1, cfg.used_count(), rng)}));
    CHECK_THROWS(s.aggregate({random_payload(1, cfg.used_count(), rng), random_payload(2, cfg.used_count(), rng)}));
    CHECK_THROWS_AS(OtaSession(cfg, proto, {draw_link(cfg, ChannelConfig{}, rng)}, 1), ConfigError);
  }
}
