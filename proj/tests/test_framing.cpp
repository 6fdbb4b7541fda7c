#include <cmath>

#include "airfed/channel.hpp"
#include "airfed/framing.hpp"
#include "support.hpp"

using namespace airfed;
using airfed::test::random_cvec;

namespace {

SampleStream embed(const FtSequence& ft, double amp, int64_t offset, int64_t tail) {
  SampleStream r{cvec::Zero(offset + ft.symbols.size() + tail), 0.0};
  r.samples.segment(offset, ft.symbols.size()) = ft_waveform(ft, amp).samples;
  return r;
}

}  // namespace

TEST_SUITE("phy_framing") {
  TEST_CASE("constant q gives an all-ones sequence") {
    const FtSequence ft = ft_from_prbs(std::vector<int>(8, 1));
    CHECK(ft.symbols == vec::Ones(16));
  }

  TEST_CASE("hand-unrolled recursion with one negative PRBS element") {
    const FtSequence ft = ft_from_prbs({-1, 1, 1});
    vec want(6);
    want << 1, 1, -1, -1, -1, -1;
    CHECK(ft.symbols == want);
    vec q(6);
    q << -1, -1, 1, 1, 1, 1;
    CHECK(ft.q() == q);
  }

  TEST_CASE("seeded sequences are reproducible and BPSK") {
    PhyConfig cfg;
    const FtSequence a = gen_ft(cfg, 42), b = gen_ft(cfg, 42), c = gen_ft(cfg, 43);
    CHECK(a.symbols == b.symbols);
    CHECK(a.symbols != c.symbols);
    CHECK(a.symbols.size() == cfg.m_ft);
    CHECK((a.symbols.array().abs() == 1.0).all());
    for (int m = 0; m + 2 < cfg.m_ft; ++m) CHECK(a.symbols[m + 2] == a.symbols[m] * a.q()[m]);
    CHECK_THROWS_AS(gen_ft(7, 1), ConfigError);
  }

  TEST_CASE("CFO sub-frame tones") {
    PhyConfig cfg;
    cfg.n_cfo_tone = 0;
    SampleStream s = gen_cfo_subframe(cfg, 300, 0.5);
    CHECK((s.samples.array() - cplx(0.5, 0.0)).abs().maxCoeff() < 1e-15);

    cfg.n_cfo_tone = cfg.n_fft / 4;
    s = gen_cfo_subframe(cfg, 300, 0.5);
    const cplx cycle[4] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
    for (int m = 0; m < 300; ++m) CHECK(std::abs(s.samples[m] - 0.5 * cycle[m % 4]) < 1e-12);

    cfg.n_cfo_tone = 4;
    s = gen_cfo_subframe(cfg, 1000, 0.0625);
    CHECK((s.samples.array().abs() - 0.0625).abs().maxCoeff() < 1e-15);
    CHECK_THROWS(gen_cfo_subframe(cfg, cfg.n_fft, 0.0625));
  }

  TEST_CASE("noise-free peak equals M_FT - 2 at offset 0") {
    PhyConfig cfg;
    const FtSequence ft = gen_ft(cfg, cfg.ft_seed);
    const TimingDecision d = detect_frame(embed(ft, cfg.ft_amp, 0, 40), ft, cfg);
    CHECK(d.valid);
    CHECK(d.m0 == 0);
    CHECK(d.peak == cfg.m_ft - 2);
  }

  TEST_CASE("detection is shift-equivariant") {
    PhyConfig cfg;
    const FtSequence ft = gen_ft(cfg, cfg.ft_seed);
    CHECK(detect_frame(embed(ft, cfg.ft_amp, 37, 40), ft, cfg).m0 == 37);
    for (int d : {0, 1, 5, 64, 129, 300}) {
      const TimingDecision t = detect_frame(embed(ft, cfg.ft_amp, d, 20), ft, cfg);
      CHECK(t.m0 == d);
      CHECK(t.peak == cfg.m_ft - 2);
    }
  }

  TEST_CASE("lag-2 decoding tolerates CFO below a quarter turn per two samples") {
    PhyConfig cfg;
    const FtSequence ft = gen_ft(cfg, cfg.ft_seed);
    const SampleStream r = embed(ft, cfg.ft_amp, 50, 50);
    for (double cfo : {2000.0, -2000.0, 0.2 * cfg.fs_hz / 2.0, 0.9 * cfg.fs_hz / 8.0}) {
      const TimingDecision d = detect_frame(apply_cfo(r, cfo, cfg), ft, cfg);
      CHECK(d.m0 == 50);
      CHECK(d.peak == cfg.m_ft - 2);
    }
  }

  TEST_CASE("false-alarm rate on pure noise stays below 1 percent") {
    for (int m_ft : {64, 128}) {
      PhyConfig cfg;
      cfg.m_ft = m_ft;
      cfg.gamma_th = (m_ft - 2) / 2.0;
      const FtSequence ft = gen_ft(cfg, cfg.ft_seed);
      std::mt19937_64 rng(m_ft);
      int alarms = 0;
      for (int i = 0; i < 1000; ++i) alarms += detect_frame(SampleStream{random_cvec(2 * m_ft, rng), 0.0}, ft, cfg).valid;
      CHECK(alarms < 10);
    }
  }

  TEST_CASE("correlator matches the numpy reference") {
    const auto& o = test::oracle().at("correlator");
    const FtSequence ft = ft_from_prbs(o.at("prbs").get<std::vector<int>>());
    const SampleStream r{test::cvec_from(o.at("r")), 0.0};
    const vec corr = ft_correlation(r, ft);
    const auto want = o.at("corr").get<std::vector<double>>();
    REQUIRE(corr.size() == static_cast<Eigen::Index>(want.size()));
    for (size_t i = 0; i < want.size(); ++i) CHECK(corr[static_cast<Eigen::Index>(i)] == want[i]);
    PhyConfig cfg;
    cfg.m_ft = static_cast<int>(ft.symbols.size());
    cfg.gamma_th = (cfg.m_ft - 2) / 2.0;
    const TimingDecision d = detect_frame(r, ft, cfg);
    CHECK(d.m0 == o.at("m0").get<int64_t>());
    CHECK(d.peak == o.at("peak").get<double>());
  }

  TEST_CASE("short streams are rejected") {
    PhyConfig cfg;
    const FtSequence ft = gen_ft(cfg, 1);
    CHECK_THROWS(detect_frame(SampleStream{cvec::Zero(cfg.m_ft - 1), 0.0}, ft, cfg));
  }

  TEST_CASE("digital frame layout arithmetic") {
    PhyConfig cfg;
    const FrameLayout l = digital_frame_layout(cfg, 2, 3);
    CHECK(l.section("pilots").length == 2 * 288);
    CHECK(l.section("cfo").length == cfg.m_cfo_frame);
    CHECK(l.section("data").length == 3 * 288);
    CHECK(l.section("pilots").offset == cfg.m_ft + cfg.m_cfo_frame);
    CHECK(l.total_length() == cfg.m_ft + cfg.m_cfo_frame + 5 * 288);
    const FrameLayout ota = ota_frame_layout(cfg, 2);
    CHECK(ota.total_length() == cfg.m_ft + 3 * 288);
    CHECK_FALSE(ota.has("cfo"));
    const FrameLayout init = init_preamble_layout(cfg);
    CHECK(init.section("cfo").length == cfg.m_cfo_init + cfg.l_span);
  }

  TEST_CASE("assemble and slice round-trip") {
    PhyConfig cfg;
    std::mt19937_64 rng(4);
    const FrameLayout l = digital_frame_layout(cfg, 2, 1);
    std::map<std::string, SampleStream> parts;
    for (const Section& s : l.sections) parts[s.name] = SampleStream{random_cvec(s.length, rng), 0.0};
    const SampleStream f = assemble_frame(l, parts);
    CHECK(f.size() == l.total_length());
    const auto back = slice_frame(l, f, cfg.ts());
    for (const Section& s : l.sections) CHECK(back.at(s.name).samples == parts.at(s.name).samples);
    CHECK(back.at("pilots").t0_s == doctest::Approx(l.section("pilots").offset * cfg.ts()));

    auto missing = parts;
    missing.erase("cfo");
    CHECK_THROWS(assemble_frame(l, missing));
    auto wrong = parts;
    wrong["ft"].samples.conservativeResize(3);
    CHECK_THROWS(assemble_frame(l, wrong));
  }

  TEST_CASE("empty data section yields FT, CFO and pilots only") {
    PhyConfig cfg;
    std::mt19937_64 rng(5);
    const FrameLayout l = digital_frame_layout(cfg, 2, 0);
    const SampleStream ft{random_cvec(cfg.m_ft, rng), 0.0}, cfo{random_cvec(cfg.m_cfo_frame, rng), 0.0},
        pil{random_cvec(2 * 288, rng), 0.0};
    const SampleStream f = assemble_frame(l, {{"ft", ft}, {"cfo", cfo}, {"pilots", pil}});
    cvec want(ft.size() + cfo.size() + pil.size());
    want << ft.samples, cfo.samples, pil.samples;
    CHECK(f.samples == want);
  }
}
