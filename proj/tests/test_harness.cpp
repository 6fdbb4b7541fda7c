#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "airfed/harness.hpp"
#include "support.hpp"

using namespace airfed;
using nlohmann::json;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::filesystem::path scratch(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("airfed_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

const Table& table(const ScenarioOutput& out, const std::string& name) {
  for (const Table& t : out.tables)
    if (t.name == name) return t;
  throw Error("no table " + name);
}

json summary_of(const ScenarioOutput& out) {
  for (const json& e : out.trace)
    if (e.value("kind", "") == "summary") return e.at("metrics");
  throw Error("no summary");
}

ExperimentConfig clean_apb(int rounds) {
  ExperimentConfig c;
  c.scenario = "apb";
  c.apb.rounds = rounds;
  return c;
}

}  // namespace

TEST_SUITE("harness_cli") {
  TEST_CASE("defaults validate and round-trip through JSON") {
    const ExperimentConfig d;
    CHECK_NOTHROW(d.validate());
    const json j = to_json(d);
    CHECK(to_json(parse_config(j)) == j);
    CHECK(j.at("phy").at("n_fft") == 256);
  }

  TEST_CASE("strict parsing") {
    CHECK_THROWS_AS(parse_config(json{{"bogus", 1}}), ConfigError);
    CHECK_THROWS_AS(parse_config(json{{"phy", {{"n_ftt", 256}}}}), ConfigError);
    CHECK_THROWS_AS(parse_config(json{{"phy", {{"n_fft", "256"}}}}), ConfigError);
    CHECK_THROWS_AS(parse_config(json{{"seed", -1}}), ConfigError);
    CHECK_THROWS_AS(parse_config(json{{"protocol", {{"snr_db", "loud"}}}}), ConfigError);
    CHECK_THROWS_AS(parse_config(json{{"scenario", "nope"}}), ConfigError);
    CHECK_THROWS_AS(parse_config(json::array()), ConfigError);
    CHECK_THROWS_AS(parse_config(json{{"protocol", {{"k_sensors", 3}}}}), ConfigError);
    CHECK_THROWS_AS(parse_config(json{{"scenario", "apb"}, {"protocol", {{"k_sensors", 3}}}, {"map", {{"k_sensors", 3}}}}),
                    ConfigError);
    CHECK_NOTHROW(parse_config(json{{"scenario", "train"}, {"protocol", {{"k_sensors", 3}}}, {"map", {{"k_sensors", 3}}}}));
    CHECK_THROWS_AS(parse_config(json{{"constellation", {{"order", 8}}}}), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/airfed.json"), ConfigError);
  }

  TEST_CASE("infinite SNR is written and read as \"inf\"") {
    const ExperimentConfig c = parse_config(json{{"protocol", {{"snr_db", "inf"}}}});
    CHECK(std::isinf(c.protocol.snr_db));
    CHECK(to_json(c).at("protocol").at("snr_db") == "inf");
  }

  TEST_CASE("a manifest is accepted as a config") {
    ExperimentConfig c;
    c.seed = 77;
    c.scenario = "cfo";
    const json manifest{{"tool", kToolName}, {"version", kToolVersion}, {"config", to_json(c)}};
    const ExperimentConfig back = parse_config(manifest);
    CHECK(back.seed == 77);
    CHECK(back.scenario == "cfo");
  }

  TEST_CASE("command-line overrides") {
    ExperimentConfig c;
    c.scenario = "cfo";
    apply_overrides(c, Overrides{3, std::vector<double>{1.0, 2.0}, 7, true});
    CHECK(c.seed == 3);
    CHECK(c.cfo.snr_grid_db == std::vector<double>{1.0, 2.0});
    CHECK(c.cfo.trials == 7);
    CHECK(c.cfo.tracking_trials == 7);
    CHECK(c.frame_timing.trials == ExperimentConfig{}.frame_timing.trials);
    CHECK_FALSE(c.protocol.compensation);

    ExperimentConfig a = clean_apb(200);
    apply_overrides(a, Overrides{{}, std::vector<double>{5.0}, 4, false});
    CHECK(a.protocol.snr_db == 5.0);
    CHECK(a.apb.rounds == 4);
    CHECK(a.protocol.compensation);

    ExperimentConfig k;
    k.scenario = "constellation";
    apply_overrides(k, Overrides{{}, {}, 3, false});
    CHECK(k.constellation.data_symbols == 3);
    CHECK_THROWS_AS(apply_overrides(k, Overrides{{}, std::vector<double>{}, {}, false}), ConfigError);
  }

  TEST_CASE("number formatting and CSV") {
    CHECK(format_double(0.1) == "0.1");
    CHECK(format_double(-2.0) == "-2");
    CHECK(format_double(std::numeric_limits<double>::quiet_NaN()) == "nan");
    CHECK(format_double(std::numeric_limits<double>::infinity()) == "inf");
    CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);

    Table t{"x", {"a", "b", "c"}, {}};
    CHECK(to_csv(t) == "a,b,c\n");
    t.add({int64_t{3}, 0.5, std::string("p,q")});
    t.add({int64_t{-1}, 1e-300, std::string("say \"hi\"")});
    CHECK(to_csv(t) == "a,b,c\n3,0.5,\"p,q\"\n-1,1e-300,\"say \"\"hi\"\"\"\n");
    CHECK_THROWS(t.add({int64_t{1}}));
  }

  TEST_CASE("FNV-1a reference values") {
    CHECK(fnv1a_hex("") == "cbf29ce484222325");
    CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
  }

  TEST_CASE("noiseless frame timing always locks and is reproducible") {
    ExperimentConfig c;
    c.scenario = "frame-timing";
    c.frame_timing.trials = 20;
    c.frame_timing.snr_grid_db = {std::numeric_limits<double>::infinity()};
    const ScenarioOutput a = run_scenario(c), b = run_scenario(c);
    const Table& t = table(a, "frame-timing");
    REQUIRE(t.rows.size() == c.frame_timing.m_ft_grid.size());
    for (const auto& row : t.rows) {
      CHECK(std::get<double>(row[3]) == 1.0);
      CHECK(std::get<double>(row[4]) == 1.0);
      CHECK(std::get<double>(row[5]) == doctest::Approx(std::get<int64_t>(row[0]) - 2));
    }
    CHECK(to_csv(t) == to_csv(table(b, "frame-timing")));
  }

  TEST_CASE("frame-timing trials detect the true start at high SNR") {
    PhyConfig phy;
    for (uint64_t s = 0; s < 10; ++s) {
      const FtTrial t = frame_timing_trial(phy, 128, 30.0, 5000.0, s);
      CHECK(t.decision.valid);
      CHECK(t.decision.m0 == t.true_m0);
    }
  }

  TEST_CASE("coarse CFO trial is exact without noise") {
    PhyConfig phy;
    phy.m_cfo_init = 8192;
    CHECK(std::abs(coarse_cfo_trial(phy, 3210.0, std::numeric_limits<double>::infinity(), 1)) < 1e-6);
  }

  TEST_CASE("clean constellation has no symbol errors") {
    ExperimentConfig c;
    c.scenario = "constellation";
    c.constellation.snr_db = std::numeric_limits<double>::infinity();
    const ScenarioOutput out = run_scenario(c);
    const Table& s = table(out, "constellation");
    CHECK(std::get<int64_t>(s.rows[0][3]) == 40 * c.phy.used_count());
    CHECK(std::get<int64_t>(s.rows[0][4]) == 0);
    // Residual coarse error of a few mHz drifts the phase over the 40 symbols.
    CHECK(std::abs(std::get<double>(s.rows[0][7])) < 0.05);
    CHECK(std::get<double>(s.rows[0][6]) < 1e-4);
    CHECK(table(out, "constellation_points").rows.size() == static_cast<size_t>(40 * c.phy.used_count()));
  }

  TEST_CASE("A+B test at 20 dB: compensation beats the uncompensated pair") {
    const ScenarioOutput out = run_scenario(clean_apb(5));
    const Table& t = table(out, "apb");
    REQUIRE(t.rows.size() == 5);
    for (const auto& row : t.rows) CHECK(std::get<double>(row[1]) < std::get<double>(row[2]));
    CHECK(table(out, "apb_cdf").rows.size() == 10);
    const json m = summary_of(out);
    CHECK(m.at("frac_uncompensated_worse") == 1.0);
    CHECK(m.at("max_nmse_d").get<double>() < 0.01);
  }

  TEST_CASE("OTA aggregator over clean links returns the gradient sum") {
    ExperimentConfig c;
    c.channel.impairments = false;
    c.protocol.snr_db = std::numeric_limits<double>::infinity();
    OtaSession session(c.phy, c.protocol, draw_links(c, 1), 2);
    session.initialize();
    OtaAggregator agg(session, ScalePolicy{});
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 0.1);
    std::vector<vec> local(2, vec(501));
    for (auto& g : local)
      for (auto& v : g) v = n(rng);
    const vec sum = agg(local, 0);
    CHECK((sum - (local[0] + local[1])).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(agg.last_round().attempts == 1);
    CHECK(agg.last_scale() > 0.0);
    CHECK_THROWS(agg({local[0]}, 1));
  }

  TEST_CASE("report files and manifest round-trip") {
    ExperimentConfig c = clean_apb(2);
    const ScenarioOutput out = run_scenario(c);
    const auto dir = scratch("report");
    const auto files = emit_report(c, out, dir);
    CHECK(std::find(files.begin(), files.end(), "manifest.json") != files.end());
    CHECK(std::find(files.begin(), files.end(), "apb.csv") != files.end());
    CHECK(std::find(files.begin(), files.end(), "trace.jsonl") != files.end());

    const json manifest = json::parse(slurp(dir / "manifest.json"));
    CHECK(manifest.at("tool") == kToolName);
    CHECK(manifest.at("config_hash") == fnv1a_hex(manifest.at("config").dump()));
    CHECK(manifest.at("outputs").at("apb.csv") == fnv1a_hex(slurp(dir / "apb.csv")));
    CHECK(slurp(dir / "apb.csv").rfind("round,nmse_d,nmse_d_uncompensated,attempts,flags\n", 0) == 0);

    std::istringstream trace(slurp(dir / "trace.jsonl"));
    std::string line;
    int lines = 0;
    while (std::getline(trace, line)) {
      CHECK(json::parse(line).is_object());
      ++lines;
    }
    CHECK(lines == static_cast<int>(out.trace.size()));

    const ExperimentConfig again = parse_config(manifest);
    const auto dir2 = scratch("report2");
    emit_report(again, run_scenario(again), dir2);
    for (const auto& f : files) CHECK(slurp(dir / f) == slurp(dir2 / f));
    std::filesystem::remove_all(dir);
    std::filesystem::remove_all(dir2);
  }

  TEST_CASE("unwritable output directory is an error") {
    const auto blocker = scratch("blocker");
    std::ofstream(blocker) << "x";
    CHECK_THROWS_AS(emit_report(ExperimentConfig{}, ScenarioOutput{}, blocker / "sub"), Error);
    std::filesystem::remove(blocker);
  }
}
