#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "airfed/channel.hpp"
#include "airfed/fl.hpp"
#include "airfed/phy_config.hpp"
#include "airfed/protocol.hpp"

namespace airfed {

inline constexpr const char* kToolName = "airfed";
inline constexpr const char* kToolVersion = "1.0.0";

struct FrameTimingConfig {
  std::vector<double> snr_grid_db{-10.0, -5.0, 0.0, 5.0, 10.0, 15.0};
  std::vector<int> m_ft_grid{32, 64, 128};
  int trials = 10000;
  bool apply_cfo = true;  // uniform CFO up to channel.cfo_max_hz on every trial
};

struct CfoScenarioConfig {
  std::vector<double> snr_grid_db{-5.0, 0.0, 5.0, 10.0, 20.0};
  int trials = 200;
  int tracking_trials = 1000;
  double tracking_snr_db = 0.0;
  int tracking_pilots = 16;
  double tracking_interval_s = 1e-3;  // spacing of the repeated pilot
  double tracking_max_hz = 20.0;      // residual CFO ~ U(-max, max)
};

struct ConstellationConfig {
  double snr_db = 30.0;
  int data_symbols = 40;
  int order = 16;
};

struct ApbConfig {
  int rounds = 200;
  int data_symbols = 2;
  bool paired_uncompensated = true;
};

struct TrainScenarioConfig {
  double heatmap_step_m = 10.0;
  bool offline = true;  // also run the noiseless baseline on the same batches
};

/// Everything a run depends on. Serialized in full into the manifest.
struct ExperimentConfig {
  std::string scenario = "e2e";
  uint64_t seed = 1;
  PhyConfig phy;
  ChannelConfig channel;
  ProtocolConfig protocol;
  TrainConfig train;
  RssMapConfig map;
  FrameTimingConfig frame_timing;
  CfoScenarioConfig cfo;
  ConstellationConfig constellation;
  ApbConfig apb;
  TrainScenarioConfig train_run;

  void validate() const;
};

/// Strict parse: unknown keys and wrong types raise ConfigError. A manifest
/// written by emit_report is accepted as well and yields its recorded config.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& config);

/// Command-line overrides applied on top of the file.
struct Overrides {
  std::optional<uint64_t> seed;
  std::optional<std::vector<double>> snr_db;
  std::optional<int> trials;
  bool no_compensation = false;
};
void apply_overrides(ExperimentConfig& config, const Overrides& ov);

using Cell = std::variant<int64_t, double, std::string>;

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void add(std::vector<Cell> row);
};

struct ScenarioOutput {
  std::vector<Table> tables;
  std::vector<nlohmann::json> trace;
};

const std::vector<std::string>& scenario_names();

ScenarioOutput run_frame_timing(const ExperimentConfig& config);
ScenarioOutput run_cfo(const ExperimentConfig& config);
ScenarioOutput run_constellation(const ExperimentConfig& config);
ScenarioOutput run_apb(const ExperimentConfig& config);
ScenarioOutput run_train(const ExperimentConfig& config);
/// Dispatch on config.scenario; e2e runs every scenario in order.
ScenarioOutput run_scenario(const ExperimentConfig& config);

// ---- scenario building blocks, shared with the tests -----------------------

/// One frame-timing trial: silence, the FT sequence at a random start, then one
/// random QPSK OFDM symbol. Returns the detector decision and the true start.
struct FtTrial {
  TimingDecision decision;
  int64_t true_m0 = 0;
};
FtTrial frame_timing_trial(const PhyConfig& phy, int m_ft, double snr_db, double cfo_max_hz, uint64_t seed);

/// Coarse CFO estimate on a noisy preamble; returns estimate minus truth in Hz.
double coarse_cfo_trial(const PhyConfig& phy, double cfo_hz, double snr_db, uint64_t seed);

/// Running-mean residual estimates after p = 1 .. pilots repeated pilots.
struct TrackingTrial {
  double truth_hz = 0.0;
  std::vector<double> estimates;
};
TrackingTrial tracking_trial(const PhyConfig& phy, const ChannelConfig& channel, const CfoScenarioConfig& cfg,
                             uint64_t seed);

/// Links for a session, drawn from the experiment seed.
std::vector<SensorLinkState> draw_links(const ExperimentConfig& config, uint64_t seed);

/// Per-round NMSE of the A+B test.
struct ApbRound {
  int round = 0;
  double nmse = 0.0;
  RoundResult result;
};
std::vector<ApbRound> apb_rounds(const ExperimentConfig& config, bool compensate);

/// OTA aggregation of local gradients through a running session: agree on a
/// scale, chunk, aggregate over the air and dechunk.
class OtaAggregator {
 public:
  OtaAggregator(OtaSession& session, const ScalePolicy& policy) : session_(session), policy_(policy) {}
  vec operator()(const std::vector<vec>& local, int t);
  int last_clipped() const { return last_clipped_; }
  double last_scale() const { return last_scale_; }
  const RoundResult& last_round() const { return last_; }

 private:
  OtaSession& session_;
  ScalePolicy policy_;
  int last_clipped_ = 0;
  double last_scale_ = 1.0;
  RoundResult last_;
};

struct TrainOutcome {
  TrainResult ota;
  TrainResult offline;
  std::vector<HeatCell> heatmap;
  double median_nmse = 0.0;
  std::vector<double> scale;  // per OTA round
  std::vector<int> clipped;
  std::vector<int> attempts;
  std::vector<std::string> flags;
};
TrainOutcome train_outcome(const ExperimentConfig& config);

// ---- report ----------------------------------------------------------------

/// Shortest round-trip decimal form.
std::string format_double(double v);
std::string to_csv(const Table& table);
/// 64-bit FNV-1a, lowercase hex.
std::string fnv1a_hex(const std::string& bytes);

/// Writes <table>.csv for every table, trace.jsonl and manifest.json into out_dir.
/// Returns the written file names. Throws Error when out_dir cannot be written.
std::vector<std::string> emit_report(const ExperimentConfig& config, const ScenarioOutput& out,
                                     const std::filesystem::path& out_dir);

}  // namespace airfed
