#include <iostream>

#include <CLI11.hpp>

#include "airfed/harness.hpp"

int main(int argc, char** argv) {
  using namespace airfed;
  CLI::App app{"Over-the-air federated learning simulator"};
  app.set_version_flag("--version", std::string(kToolName) + " " + kToolVersion);

  std::string scenario, config_path, out_dir = "out";
  uint64_t seed = 0;
  std::vector<double> snr_db;
  int trials = 0;
  bool no_comp = false;
  app.add_option("scenario", scenario, "frame-timing | cfo | constellation | apb | train | e2e")
      ->required()
      ->check(CLI::IsMember(scenario_names()));
  app.add_option("--config", config_path, "JSON config or a manifest.json from an earlier run");
  auto* seed_opt = app.add_option("--seed", seed, "experiment seed");
  app.add_option("--out", out_dir, "output directory");
  auto* snr_opt = app.add_option("--snr-db", snr_db, "SNR values in dB")->delimiter(',');
  auto* trials_opt = app.add_option("--trials", trials, "trials, rounds or training steps")->check(CLI::PositiveNumber);
  app.add_flag("--no-compensation", no_comp, "disable phase and timing pre-compensation");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    ExperimentConfig config = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    config.scenario = scenario;
    Overrides ov;
    if (*seed_opt) ov.seed = seed;
    if (*snr_opt) ov.snr_db = snr_db;
    if (*trials_opt) ov.trials = trials;
    ov.no_compensation = no_comp;
    apply_overrides(config, ov);

    const ScenarioOutput out = run_scenario(config);
    for (const auto& name : emit_report(config, out, out_dir)) std::cout << (std::filesystem::path(out_dir) / name).string() << '\n';
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ProtocolAbort& e) {
    std::cerr << "protocol abort: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
