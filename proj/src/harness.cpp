#include "airfed/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <type_traits>

namespace airfed {

using nlohmann::json;

// ---- config ----------------------------------------------------------------

namespace {

template <typename T>
T get_as(const json& v, const std::string& path) {
  auto bad = [&](const char* what) { return ConfigError(path + ": expected " + what); };
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw bad("a boolean");
    return v.get<bool>();
  } else if constexpr (std::is_same_v<T, uint64_t>) {
    if (!v.is_number_unsigned()) throw bad("a non-negative integer");
    return v.get<uint64_t>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) throw bad("an integer");
    if (v.is_number_unsigned() && v.get<uint64_t>() > static_cast<uint64_t>(std::numeric_limits<T>::max()))
      throw bad("a smaller integer");
    const auto x = v.get<int64_t>();
    if (x < std::numeric_limits<T>::min() || x > std::numeric_limits<T>::max()) throw bad("a smaller integer");
    return static_cast<T>(x);
  } else if constexpr (std::is_same_v<T, double>) {
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
      const auto s = v.get<std::string>();
      if (s == "inf") return std::numeric_limits<double>::infinity();
      if (s == "-inf") return -std::numeric_limits<double>::infinity();
    }
    throw bad("a number or \"inf\"");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw bad("a string");
    return v.get<std::string>();
  } else if constexpr (std::is_same_v<T, Point2>) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) throw bad("[x, y]");
    return Point2{v[0].get<double>(), v[1].get<double>()};
  } else {
    using U = typename T::value_type;
    if (!v.is_array()) throw bad("an array");
    T out;
    for (size_t i = 0; i < v.size(); ++i) out.push_back(get_as<U>(v[i], path + "[" + std::to_string(i) + "]"));
    return out;
  }
}

template <typename T>
json put_as(const T& v) {
  if constexpr (std::is_same_v<T, double>) {
    if (std::isfinite(v)) return v;
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return nullptr;
  } else if constexpr (std::is_same_v<T, Point2>) {
    return json::array({v.x, v.y});
  } else if constexpr (std::is_same_v<T, bool> || std::is_arithmetic_v<T> || std::is_same_v<T, std::string>) {
    return v;
  } else {
    json a = json::array();
    for (const auto& e : v) a.push_back(put_as(e));
    return a;
  }
}

struct Field {
  std::string name;
  std::function<void(const json&, const std::string&)> read;
  std::function<json()> write;
};

template <typename T>
Field bind(const char* name, T& ref) {
  return {name, [&ref](const json& v, const std::string& p) { ref = get_as<T>(v, p); },
          [&ref] { return put_as(ref); }};
}

using Fields = std::vector<Field>;

void read_fields(const json& j, const std::string& path, const Fields& fields) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  for (const auto& [key, v] : j.items()) {
    auto it = std::find_if(fields.begin(), fields.end(), [&](const Field& f) { return f.name == key; });
    if (it == fields.end()) throw ConfigError("unknown config key " + path + "." + key);
    it->read(v, path + "." + key);
  }
}

json write_fields(const Fields& fields) {
  json o = json::object();
  for (const Field& f : fields) o[f.name] = f.write();
  return o;
}

Fields phy_fields(PhyConfig& c) {
  return {bind("n_fft", c.n_fft),           bind("cp_len", c.cp_len),         bind("fs_hz", c.fs_hz),
          bind("m_ft", c.m_ft),             bind("m_cfo_init", c.m_cfo_init), bind("m_cfo_frame", c.m_cfo_frame),
          bind("n_cfo_tone", c.n_cfo_tone), bind("l_span", c.l_span),         bind("gamma_th", c.gamma_th),
          bind("kappa", c.kappa),           bind("cp_backoff", c.cp_backoff), bind("ft_amp", c.ft_amp),
          bind("cfo_pilot_amp", c.cfo_pilot_amp), bind("pam_amp", c.pam_amp), bind("null_guards", c.null_guards),
          bind("guard_width", c.guard_width), bind("ft_seed", c.ft_seed),     bind("pilot_seed", c.pilot_seed)};
}

Fields channel_fields(ChannelConfig& c) {
  return {bind("impairments", c.impairments), bind("cfo_max_hz", c.cfo_max_hz),
          bind("to_max_samples", c.to_max_samples), bind("tap_delays_samples", c.tap_delays_samples),
          bind("tap_decay_samples", c.tap_decay_samples), bind("random_tap_phase", c.random_tap_phase)};
}

Fields protocol_fields(ProtocolConfig& c) {
  return {bind("k_sensors", c.k_sensors),         bind("snr_db", c.snr_db),
          bind("compensation", c.compensation),   bind("turnaround_s", c.turnaround_s),
          bind("round_gap_s", c.round_gap_s),     bind("power_cap", c.power_cap),
          bind("max_timing_error", c.max_timing_error), bind("ul_detection_gate", c.ul_detection_gate),
          bind("validity_limit", c.validity_limit)};
}

Fields train_fields(TrainConfig& c) {
  return {bind("rounds", c.rounds),       bind("batch", c.batch),           bind("eta_num", c.eta_num),
          bind("eta_offset", c.eta_offset), bind("sum_loss", c.sum_loss),   bind("seed", c.seed),
          bind("hidden1", c.shape.h1),    bind("hidden2", c.shape.h2),      bind("scale_bound", c.scale.bound),
          bind("scale_percentile", c.scale.percentile), bind("clip", c.scale.clip)};
}

Fields map_fields(RssMapConfig& c) {
  return {bind("ap_sites", c.ap_sites),     bind("radius_m", c.radius_m),     bind("exclusion_m", c.exclusion_m),
          bind("p0_dbm", c.p0_dbm),         bind("d0_m", c.d0_m),             bind("gamma", c.gamma),
          bind("shadow_sigma_db", c.shadow_sigma_db), bind("shadow_corr_m", c.shadow_corr_m),
          bind("shadow_terms", c.shadow_terms), bind("n_samples", c.n_samples), bind("k_sensors", c.k_sensors)};
}

Fields frame_timing_fields(FrameTimingConfig& c) {
  return {bind("snr_grid_db", c.snr_grid_db), bind("m_ft_grid", c.m_ft_grid), bind("trials", c.trials),
          bind("apply_cfo", c.apply_cfo)};
}

Fields cfo_fields(CfoScenarioConfig& c) {
  return {bind("snr_grid_db", c.snr_grid_db),       bind("trials", c.trials),
          bind("tracking_trials", c.tracking_trials), bind("tracking_snr_db", c.tracking_snr_db),
          bind("tracking_pilots", c.tracking_pilots), bind("tracking_interval_s", c.tracking_interval_s),
          bind("tracking_max_hz", c.tracking_max_hz)};
}

Fields constellation_fields(ConstellationConfig& c) {
  return {bind("snr_db", c.snr_db), bind("data_symbols", c.data_symbols), bind("order", c.order)};
}

Fields apb_fields(ApbConfig& c) {
  return {bind("rounds", c.rounds), bind("data_symbols", c.data_symbols),
          bind("paired_uncompensated", c.paired_uncompensated)};
}

Fields train_run_fields(TrainScenarioConfig& c) {
  return {bind("heatmap_step_m", c.heatmap_step_m), bind("offline", c.offline)};
}

std::vector<std::pair<std::string, Fields>> sections(ExperimentConfig& c) {
  return {{"phy", phy_fields(c.phy)},
          {"channel", channel_fields(c.channel)},
          {"protocol", protocol_fields(c.protocol)},
          {"train", train_fields(c.train)},
          {"map", map_fields(c.map)},
          {"frame_timing", frame_timing_fields(c.frame_timing)},
          {"cfo", cfo_fields(c.cfo)},
          {"constellation", constellation_fields(c.constellation)},
          {"apb", apb_fields(c.apb)},
          {"train_run", train_run_fields(c.train_run)}};
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace

const std::vector<std::string>& scenario_names() {
  static const std::vector<std::string> names{"frame-timing", "cfo", "constellation", "apb", "train", "e2e"};
  return names;
}

void ExperimentConfig::validate() const {
  const auto& names = scenario_names();
  require(std::find(names.begin(), names.end(), scenario) != names.end(), "unknown scenario '" + scenario + "'");
  phy.validate();
  channel.validate(phy);
  protocol.validate();
  train.validate();
  map.validate();
  require(protocol.k_sensors == map.k_sensors, "protocol.k_sensors and map.k_sensors differ");

  require(frame_timing.trials >= 1, "frame_timing.trials must be >= 1");
  require(!frame_timing.snr_grid_db.empty(), "frame_timing.snr_grid_db is empty");
  require(!frame_timing.m_ft_grid.empty(), "frame_timing.m_ft_grid is empty");
  for (int m : frame_timing.m_ft_grid) require(m >= 4 && m % 2 == 0, "frame_timing.m_ft_grid entries must be even and >= 4");
  for (double s : frame_timing.snr_grid_db) require(!std::isnan(s), "frame_timing.snr_grid_db contains NaN");

  require(cfo.trials >= 1 && cfo.tracking_trials >= 1, "cfo trial counts must be >= 1");
  require(!cfo.snr_grid_db.empty(), "cfo.snr_grid_db is empty");
  for (double s : cfo.snr_grid_db) require(!std::isnan(s), "cfo.snr_grid_db contains NaN");
  require(cfo.tracking_pilots >= 1, "cfo.tracking_pilots must be >= 1");
  require(cfo.tracking_interval_s > 0.0, "cfo.tracking_interval_s must be positive");
  require(cfo.tracking_max_hz >= 0.0 && cfo.tracking_max_hz * cfo.tracking_interval_s < 0.5,
          "cfo.tracking_max_hz must stay below 1 / (2 tracking_interval_s)");

  require(constellation.order == 4 || constellation.order == 16, "constellation.order must be 4 or 16");
  require(constellation.data_symbols >= 1, "constellation.data_symbols must be >= 1");
  require(apb.rounds >= 1 && apb.data_symbols >= 1, "apb.rounds and apb.data_symbols must be >= 1");
  if (scenario == "apb" || scenario == "e2e") require(protocol.k_sensors == 2, "the A+B test needs 2 sensors");
  require(train_run.heatmap_step_m > 0.0, "train_run.heatmap_step_m must be positive");
}

ExperimentConfig parse_config(const json& j) {
  if (j.is_object() && j.contains("tool") && j.contains("config")) return parse_config(j.at("config"));
  ExperimentConfig c;
  if (!j.is_object()) throw ConfigError("config: expected an object");
  auto secs = sections(c);
  for (const auto& [key, v] : j.items()) {
    if (key == "scenario") {
      c.scenario = get_as<std::string>(v, key);
    } else if (key == "seed") {
      c.seed = get_as<uint64_t>(v, key);
    } else {
      auto it = std::find_if(secs.begin(), secs.end(), [&](const auto& s) { return s.first == key; });
      if (it == secs.end()) throw ConfigError("unknown config key " + key);
      read_fields(v, key, it->second);
    }
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_config(j);
}

json to_json(const ExperimentConfig& config) {
  ExperimentConfig c = config;
  json j = json::object();
  j["scenario"] = c.scenario;
  j["seed"] = c.seed;
  for (const auto& [name, fields] : sections(c)) j[name] = write_fields(fields);
  return j;
}

void apply_overrides(ExperimentConfig& config, const Overrides& ov) {
  const std::string& s = config.scenario;
  const bool all = s == "e2e";
  if (ov.seed) config.seed = *ov.seed;
  if (ov.snr_db) {
    if (ov.snr_db->empty()) throw ConfigError("--snr-db needs at least one value");
    if (all || s == "frame-timing") config.frame_timing.snr_grid_db = *ov.snr_db;
    if (all || s == "cfo") config.cfo.snr_grid_db = *ov.snr_db;
    if (all || s == "constellation") config.constellation.snr_db = ov.snr_db->front();
    if (all || s == "apb" || s == "train") config.protocol.snr_db = ov.snr_db->front();
  }
  if (ov.trials) {
    const int n = *ov.trials;
    if (all || s == "frame-timing") config.frame_timing.trials = n;
    if (all || s == "cfo") config.cfo.trials = config.cfo.tracking_trials = n;
    if (all || s == "apb") config.apb.rounds = n;
    if (all || s == "train") config.train.rounds = n;
    if (s == "constellation") config.constellation.data_symbols = n;
  }
  if (ov.no_compensation) config.protocol.compensation = false;
  config.validate();
}

void Table::add(std::vector<Cell> row) {
  if (row.size() != columns.size()) throw Error("table " + name + ": row width does not match the header");
  rows.push_back(std::move(row));
}

// ---- building blocks -------------------------------------------------------

namespace {

enum Tag : uint64_t {
  kFrameTiming = 1,
  kCoarseCfo,
  kTracking,
  kCfoDraw,
  kConstLinks,
  kConstNoise,
  kApbLinks,
  kApbSession,
  kApbPayload,
  kMapField,
  kMapSamples,
  kTrainLinks,
  kTrainSession,
  kTrainBatches,
};

uint64_t seed_of(uint64_t seed, uint64_t tag, uint64_t a = 0, uint64_t b = 0) {
  return mix_seed(mix_seed(mix_seed(seed, tag), a), b);
}

double snr_linear(double snr_db) { return std::pow(10.0, snr_db / 10.0); }

/// Per-sample noise variance for a link whose OFDM symbols carry unit carrier power.
double link_noise_var(const PhyConfig& phy, double snr_db) {
  if (std::isinf(snr_db) && snr_db > 0) return 0.0;
  return (1.0 / phy.n_fft) / snr_linear(snr_db);
}

double tone_noise_var(double amp, double snr_db) {
  if (std::isinf(snr_db) && snr_db > 0) return 0.0;
  return amp * amp / snr_linear(snr_db);
}

SampleStream symbols_stream(const std::vector<OfdmSymbol>& syms, const PhyConfig& phy) {
  cvec out(static_cast<Eigen::Index>(syms.size()) * phy.symbol_len());
  for (size_t i = 0; i < syms.size(); ++i)
    out.segment(static_cast<Eigen::Index>(i) * phy.symbol_len(), phy.symbol_len()) = ofdm_modulate(syms[i], phy).samples;
  return {out, 0.0};
}

Bits random_bits(size_t n, std::mt19937_64& rng) {
  Bits b(n);
  for (auto& x : b) x = static_cast<uint8_t>(rng() & 1U);
  return b;
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const auto idx = static_cast<size_t>(std::ceil(q * static_cast<double>(v.size()))) - 1;
  return v[std::min(idx, v.size() - 1)];
}

json flags_json(const std::vector<std::string>& flags) { return json(flags); }

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

json summary(const std::string& scenario, json metrics) {
  return json{{"scenario", scenario}, {"kind", "summary"}, {"metrics", std::move(metrics)}};
}

}  // namespace

FtTrial frame_timing_trial(const PhyConfig& phy, int m_ft, double snr_db, double cfo_max_hz, uint64_t seed) {
  std::mt19937_64 rng(seed);
  PhyConfig cfg = phy;
  cfg.m_ft = m_ft;
  cfg.gamma_th = (m_ft - 2) / 2.0;
  const FtSequence ft = gen_ft(m_ft, phy.ft_seed);

  const int64_t start = std::uniform_int_distribution<int64_t>(0, m_ft)(rng);
  const OfdmSymbol sym = map_qam(random_bits(2 * static_cast<size_t>(phy.used_count()), rng), 4, phy).front();
  const cvec body = ofdm_modulate(sym, phy).samples;

  SampleStream r{cvec::Zero(start + m_ft + body.size() + m_ft), 0.0};
  r.samples.segment(start, m_ft) = ft_waveform(ft, phy.ft_amp).samples;
  r.samples.segment(start + m_ft, body.size()) = body;
  if (cfo_max_hz > 0.0) r = apply_cfo(r, std::uniform_real_distribution<double>(-cfo_max_hz, cfo_max_hz)(rng), phy);
  add_noise(r, tone_noise_var(phy.ft_amp, snr_db), rng);
  return {detect_frame(r, ft, cfg), start};
}

double coarse_cfo_trial(const PhyConfig& phy, double cfo_hz, double snr_db, uint64_t seed) {
  SampleStream s = gen_cfo_subframe(phy, phy.m_cfo_init + phy.l_span, phy.cfo_pilot_amp);
  s = apply_cfo(s, cfo_hz, phy);
  std::mt19937_64 rng(seed);
  add_noise(s, tone_noise_var(phy.cfo_pilot_amp, snr_db), rng);
  return coarse_cfo_estimate(s, phy) - cfo_hz;
}

TrackingTrial tracking_trial(const PhyConfig& phy, const ChannelConfig& channel, const CfoScenarioConfig& cfg,
                             uint64_t seed) {
  std::mt19937_64 rng(seed);
  SensorLinkState link = draw_link(phy, channel, rng);
  link.cfo_hz = std::uniform_real_distribution<double>(-cfg.tracking_max_hz, cfg.tracking_max_hz)(rng);
  TrackingTrial out{link.cfo_hz, {}};

  const OfdmSymbol pilot = make_pilot_plan(phy, 1, phy.pilot_seed).pilot_symbols.front();
  const double nv = link_noise_var(phy, cfg.tracking_snr_db);
  CfoEstimate st;
  for (int p = 0; p <= cfg.tracking_pilots; ++p) {
    const int64_t start = std::llround(p * cfg.tracking_interval_s * phy.fs_hz);
    const double t = static_cast<double>(start) * phy.ts();
    SampleStream y = propagate(ofdm_modulate(pilot, phy, t), link, Direction::DL, phy);
    add_noise(y, nv, rng);
    st = track_residual_cfo(st, ofdm_demodulate(y, phy, phy.cp_len, phy.cp_backoff), t, phy);
    if (p > 0) out.estimates.push_back(st.residual_hz);
  }
  return out;
}

std::vector<SensorLinkState> draw_links(const ExperimentConfig& config, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<SensorLinkState> links;
  for (int k = 0; k < config.protocol.k_sensors; ++k) links.push_back(draw_link(config.phy, config.channel, rng));
  return links;
}

std::vector<ApbRound> apb_rounds(const ExperimentConfig& config, bool compensate) {
  ProtocolConfig pc = config.protocol;
  pc.compensation = compensate;
  OtaSession session(config.phy, pc, draw_links(config, seed_of(config.seed, kApbLinks)),
                     seed_of(config.seed, kApbSession));
  session.initialize();

  const int k_sensors = pc.k_sensors;
  const int used = config.phy.used_count();
  std::mt19937_64 rng(seed_of(config.seed, kApbPayload));
  std::uniform_real_distribution<double> u(-1.0, 1.0);

  std::vector<ApbRound> out;
  for (int r = 0; r < config.apb.rounds; ++r) {
    std::vector<std::vector<vec>> payloads(k_sensors);
    vec truth = vec::Zero(static_cast<Eigen::Index>(config.apb.data_symbols) * used);
    for (int k = 0; k < k_sensors; ++k)
      for (int d = 0; d < config.apb.data_symbols; ++d) {
        vec v(used);
        for (Eigen::Index i = 0; i < used; ++i) v[i] = u(rng);
        truth.segment(static_cast<Eigen::Index>(d) * used, used) += v;
        payloads[k].push_back(std::move(v));
      }
    RoundResult res = session.aggregate(payloads);
    vec est(truth.size());
    for (int d = 0; d < config.apb.data_symbols; ++d)
      est.segment(static_cast<Eigen::Index>(d) * used, used) = res.aggregate[d];
    out.push_back({r, nmse(est, truth), std::move(res)});
  }
  return out;
}

vec OtaAggregator::operator()(const std::vector<vec>& local, int) {
  if (static_cast<int>(local.size()) != session_.k_sensors())
    throw Error("OtaAggregator: one gradient per sensor expected");
  std::vector<double> maxes;
  for (const vec& g : local) maxes.push_back(robust_max(g, policy_.percentile));
  const double s = agree_scale(maxes, policy_);

  const int carriers = session_.phy().used_count();
  std::vector<std::vector<vec>> payloads;
  int clipped = 0;
  for (const vec& g : local) {
    GradientPayload p = chunk_payload(g, s, carriers, policy_);
    clipped += p.clipped;
    payloads.push_back(std::move(p.chunks));
  }
  last_ = session_.aggregate(payloads);
  last_scale_ = s;
  last_clipped_ = clipped;
  return dechunk_payload(last_.aggregate, static_cast<int>(local.front().size()), s);
}

TrainOutcome train_outcome(const ExperimentConfig& config) {
  const RssField field(config.map, seed_of(config.seed, kMapField));
  const RssDataset data = gen_rss_map(field, seed_of(config.seed, kMapSamples));
  TrainConfig tc = config.train;
  tc.seed = seed_of(config.seed, kTrainBatches, config.train.seed);

  OtaSession session(config.phy, config.protocol, draw_links(config, seed_of(config.seed, kTrainLinks)),
                     seed_of(config.seed, kTrainSession));
  session.initialize();
  OtaAggregator ota(session, tc.scale);

  TrainOutcome out;
  const Aggregator aggregate = [&](const std::vector<vec>& local, int t) {
    vec g = ota(local, t);
    out.scale.push_back(ota.last_scale());
    out.clipped.push_back(ota.last_clipped());
    out.attempts.push_back(ota.last_round().attempts);
    out.flags.push_back(join(ota.last_round().flags, ';'));
    return g;
  };
  out.ota = train(data, tc, aggregate);
  if (config.train_run.offline) out.offline = offline_baseline(data, tc);
  out.heatmap = prediction_heatmap(out.ota.model, field, data, config.train_run.heatmap_step_m);
  out.median_nmse = median_nmse(out.heatmap);
  return out;
}

// ---- scenarios -------------------------------------------------------------

ScenarioOutput run_frame_timing(const ExperimentConfig& config) {
  const auto& c = config.frame_timing;
  const double cfo_max = c.apply_cfo && config.channel.impairments ? config.channel.cfo_max_hz : 0.0;
  ScenarioOutput out;
  Table t{"frame-timing", {"m_ft", "snr_db", "trials", "p_detect", "p_correct_sync", "mean_peak"}, {}};
  for (size_t mi = 0; mi < c.m_ft_grid.size(); ++mi) {
    const int m = c.m_ft_grid[mi];
    for (size_t si = 0; si < c.snr_grid_db.size(); ++si) {
      const double snr = c.snr_grid_db[si];
      int64_t valid = 0, correct = 0;
      double peak = 0.0;
      for (int i = 0; i < c.trials; ++i) {
        const FtTrial tr = frame_timing_trial(config.phy, m, snr, cfo_max, seed_of(config.seed, kFrameTiming, mi * 1000 + si, i));
        peak += tr.decision.peak;
        if (!tr.decision.valid) continue;
        ++valid;
        if (tr.decision.m0 == tr.true_m0) ++correct;
      }
      const double p_detect = static_cast<double>(valid) / c.trials;
      const double p_correct =
          valid ? static_cast<double>(correct) / static_cast<double>(valid) : std::numeric_limits<double>::quiet_NaN();
      t.add({int64_t{m}, snr, int64_t{c.trials}, p_detect, p_correct, peak / c.trials});
      out.trace.push_back({{"scenario", "frame-timing"}, {"m_ft", m}, {"snr_db", put_as(snr)}, {"valid", valid},
                           {"correct", correct}});
    }
  }
  out.tables.push_back(std::move(t));
  json m = json::object();
  for (const auto& row : out.tables.front().rows)
    if (std::get<int64_t>(row[0]) == config.phy.m_ft && std::get<double>(row[1]) == 10.0)
      m["p_correct_sync_10db"] = std::get<double>(row[4]);
  out.trace.push_back(summary("frame-timing", m));
  return out;
}

ScenarioOutput run_cfo(const ExperimentConfig& config) {
  const auto& c = config.cfo;
  const double cfo_max = config.channel.impairments ? config.channel.cfo_max_hz : 0.0;
  ScenarioOutput out;
  json metrics = json::object();

  Table coarse{"cfo",
               {"snr_db", "trials", "rms_residual_hz", "p95_abs_residual_hz", "max_abs_residual_hz", "frac_within_10hz"},
               {}};
  for (size_t si = 0; si < c.snr_grid_db.size(); ++si) {
    const double snr = c.snr_grid_db[si];
    std::vector<double> abs_res;
    double sq = 0.0;
    for (int i = 0; i < c.trials; ++i) {
      std::mt19937_64 draw(seed_of(config.seed, kCfoDraw, si, i));
      const double cfo = std::uniform_real_distribution<double>(-cfo_max, cfo_max)(draw);
      const double res = coarse_cfo_trial(config.phy, cfo, snr, seed_of(config.seed, kCoarseCfo, si, i));
      sq += res * res;
      abs_res.push_back(std::abs(res));
    }
    const auto within = std::count_if(abs_res.begin(), abs_res.end(), [](double r) { return r < 10.0; });
    const double frac = static_cast<double>(within) / c.trials;
    coarse.add({snr, int64_t{c.trials}, std::sqrt(sq / c.trials), quantile(abs_res, 0.95),
                *std::max_element(abs_res.begin(), abs_res.end()), frac});
    if (snr == 0.0) metrics["frac_within_10hz_0db"] = frac;
  }
  out.tables.push_back(std::move(coarse));

  Table track{"cfo_tracking", {"p", "trials", "nmse", "nmse_ratio_p1"}, {}};
  const int pilots = c.tracking_pilots;
  mat est(c.tracking_trials, pilots);
  vec truth(c.tracking_trials);
  for (int i = 0; i < c.tracking_trials; ++i) {
    const TrackingTrial tr = tracking_trial(config.phy, config.channel, c, seed_of(config.seed, kTracking, 0, i));
    truth[i] = tr.truth_hz;
    for (int p = 0; p < pilots; ++p) est(i, p) = tr.estimates[p];
  }
  std::vector<double> nm(pilots);
  for (int p = 0; p < pilots; ++p) nm[p] = cfo_nmse(est.col(p), truth);
  for (int p = 0; p < pilots; ++p) track.add({int64_t{p + 1}, int64_t{c.tracking_trials}, nm[p], nm[0] / nm[p]});
  out.tables.push_back(std::move(track));
  metrics["tracking_nmse_p1"] = nm.front();
  metrics["tracking_nmse_plast"] = nm.back();
  out.trace.push_back(summary("cfo", metrics));
  return out;
}

ScenarioOutput run_constellation(const ExperimentConfig& config) {
  const PhyConfig& phy = config.phy;
  const auto& c = config.constellation;
  const SensorLinkState link = draw_links(config, seed_of(config.seed, kConstLinks)).front();
  std::mt19937_64 rng(seed_of(config.seed, kConstNoise));
  const double nv = link_noise_var(phy, c.snr_db);

  // Coarse correction from the initialization preamble.
  const int64_t pre_len = phy.m_cfo_init + phy.l_span;
  SampleStream pre = propagate(gen_cfo_subframe(phy, pre_len, phy.cfo_pilot_amp), link, Direction::DL, phy);
  add_noise(pre, nv, rng);
  const double coarse =
      coarse_cfo_estimate(SampleStream{pre.samples.segment(phy.cp_len, pre_len), pre.t0_s + phy.cp_len * phy.ts()}, phy);

  const FrameLayout layout = digital_frame_layout(phy, 1, c.data_symbols);
  const OfdmSymbol pilot = make_pilot_plan(phy, 1, phy.pilot_seed).pilot_symbols.front();
  const int bps = c.order == 4 ? 2 : 4;
  const Bits bits = random_bits(static_cast<size_t>(bps) * phy.used_count() * c.data_symbols, rng);
  const std::vector<OfdmSymbol> data = map_qam(bits, c.order, phy);
  SampleStream frame = assemble_frame(layout, {{"ft", ft_waveform(gen_ft(phy, phy.ft_seed), phy.ft_amp)},
                                               {"cfo", gen_cfo_subframe(phy, phy.m_cfo_frame, phy.cfo_pilot_amp)},
                                               {"pilots", symbols_stream({pilot}, phy)},
                                               {"data", symbols_stream(data, phy)}});
  const int64_t start = pre_len + std::llround(config.protocol.round_gap_s * phy.fs_hz);
  frame.t0_s = static_cast<double>(start) * phy.ts();

  SampleStream y = propagate(frame, link, Direction::DL, phy);
  add_noise(y, nv, rng);
  y = apply_cfo(y, -coarse, phy);

  const int64_t base = phy.cp_len;
  const int64_t pilot_at = base + layout.section("pilots").offset;
  const FreqChannelEstimate h = ls_channel_estimate(ofdm_demodulate(y, phy, pilot_at, phy.cp_backoff), pilot,
                                                    frame.t0_s + (pilot_at - base) * phy.ts(), phy);

  ScenarioOutput out;
  Table summary_t{"constellation",
                  {"snr_db", "order", "symbols", "points", "symbol_errors", "ser", "evm_rms", "coarse_cfo_error_hz"},
                  {}};
  Table points{"constellation_points", {"symbol", "carrier", "tx_re", "tx_im", "rx_re", "rx_im", "eq_re", "eq_im"}, {}};
  const std::vector<int> used = phy.used_carriers();
  int64_t errors = 0, count = 0;
  double err_pow = 0.0, ref_pow = 0.0;
  for (int d = 0; d < c.data_symbols; ++d) {
    const int64_t at = base + layout.section("data").offset + static_cast<int64_t>(d) * phy.symbol_len();
    const OfdmSymbol rx = ofdm_demodulate(y, phy, at, phy.cp_backoff);
    const Equalized eq = equalize(rx, h);
    for (int n : used) {
      const int i = carrier_pos(n, phy.n_fft);
      const cplx tx = data[d].freq[i];
      const cplx e = eq.symbol.freq[i];
      Bits want, got;
      qam_decide(tx, c.order, want);
      qam_decide(e, c.order, got);
      if (want != got) ++errors;
      ++count;
      err_pow += std::norm(e - tx);
      ref_pow += std::norm(tx);
      points.add({int64_t{d}, int64_t{n}, tx.real(), tx.imag(), rx.freq[i].real(), rx.freq[i].imag(), e.real(),
                  e.imag()});
    }
  }
  const double ser = static_cast<double>(errors) / static_cast<double>(count);
  summary_t.add({c.snr_db, int64_t{c.order}, int64_t{c.data_symbols}, count, errors, ser, std::sqrt(err_pow / ref_pow),
                 coarse - link.cfo_hz});
  out.tables.push_back(std::move(summary_t));
  out.tables.push_back(std::move(points));
  out.trace.push_back(summary("constellation", {{"ser", ser}, {"evm_rms", std::sqrt(err_pow / ref_pow)}}));
  return out;
}

ScenarioOutput run_apb(const ExperimentConfig& config) {
  const bool comp = config.protocol.compensation;
  const std::vector<ApbRound> main = apb_rounds(config, comp);
  std::vector<ApbRound> paired;
  if (config.apb.paired_uncompensated && comp) paired = apb_rounds(config, false);

  ScenarioOutput out;
  Table t{"apb", {"round", "nmse_d", "nmse_d_uncompensated", "attempts", "flags"}, {}};
  std::vector<double> a, b;
  int64_t worse = 0;
  for (size_t r = 0; r < main.size(); ++r) {
    const double other = paired.empty() ? std::numeric_limits<double>::quiet_NaN() : paired[r].nmse;
    a.push_back(main[r].nmse);
    if (!paired.empty()) {
      b.push_back(other);
      if (other >= main[r].nmse) ++worse;
    }
    t.add({int64_t{main[r].round}, main[r].nmse, other, int64_t{main[r].result.attempts}, join(main[r].result.flags, ';')});

    json sensors = json::array();
    for (const auto& s : main[r].result.sensors)
      sensors.push_back({{"phi_hat", s.phi_hat}, {"tau_hat", s.tau_hat}, {"dfr_hat", s.dfr_hat},
                         {"power_gain", s.power_gain}, {"floored", s.floored}});
    out.trace.push_back({{"scenario", "apb"}, {"round", main[r].round}, {"nmse_d", main[r].nmse},
                         {"compensated", comp}, {"attempts", main[r].result.attempts},
                         {"flags", flags_json(main[r].result.flags)}, {"sensors", sensors}});
  }
  out.tables.push_back(std::move(t));

  Table cdf{"apb_cdf", {"series", "nmse_d", "cdf"}, {}};
  auto add_cdf = [&](std::vector<double> v, const std::string& name) {
    std::sort(v.begin(), v.end());
    for (size_t i = 0; i < v.size(); ++i)
      cdf.add({name, v[i], static_cast<double>(i + 1) / static_cast<double>(v.size())});
  };
  add_cdf(a, comp ? "compensated" : "uncompensated");
  if (!b.empty()) add_cdf(b, "uncompensated");
  out.tables.push_back(std::move(cdf));

  const auto below = std::count_if(a.begin(), a.end(), [](double v) { return v < 0.01; });
  json m{{"frac_below_0.01", static_cast<double>(below) / static_cast<double>(a.size())},
         {"max_nmse_d", *std::max_element(a.begin(), a.end())},
         {"median_nmse_d", quantile(a, 0.5)}};
  if (!b.empty()) m["frac_uncompensated_worse"] = static_cast<double>(worse) / static_cast<double>(b.size());
  out.trace.push_back(summary("apb", m));
  return out;
}

ScenarioOutput run_train(const ExperimentConfig& config) {
  const TrainOutcome r = train_outcome(config);
  ScenarioOutput out;
  const bool offline = config.train_run.offline;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  Table t{"train", {"t", "eta", "loss_ota", "loss_offline", "scale", "clipped", "attempts", "flags"}, {}};
  for (size_t i = 0; i < r.ota.loss.size(); ++i) {
    const int step = static_cast<int>(i);
    t.add({int64_t{step}, config.train.eta(step), r.ota.loss[i], offline ? r.offline.loss[i] : nan, r.scale[i],
           int64_t{r.clipped[i]}, int64_t{r.attempts[i]}, r.flags[i]});
    if (!r.flags[i].empty())
      out.trace.push_back({{"scenario", "train"}, {"t", step}, {"flags", r.flags[i]}, {"attempts", r.attempts[i]}});
  }
  out.tables.push_back(std::move(t));

  Table heat{"train_heatmap", {"x_m", "y_m", "truth_dbm", "pred_dbm", "nmse"}, {}};
  for (const HeatCell& c : r.heatmap) heat.add({c.p.x, c.p.y, c.truth_dbm, c.pred_dbm, c.nmse});
  out.tables.push_back(std::move(heat));

  const double final_ota = r.ota.loss.back();
  json m{{"final_loss_ota", final_ota}, {"median_heatmap_nmse", r.median_nmse},
         {"rejected_rounds", r.ota.rejected.size()}};
  if (offline) {
    m["final_loss_offline"] = r.offline.loss.back();
    m["relative_gap"] = (final_ota - r.offline.loss.back()) / r.offline.loss.back();
    double dev = 0.0;
    for (size_t i = 0; i < r.ota.loss.size(); ++i) dev = std::max(dev, std::abs(r.ota.loss[i] - r.offline.loss[i]));
    m["max_loss_deviation"] = dev;
  }
  out.trace.push_back(summary("train", m));
  return out;
}

ScenarioOutput run_scenario(const ExperimentConfig& config) {
  const std::string& s = config.scenario;
  if (s == "frame-timing") return run_frame_timing(config);
  if (s == "cfo") return run_cfo(config);
  if (s == "constellation") return run_constellation(config);
  if (s == "apb") return run_apb(config);
  if (s == "train") return run_train(config);
  if (s != "e2e") throw ConfigError("unknown scenario '" + s + "'");

  ScenarioOutput all;
  Table headline{"e2e", {"scenario", "metric", "value"}, {}};
  for (const auto& run : {run_frame_timing, run_cfo, run_constellation, run_apb, run_train}) {
    ScenarioOutput part = run(config);
    for (auto& t : part.tables) all.tables.push_back(std::move(t));
    for (auto& e : part.trace) {
      if (e.value("kind", "") == "summary")
        for (const auto& [k, v] : e["metrics"].items())
          headline.add({e["scenario"].get<std::string>(), k, v.is_number() ? v.get<double>() : std::numeric_limits<double>::quiet_NaN()});
      all.trace.push_back(std::move(e));
    }
  }
  all.tables.insert(all.tables.begin(), std::move(headline));
  return all;
}

}  // namespace airfed
