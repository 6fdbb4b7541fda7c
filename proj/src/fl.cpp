#include "airfed/fl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace airfed {

// ---- RSS map ---------------------------------------------------------------

void RssMapConfig::validate() const {
  if (ap_sites.empty()) throw ConfigError("rss map needs at least one AP site");
  for (size_t i = 0; i < ap_sites.size(); ++i)
    for (size_t j = i + 1; j < ap_sites.size(); ++j)
      if (ap_sites[i].x == ap_sites[j].x && ap_sites[i].y == ap_sites[j].y)
        throw ConfigError("rss map AP sites must be distinct");
  if (!(radius_m > exclusion_m) || !(exclusion_m >= 0.0)) throw ConfigError("rss map needs radius > exclusion >= 0");
  if (!(d0_m > 0.0) || !(gamma > 0.0)) throw ConfigError("rss map needs d0 > 0 and gamma > 0");
  if (!(shadow_sigma_db >= 0.0) || !(shadow_corr_m > 0.0) || shadow_terms < 1)
    throw ConfigError("rss map shadowing parameters are invalid");
  if (k_sensors < 1 || n_samples < k_sensors) throw ConfigError("rss map needs n_samples >= k_sensors >= 1");
}

RssField::RssField(const RssMapConfig& config, uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  // Gaussian wavenumbers give a Gaussian spatial correlation with length shadow_corr_m.
  std::normal_distribution<double> k(0.0, 1.0 / config_.shadow_corr_m);
  std::uniform_real_distribution<double> ph(0.0, kTwoPi);
  for (int i = 0; i < config_.shadow_terms; ++i) {
    const double kx = k(rng);
    const double ky = k(rng);
    wave_k_.push_back({kx, ky});
    wave_phase_.push_back(ph(rng));
  }
}

double RssField::path_loss_dbm(const Point2& p) const {
  double best = -std::numeric_limits<double>::infinity();
  for (const Point2& s : config_.ap_sites) {
    const double d = std::max(std::hypot(p.x - s.x, p.y - s.y), 1e-3);
    best = std::max(best, config_.p0_dbm - 10.0 * config_.gamma * std::log10(d / config_.d0_m));
  }
  return best;
}

double RssField::shadowing_db(const Point2& p) const {
  if (config_.shadow_sigma_db == 0.0) return 0.0;
  double acc = 0.0;
  for (size_t i = 0; i < wave_k_.size(); ++i) acc += std::cos(wave_k_[i].x * p.x + wave_k_[i].y * p.y + wave_phase_[i]);
  return config_.shadow_sigma_db * std::sqrt(2.0 / static_cast<double>(wave_k_.size())) * acc;
}

double RssField::rss_dbm(const Point2& p) const { return path_loss_dbm(p) + shadowing_db(p); }

bool RssField::in_region(const Point2& p) const {
  if (std::hypot(p.x, p.y) > config_.radius_m) return false;
  for (const Point2& s : config_.ap_sites)
    if (std::hypot(p.x - s.x, p.y - s.y) < config_.exclusion_m) return false;
  return true;
}

mat RssDataset::inputs(int k) const {
  std::vector<const RssRecord*> sel;
  for (const RssRecord& r : records)
    if (k < 0 || r.owner == k) sel.push_back(&r);
  mat x(2, static_cast<Eigen::Index>(sel.size()));
  for (size_t i = 0; i < sel.size(); ++i) {
    x(0, static_cast<Eigen::Index>(i)) = sel[i]->lat_norm;
    x(1, static_cast<Eigen::Index>(i)) = sel[i]->lon_norm;
  }
  return x;
}

vec RssDataset::targets(int k) const {
  std::vector<double> y;
  for (const RssRecord& r : records)
    if (k < 0 || r.owner == k) y.push_back(r.rss_norm);
  return Eigen::Map<const vec>(y.data(), static_cast<Eigen::Index>(y.size()));
}

Eigen::Vector2d RssDataset::normalize(const Point2& p) const {
  return {(p.y + radius_m) / (2.0 * radius_m), (p.x + radius_m) / (2.0 * radius_m)};
}

double RssDataset::denormalize_rss(double rss_norm) const {
  return rss_min_dbm + rss_norm * (rss_max_dbm - rss_min_dbm);
}

RssDataset gen_rss_map(const RssField& field, uint64_t seed) {
  const RssMapConfig& cfg = field.config();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-cfg.radius_m, cfg.radius_m);
  RssDataset data;
  data.radius_m = cfg.radius_m;
  while (static_cast<int>(data.records.size()) < cfg.n_samples) {
    const Point2 p{u(rng), u(rng)};
    if (!field.in_region(p)) continue;
    RssRecord r;
    r.x_m = p.x;
    r.y_m = p.y;
    r.rss_dbm = field.rss_dbm(p);
    data.records.push_back(r);
  }
  const auto [lo, hi] = std::minmax_element(data.records.begin(), data.records.end(),
                                            [](const RssRecord& a, const RssRecord& b) { return a.rss_dbm < b.rss_dbm; });
  data.rss_min_dbm = lo->rss_dbm;
  data.rss_max_dbm = hi->rss_dbm;
  const int per = cfg.n_samples / cfg.k_sensors;
  for (size_t i = 0; i < data.records.size(); ++i) {
    RssRecord& r = data.records[i];
    const Eigen::Vector2d c = data.normalize({r.x_m, r.y_m});
    r.lat_norm = c[0];
    r.lon_norm = c[1];
    r.rss_norm = (r.rss_dbm - data.rss_min_dbm) / (data.rss_max_dbm - data.rss_min_dbm);
    r.owner = std::min(static_cast<int>(i) / per, cfg.k_sensors - 1);
  }
  std::vector<int> counts(static_cast<size_t>(cfg.k_sensors), 0);
  for (const RssRecord& r : data.records) ++counts[static_cast<size_t>(r.owner)];
  for (int c : counts) data.epsilon.push_back(static_cast<double>(c) / cfg.n_samples);
  return data;
}

// ---- payload ---------------------------------------------------------------

double robust_max(const vec& g, double percentile) {
  if (g.size() == 0) return 0.0;
  if (!(percentile > 0.0 && percentile <= 100.0)) throw ConfigError("percentile must be in (0, 100]");
  std::vector<double> a(static_cast<size_t>(g.size()));
  for (Eigen::Index i = 0; i < g.size(); ++i) a[static_cast<size_t>(i)] = std::abs(g[i]);
  const auto n = static_cast<double>(a.size());
  const size_t rank = static_cast<size_t>(std::max(1.0, std::ceil(percentile * n / 100.0 - 1e-9)));
  std::nth_element(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(rank - 1), a.end());
  return a[rank - 1];
}

double agree_scale(const std::vector<double>& robust_maxes, const ScalePolicy& policy) {
  double m = 0.0;
  for (double v : robust_maxes) m = std::max(m, v);
  if (!(m > 0.0) || !std::isfinite(m)) return 1.0;
  return policy.bound / m;
}

GradientPayload chunk_payload(const vec& g, double scale, int carriers, const ScalePolicy& policy) {
  if (carriers < 1) throw Error("chunk_payload: carriers must be >= 1");
  GradientPayload out;
  out.values = g;
  out.scale = scale;
  const Eigen::Index n = g.size();
  const Eigen::Index n_chunks = std::max<Eigen::Index>(1, (n + carriers - 1) / carriers);
  vec flat = vec::Zero(n_chunks * carriers);
  for (Eigen::Index i = 0; i < n; ++i) {
    double v = g[i] * scale;
    if (std::abs(v) > 1.0) {
      if (!policy.clip) throw Error("chunk_payload: scaled value outside [-1, 1] with clipping disabled");
      v = std::clamp(v, -1.0, 1.0);
      ++out.clipped;
    }
    flat[i] = v;
  }
  for (Eigen::Index c = 0; c < n_chunks; ++c) out.chunks.push_back(flat.segment(c * carriers, carriers));
  return out;
}

vec dechunk_payload(const std::vector<vec>& chunks, int length, double scale) {
  Eigen::Index total = 0;
  for (const vec& c : chunks) total += c.size();
  if (length > total) throw Error("dechunk_payload: fewer values than the requested length");
  vec out(length);
  Eigen::Index i = 0;
  for (const vec& c : chunks)
    for (Eigen::Index j = 0; j < c.size() && i < length; ++j) out[i++] = c[j];
  return out / scale;
}

// ---- training --------------------------------------------------------------

void TrainConfig::validate() const {
  if (rounds < 0) throw ConfigError("train.rounds must be >= 0");
  if (batch < 1) throw ConfigError("train.batch must be >= 1");
  if (!(eta_num > 0.0) || !(eta_offset > 0.0)) throw ConfigError("train learning-rate schedule must be positive");
  if (shape.in != 2 || shape.out != 1 || shape.h1 < 1 || shape.h2 < 1)
    throw ConfigError("train model must map 2 inputs to 1 output");
  if (!(scale.bound > 0.0 && scale.bound <= 1.0)) throw ConfigError("train.scale_bound must be in (0, 1]");
}

vec local_gradient(const Model& model, const RssDataset& data, int k, const std::vector<int>& batch,
                   const TrainConfig& config) {
  if (batch.empty()) throw Error("local_gradient: empty batch");
  const mat x_all = data.inputs(k);
  const vec y_all = data.targets(k);
  mat x(2, static_cast<Eigen::Index>(batch.size()));
  mat y(1, static_cast<Eigen::Index>(batch.size()));
  for (size_t i = 0; i < batch.size(); ++i) {
    x.col(static_cast<Eigen::Index>(i)) = x_all.col(batch[i]);
    y(0, static_cast<Eigen::Index>(i)) = y_all[batch[i]];
  }
  const double eps = data.epsilon.at(static_cast<size_t>(k));
  const double weight = config.sum_loss ? eps * static_cast<double>(batch.size()) : eps;
  return model.mse_gradient(x, y, weight);
}

bool global_update(Model& model, const vec& g, double eta) {
  if (g.size() != model.params().size()) throw Error("global_update: gradient length differs from the model");
  if (!g.allFinite()) return false;
  model.params() -= eta * g;
  return true;
}

std::vector<int> draw_batch(const RssDataset& data, int k, int t, const TrainConfig& config) {
  int n = 0;
  for (const RssRecord& r : data.records) n += r.owner == k ? 1 : 0;
  if (config.batch > n) throw ConfigError("train.batch exceeds the local dataset size");
  std::mt19937_64 rng(mix_seed(mix_seed(config.seed, static_cast<uint64_t>(t)), static_cast<uint64_t>(k)));
  std::vector<int> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < config.batch; ++i) {
    std::uniform_int_distribution<int> pick(i, n - 1);
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(pick(rng))]);
  }
  idx.resize(static_cast<size_t>(config.batch));
  return idx;
}

TrainResult train(const RssDataset& data, const TrainConfig& config, const Aggregator& aggregate) {
  config.validate();
  TrainResult res{{}, {}, Model::glorot(config.shape, config.seed)};
  const mat x = data.inputs();
  const mat y = data.targets().transpose();
  res.loss.reserve(static_cast<size_t>(config.rounds));
  for (int t = 0; t < config.rounds; ++t) {
    std::vector<vec> local;
    for (int k = 0; k < data.k_sensors(); ++k)
      local.push_back(local_gradient(res.model, data, k, draw_batch(data, k, t, config), config));
    if (!global_update(res.model, aggregate(local, t), config.eta(t))) res.rejected.push_back(t);
    res.loss.push_back(res.model.mse(x, y));
  }
  return res;
}

vec exact_sum(const std::vector<vec>& local) {
  if (local.empty()) throw Error("exact_sum: no gradients");
  vec s = local.front();
  for (size_t i = 1; i < local.size(); ++i) s += local[i];
  return s;
}

TrainResult offline_baseline(const RssDataset& data, const TrainConfig& config) {
  return train(data, config, [](const std::vector<vec>& local, int) { return exact_sum(local); });
}

// ---- evaluation ------------------------------------------------------------

std::vector<HeatCell> prediction_heatmap(const Model& model, const RssField& field, const RssDataset& data,
                                         double step_m) {
  if (!(step_m > 0.0)) throw ConfigError("heatmap step must be positive");
  const double r = field.config().radius_m;
  std::vector<HeatCell> cells;
  const int half = static_cast<int>(std::floor(r / step_m));
  for (int iy = -half; iy <= half; ++iy)
    for (int ix = -half; ix <= half; ++ix) {
      const Point2 p{ix * step_m, iy * step_m};
      if (field.in_region(p)) cells.push_back(HeatCell{p});
    }
  mat x(2, static_cast<Eigen::Index>(cells.size()));
  for (size_t i = 0; i < cells.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = data.normalize(cells[i].p);
  const mat yhat = model.forward(x);
  for (size_t i = 0; i < cells.size(); ++i) {
    HeatCell& c = cells[i];
    c.truth_dbm = field.rss_dbm(c.p);
    c.pred_dbm = data.denormalize_rss(yhat(0, static_cast<Eigen::Index>(i)));
    const double e = (c.pred_dbm - c.truth_dbm) / c.truth_dbm;
    c.nmse = e * e;
  }
  return cells;
}

double median_nmse(const std::vector<HeatCell>& cells) {
  if (cells.empty()) throw Error("median_nmse: empty grid");
  std::vector<double> v;
  for (const HeatCell& c : cells) v.push_back(c.nmse);
  const size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  if (v.size() % 2 == 1) return v[mid];
  const double hi = v[mid];
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

}  // namespace airfed
