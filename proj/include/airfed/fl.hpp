#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <tuple>
#include <vector>

#include "airfed/types.hpp"

namespace airfed {

// ---- RSS map ---------------------------------------------------------------

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

struct RssMapConfig {
  std::vector<Point2> ap_sites{{-100.0, 0.0}, {100.0, 0.0}};
  double radius_m = 400.0;
  double exclusion_m = 20.0;
  double p0_dbm = -40.0;      // received power at d0
  double d0_m = 20.0;
  double gamma = 3.0;         // path-loss exponent
  double shadow_sigma_db = 4.0;
  double shadow_corr_m = 50.0;
  int shadow_terms = 64;
  int n_samples = 2000;
  int k_sensors = 2;

  void validate() const;
};

/// Log-distance coverage of the strongest site plus a fixed, spatially
/// correlated shadowing field (sum of random plane waves).
class RssField {
 public:
  RssField(const RssMapConfig& config, uint64_t seed);
  double rss_dbm(const Point2& p) const;
  double path_loss_dbm(const Point2& p) const;
  double shadowing_db(const Point2& p) const;
  /// Inside the circle and outside every exclusion disk.
  bool in_region(const Point2& p) const;
  const RssMapConfig& config() const { return config_; }

 private:
  RssMapConfig config_;
  std::vector<Point2> wave_k_;
  std::vector<double> wave_phase_;
};

struct RssRecord {
  double lat_norm = 0.0;
  double lon_norm = 0.0;
  double rss_norm = 0.0;
  int owner = 0;
  double x_m = 0.0;
  double y_m = 0.0;
  double rss_dbm = 0.0;
};

struct RssDataset {
  std::vector<RssRecord> records;
  std::vector<double> epsilon;  // epsilon_k = |D_k| / |D|
  double rss_min_dbm = 0.0;
  double rss_max_dbm = 0.0;
  double radius_m = 400.0;

  int k_sensors() const { return static_cast<int>(epsilon.size()); }
  /// Inputs (2 x n, rows lat, lon) and targets of sensor k; k = -1 selects every record.
  mat inputs(int k = -1) const;
  vec targets(int k = -1) const;
  /// Normalized coordinates of a point in metres.
  Eigen::Vector2d normalize(const Point2& p) const;
  double denormalize_rss(double rss_norm) const;
};

/// Uniform positions in the region, split evenly between sensors in draw order.
RssDataset gen_rss_map(const RssField& field, uint64_t seed);

// ---- MLP -------------------------------------------------------------------

struct MlpShape {
  int in = 2;
  int h1 = 20;
  int h2 = 20;
  int out = 1;
  int param_count() const { return h1 * in + h1 + h2 * h1 + h2 + out * h2 + out; }
};

/// Fully connected in -> h1 -> ReLU -> h2 -> ReLU -> out on a flat parameter
/// vector. Layout: W1 (h1 x in, column-major), b1, W2, b2, W3, b3.
template <typename S>
class Mlp {
 public:
  using MatS = Mat<S>;
  using VecS = Vec<S>;

  Mlp() : Mlp(MlpShape{}) {}
  explicit Mlp(const MlpShape& shape) : shape_(shape), w_(VecS::Zero(shape.param_count())) {}
  Mlp(const MlpShape& shape, VecS w) : shape_(shape), w_(std::move(w)) {
    if (w_.size() != shape_.param_count()) throw Error("Mlp: parameter count does not match the shape");
  }

  const MlpShape& shape() const { return shape_; }
  const VecS& params() const { return w_; }
  VecS& params() { return w_; }

  /// Predictions for each column of x (in x n), returned as out x n.
  MatS forward(const MatS& x) const {
    Cache c;
    return run(x, c);
  }

  /// Gradient of mean((f(x) - y)^2) with respect to the flat parameters,
  /// multiplied by `weight`. y is out x n.
  VecS mse_gradient(const MatS& x, const MatS& y, S weight = S(1)) const {
    if (x.cols() == 0) throw Error("mse_gradient: empty batch");
    Cache c;
    const MatS yhat = run(x, c);
    MatS d3 = (yhat - y) * (S(2) * weight / S(x.cols()));
    VecS g(w_.size());
    auto [gw1, gb1, gw2, gb2, gw3, gb3] = views(g);
    gw3.noalias() = d3 * c.a2.transpose();
    gb3 = d3.rowwise().sum();
    MatS d2 = (w3().transpose() * d3).cwiseProduct(relu_mask(c.z2));
    gw2.noalias() = d2 * c.a1.transpose();
    gb2 = d2.rowwise().sum();
    MatS d1 = (w2().transpose() * d2).cwiseProduct(relu_mask(c.z1));
    gw1.noalias() = d1 * x.transpose();
    gb1 = d1.rowwise().sum();
    return g;
  }

  S mse(const MatS& x, const MatS& y) const {
    if (x.cols() == 0) throw Error("mse: empty input");
    return (forward(x) - y).squaredNorm() / S(x.cols());
  }

  /// Seeded uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases.
  static Mlp glorot(const MlpShape& shape, uint64_t seed) {
    Mlp m(shape);
    std::mt19937_64 rng(seed);
    auto [w1, b1, w2, b2, w3, b3] = m.views(m.w_);
    auto fill = [&](auto&& w, int fan_in, int fan_out) {
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      const double lim = std::sqrt(6.0 / (fan_in + fan_out));
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = S(lim * u(rng));
    };
    fill(w1, shape.in, shape.h1);
    fill(w2, shape.h1, shape.h2);
    fill(w3, shape.h2, shape.out);
    b1.setZero(), b2.setZero(), b3.setZero();
    return m;
  }

 private:
  struct Cache {
    MatS z1, a1, z2, a2;
  };
  using MapM = Eigen::Map<MatS>;
  using MapV = Eigen::Map<VecS>;
  using CMapM = Eigen::Map<const MatS>;

  auto views(VecS& buf) const {
    const MlpShape& s = shape_;
    S* p = buf.data();
    MapM w1(p, s.h1, s.in);
    p += s.h1 * s.in;
    MapV b1(p, s.h1);
    p += s.h1;
    MapM w2(p, s.h2, s.h1);
    p += s.h2 * s.h1;
    MapV b2(p, s.h2);
    p += s.h2;
    MapM w3(p, s.out, s.h2);
    p += s.out * s.h2;
    MapV b3(p, s.out);
    return std::tuple{w1, b1, w2, b2, w3, b3};
  }
  CMapM w1() const { return CMapM(w_.data(), shape_.h1, shape_.in); }
  auto b1() const { return w_.segment(shape_.h1 * shape_.in, shape_.h1); }
  CMapM w2() const { return CMapM(w_.data() + off_w2(), shape_.h2, shape_.h1); }
  auto b2() const { return w_.segment(off_w2() + shape_.h2 * shape_.h1, shape_.h2); }
  CMapM w3() const { return CMapM(w_.data() + off_w3(), shape_.out, shape_.h2); }
  auto b3() const { return w_.segment(off_w3() + shape_.out * shape_.h2, shape_.out); }
  int off_w2() const { return shape_.h1 * shape_.in + shape_.h1; }
  int off_w3() const { return off_w2() + shape_.h2 * shape_.h1 + shape_.h2; }

  static MatS relu_mask(const MatS& z) { return (z.array() > S(0)).template cast<S>().matrix(); }

  MatS run(const MatS& x, Cache& c) const {
    if (x.rows() != shape_.in) throw Error("Mlp: input has the wrong number of rows");
    c.z1 = (w1() * x).colwise() + b1();
    c.a1 = c.z1.cwiseMax(S(0));
    c.z2 = (w2() * c.a1).colwise() + b2();
    c.a2 = c.z2.cwiseMax(S(0));
    return (w3() * c.a2).colwise() + b3();
  }

  MlpShape shape_;
  VecS w_;
};

using Model = Mlp<double>;

// ---- payload ---------------------------------------------------------------

struct ScalePolicy {
  double bound = 1.0;        // PAM amplitude reached by the robust maximum
  double percentile = 99.9;  // robust maximum of |g|, nearest rank
  bool clip = true;          // clip scaled values to [-1, 1]; otherwise out-of-range values throw
};

struct GradientPayload {
  vec values;               // unscaled gradient
  double scale = 1.0;       // s_t
  std::vector<vec> chunks;  // scaled, padded PAM vectors
  int clipped = 0;          // values clipped to [-1, 1]
};

/// Nearest-rank percentile of |g|.
double robust_max(const vec& g, double percentile);
/// s_t = bound / max_k robust_max_k; 1 when every robust maximum is 0.
double agree_scale(const std::vector<double>& robust_maxes, const ScalePolicy& policy);
/// Scale by s_t, clip, and split into vectors of `carriers` values (last one zero-padded).
GradientPayload chunk_payload(const vec& g, double scale, int carriers, const ScalePolicy& policy);
/// Concatenate, strip padding to `length` values and divide by s_t.
vec dechunk_payload(const std::vector<vec>& chunks, int length, double scale);

// ---- training --------------------------------------------------------------

struct TrainConfig {
  int rounds = 3000;
  int batch = 200;
  double eta_num = 2.0;      // eta_t = eta_num / (eta_offset + t)
  double eta_offset = 2000.0;
  bool sum_loss = true;      // gradient of the batch sum instead of the batch mean
  uint64_t seed = 1;
  MlpShape shape;
  ScalePolicy scale;

  double eta(int t) const { return eta_num / (eta_offset + t); }
  void validate() const;
};

/// epsilon_k * gradient of the batch loss.
vec local_gradient(const Model& model, const RssDataset& data, int k, const std::vector<int>& batch,
                   const TrainConfig& config);

/// w - eta * g. Returns false and leaves the model untouched when g is not finite.
bool global_update(Model& model, const vec& g, double eta);

/// Batch of sensor k at round t: `batch` distinct local record indices, seeded by (seed, t, k).
std::vector<int> draw_batch(const RssDataset& data, int k, int t, const TrainConfig& config);

/// Sum of the local gradients for round t, or any estimate of it.
using Aggregator = std::function<vec(const std::vector<vec>& local, int t)>;

struct TrainResult {
  std::vector<double> loss;       // full training-set MSE after each round
  std::vector<int> rejected;      // rounds whose aggregate was not finite
  Model model;
};

TrainResult train(const RssDataset& data, const TrainConfig& config, const Aggregator& aggregate);

/// Exact sum of local gradients.
vec exact_sum(const std::vector<vec>& local);
TrainResult offline_baseline(const RssDataset& data, const TrainConfig& config);

// ---- evaluation ------------------------------------------------------------

struct HeatCell {
  Point2 p;
  double truth_dbm = 0.0;
  double pred_dbm = 0.0;
  double nmse = 0.0;  // ((pred - truth) / truth)^2
};

/// Regular grid over the region with spacing step_m.
std::vector<HeatCell> prediction_heatmap(const Model& model, const RssField& field, const RssDataset& data,
                                         double step_m);
double median_nmse(const std::vector<HeatCell>& cells);

}  // namespace airfed
