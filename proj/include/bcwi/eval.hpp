#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "bcwi/data.hpp"
#include "bcwi/errors.hpp"
#include "bcwi/merge.hpp"
#include "bcwi/model.hpp"
#include "bcwi/util.hpp"

namespace bcwi {

// Accuracy of the candidate model plus flip statistics against the old
// model's predictions on the same regression set.
struct EvalReport {
  double accuracy = 0.0;
  double nfr = 0.0;
  double positive_flip_rate = 0.0;
  std::vector<std::size_t> flip_indices;  // negative flips
  std::size_t n = 0;
};

inline EvalReport evaluate(std::span<const int> old_preds, std::span<const int> new_preds,
                           std::span<const int> gold) {
  if (old_preds.size() != gold.size() || new_preds.size() != gold.size())
    throw ConfigError("evaluate: prediction/gold length mismatch");
  if (gold.empty()) throw DataError("evaluate: empty regression set");
  EvalReport r;
  r.n = gold.size();
  std::size_t correct = 0, neg = 0, pos = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const bool old_ok = old_preds[i] == gold[i];
    const bool new_ok = new_preds[i] == gold[i];
    if (new_ok) ++correct;
    if (old_ok && !new_ok) {
      ++neg;
      r.flip_indices.push_back(i);
    }
    if (!old_ok && new_ok) ++pos;
  }
  const double n = static_cast<double>(r.n);
  r.accuracy = static_cast<double>(correct) / n;
  r.nfr = static_cast<double>(neg) / n;
  r.positive_flip_rate = static_cast<double>(pos) / n;
  return r;
}

inline std::vector<int> predict_all(const ParamVector& params,
                                    std::span<const FeaturizedExample> data) {
  std::vector<int> preds(data.size());
  ForwardScratch s;
  for (std::size_t i = 0; i < data.size(); ++i) preds[i] = predict(params, data[i].features, s);
  return preds;
}

inline std::vector<int> gold_labels(std::span<const FeaturizedExample> data) {
  std::vector<int> gold(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) gold[i] = data[i].label;
  return gold;
}

inline double accuracy_of(const ParamVector& params, std::span<const FeaturizedExample> data) {
  ForwardScratch s;
  std::size_t correct = 0;
  for (const FeaturizedExample& ex : data)
    if (predict(params, ex.features, s) == ex.label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Student-t confidence intervals
// ---------------------------------------------------------------------------

namespace detail {

inline double beta_cont_frac(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16;
  constexpr double kFpMin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

inline double reg_inc_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                       b * std::log1p(-x);
  const double bt = std::exp(ln_bt);
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * beta_cont_frac(a, b, x) / a;
  return 1.0 - bt * beta_cont_frac(b, a, 1.0 - x) / b;
}

}  // namespace detail

inline double student_t_cdf(double t, double df) {
  const double x = df / (df + t * t);
  const double tail = 0.5 * detail::reg_inc_beta(0.5 * df, 0.5, x);
  return t >= 0.0 ? 1.0 - tail : tail;
}

// Upper quantile by bisection; monotone CDF, so 200 halvings are plenty.
inline double student_t_quantile(double p, double df) {
  if (!(p > 0.0 && p < 1.0)) throw ConfigError("student_t_quantile: p must be in (0, 1)");
  if (!(df > 0.0)) throw ConfigError("student_t_quantile: df must be > 0");
  if (p == 0.5) return 0.0;
  const bool upper = p > 0.5;
  const double target = upper ? p : 1.0 - p;
  double lo = 0.0, hi = 1.0;
  while (student_t_cdf(hi, df) < target) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (student_t_cdf(mid, df) < target)
      lo = mid;
    else
      hi = mid;
  }
  const double q = 0.5 * (lo + hi);
  return upper ? q : -q;
}

struct SeedAggregate {
  std::vector<double> values;
  double mean = 0.0;
  double ci_halfwidth = 0.0;  // 95%, Student-t
};

inline SeedAggregate ci95(std::span<const double> values) {
  if (values.size() < 2) throw ConfigError("ci95: need at least 2 values");
  SeedAggregate a;
  a.values.assign(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  for (double v : values) a.mean += v;
  a.mean /= n;
  double ss = 0.0;
  for (double v : values) ss += (v - a.mean) * (v - a.mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  a.ci_halfwidth = student_t_quantile(0.975, n - 1.0) * sd / std::sqrt(n);
  return a;
}

inline bool ci_overlap(const SeedAggregate& a, const SeedAggregate& b) {
  return a.mean - a.ci_halfwidth <= b.mean + b.ci_halfwidth &&
         b.mean - b.ci_halfwidth <= a.mean + a.ci_halfwidth;
}

// ---------------------------------------------------------------------------
// Alpha trade-off curves
// ---------------------------------------------------------------------------

struct TradeoffPoint {
  double alpha = 0.0;
  double dev_acc = 0.0, dev_nfr = 0.0;
  double test_acc = 0.0, test_nfr = 0.0;
};

struct TradeoffCurve {
  std::vector<TradeoffPoint> points;
};

// Inclusive grid over [0, 1]; step must divide 1 evenly. Evaluates the merged
// model on the updated dev set and on the test set against the old model's
// predictions. Pass fisher to sweep the Fisher-weighted interpolation.
inline TradeoffCurve sweep_alpha(const ParamVector& old_model, const ParamVector& new_or_soup,
                                 const FisherDiagonal* fisher, const ScenarioData& data,
                                 double step = 0.05) {
  if (!(step > 0.0 && step <= 1.0)) throw ConfigError("sweep_alpha: step must be in (0, 1]");
  const auto num_steps = static_cast<std::size_t>(std::llround(1.0 / step));
  if (std::fabs(static_cast<double>(num_steps) * step - 1.0) > 1e-9)
    throw ConfigError("sweep_alpha: step must divide 1 evenly");

  const std::vector<int> dev_gold = gold_labels(data.updated_dev);
  const std::vector<int> test_gold = gold_labels(data.test);
  const std::vector<int> old_dev = predict_all(old_model, data.updated_dev);
  const std::vector<int> old_test = predict_all(old_model, data.test);

  TradeoffCurve curve;
  curve.points.resize(num_steps + 1);
  for (std::size_t k = 0; k <= num_steps; ++k) {
    const double alpha = static_cast<double>(k) / static_cast<double>(num_steps);
    const ParamVector merged = fisher != nullptr
                                   ? fisher_interpolate(alpha, *fisher, old_model, new_or_soup)
                                   : interpolate(alpha, old_model, new_or_soup);
    const EvalReport dev = evaluate(old_dev, predict_all(merged, data.updated_dev), dev_gold);
    const EvalReport test = evaluate(old_test, predict_all(merged, data.test), test_gold);
    curve.points[k] = TradeoffPoint{alpha, dev.accuracy, dev.nfr, test.accuracy, test.nfr};
  }
  return curve;
}

// Largest grid alpha whose dev accuracy stays above
//   old_dev_acc + retention * (new_dev_acc - old_dev_acc);
// 0 when no point qualifies.
inline double select_alpha(const TradeoffCurve& curve, double old_dev_acc, double new_dev_acc,
                           double retention) {
  if (!(retention > 0.0 && retention <= 1.0))
    throw ConfigError("select_alpha: retention must be in (0, 1]");
  if (curve.points.empty()) throw ConfigError("select_alpha: empty curve");
  const double threshold = old_dev_acc + retention * (new_dev_acc - old_dev_acc);
  double best = 0.0;
  for (const TradeoffPoint& p : curve.points)
    if (p.dev_acc >= threshold && p.alpha > best) best = p.alpha;
  return best;
}

inline const TradeoffPoint& curve_point_at(const TradeoffCurve& curve, double alpha) {
  for (const TradeoffPoint& p : curve.points)
    if (std::fabs(p.alpha - alpha) < 1e-12) return p;
  throw ConfigError("curve_point_at: alpha not on the grid");
}

inline std::string tradeoff_curve_csv(const TradeoffCurve& curve) {
  std::string out = "alpha,dev_acc,dev_nfr,test_acc,test_nfr\n";
  for (const TradeoffPoint& p : curve.points) {
    out += format_double(p.alpha) + ',' + format_double(p.dev_acc) + ',' +
           format_double(p.dev_nfr) + ',' + format_double(p.test_acc) + ',' +
           format_double(p.test_nfr) + '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// 2-D plane scan between three models
// ---------------------------------------------------------------------------

enum class PlaneMetric { kTrainLoss, kTestAcc, kTestNfr };

inline std::string to_string(PlaneMetric m) {
  switch (m) {
    case PlaneMetric::kTrainLoss: return "train_loss";
    case PlaneMetric::kTestAcc: return "test_acc";
    default: return "test_nfr";
  }
}

inline PlaneMetric plane_metric_from_string(const std::string& s) {
  if (s == "train_loss") return PlaneMetric::kTrainLoss;
  if (s == "test_acc") return PlaneMetric::kTestAcc;
  if (s == "test_nfr") return PlaneMetric::kTestNfr;
  throw ConfigError("unknown plane metric: " + s);
}

// Orthonormal basis of the plane through (old, new, target). The old model
// sits at the origin and the new model on the positive x axis.
struct PlaneBasis {
  ParamVector origin;
  std::vector<double> u, v;
  double new_x = 0.0;     // == l2_distance(old, new)
  double target_x = 0.0;
  double target_y = 0.0;
};

inline PlaneBasis make_plane_basis(const ParamVector& old_model, const ParamVector& new_model,
                                   const ParamVector& target_model) {
  require_compatible(old_model, new_model, "plane basis");
  require_compatible(old_model, target_model, "plane basis");
  PlaneBasis b;
  b.origin = old_model;
  const std::size_t n = old_model.size();
  b.u.resize(n);
  b.v.resize(n);
  auto ov = old_model.values();
  auto nv = new_model.values();
  auto tv = target_model.values();
  double d2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    b.u[i] = nv[i] - ov[i];
    d2 += b.u[i] * b.u[i];
  }
  const double dist = std::sqrt(d2);
  if (dist == 0.0) throw ConfigError("degenerate plane: new model equals old model");
  for (double& x : b.u) x /= dist;
  b.new_x = dist;

  double proj = 0.0, w2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = tv[i] - ov[i];
    proj += w * b.u[i];
    w2 += w * w;
  }
  double r2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    b.v[i] = (tv[i] - ov[i]) - proj * b.u[i];
    r2 += b.v[i] * b.v[i];
  }
  const double resid = std::sqrt(r2);
  if (resid <= 1e-12 * std::max(1.0, std::sqrt(w2)))
    throw ConfigError("degenerate plane: target model is collinear with old and new");
  for (double& x : b.v) x /= resid;
  b.target_x = proj;
  b.target_y = resid;
  return b;
}

inline ParamVector plane_point(const PlaneBasis& b, double x, double y) {
  ParamVector out = b.origin;
  auto r = out.values();
  for (std::size_t i = 0; i < r.size(); ++i) r[i] += x * b.u[i] + y * b.v[i];
  return out;
}

struct PlaneScan {
  std::size_t grid_n = 0;
  std::vector<double> xs, ys;     // grid coordinates, ascending
  std::vector<double> values;     // row-major: values[iy * grid_n + ix]
  double old_x = 0.0, old_y = 0.0;
  double new_x = 0.0, new_y = 0.0;
  double target_x = 0.0, target_y = 0.0;
  PlaneMetric metric = PlaneMetric::kTrainLoss;
};

// Evaluates the metric on a grid_n x grid_n grid spanning a bounding box with
// a 20% margin around the three projected models. Grid cells are independent
// and written into pre-indexed slots.
inline PlaneScan plane_scan(const ParamVector& old_model, const ParamVector& new_model,
                            const ParamVector& target_model, std::size_t grid_n,
                            const ScenarioData& data, PlaneMetric metric, unsigned threads = 0) {
  if (grid_n < 2) throw ConfigError("plane_scan: grid_n must be >= 2");
  const PlaneBasis basis = make_plane_basis(old_model, new_model, target_model);

  PlaneScan scan;
  scan.grid_n = grid_n;
  scan.metric = metric;
  scan.new_x = basis.new_x;
  scan.target_x = basis.target_x;
  scan.target_y = basis.target_y;

  const double x_lo_raw = std::min({0.0, basis.new_x, basis.target_x});
  const double x_hi_raw = std::max({0.0, basis.new_x, basis.target_x});
  const double y_lo_raw = std::min(0.0, basis.target_y);
  const double y_hi_raw = std::max(0.0, basis.target_y);
  const double x_margin = 0.2 * (x_hi_raw - x_lo_raw);
  const double y_margin = 0.2 * (y_hi_raw - y_lo_raw);
  const double x_lo = x_lo_raw - x_margin, x_hi = x_hi_raw + x_margin;
  const double y_lo = y_lo_raw - y_margin, y_hi = y_hi_raw + y_margin;

  scan.xs.resize(grid_n);
  scan.ys.resize(grid_n);
  for (std::size_t i = 0; i < grid_n; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(grid_n - 1);
    scan.xs[i] = x_lo + t * (x_hi - x_lo);
    scan.ys[i] = y_lo + t * (y_hi - y_lo);
  }

  const std::vector<int> test_gold = gold_labels(data.test);
  const std::vector<int> old_test = predict_all(old_model, data.test);

  scan.values.assign(grid_n * grid_n, 0.0);
  parallel_for(grid_n * grid_n, threads, [&](std::size_t cell) {
    const std::size_t iy = cell / grid_n, ix = cell % grid_n;
    const ParamVector theta = plane_point(basis, scan.xs[ix], scan.ys[iy]);
    double value = 0.0;
    switch (metric) {
      case PlaneMetric::kTrainLoss:
        value = mean_ce_loss(theta, data.updated_train);
        break;
      case PlaneMetric::kTestAcc:
        value = accuracy_of(theta, data.test);
        break;
      case PlaneMetric::kTestNfr:
        value = evaluate(old_test, predict_all(theta, data.test), test_gold).nfr;
        break;
    }
    scan.values[cell] = value;
  });
  return scan;
}

inline std::string plane_scan_csv(const PlaneScan& scan) {
  std::string out = "x,y,value\n";
  for (std::size_t iy = 0; iy < scan.grid_n; ++iy)
    for (std::size_t ix = 0; ix < scan.grid_n; ++ix)
      out += format_double(scan.xs[ix]) + ',' + format_double(scan.ys[iy]) + ',' +
             format_double(scan.values[iy * scan.grid_n + ix]) + '\n';
  return out;
}

}  // namespace bcwi
