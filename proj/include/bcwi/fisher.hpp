#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "bcwi/errors.hpp"
#include "bcwi/model.hpp"

namespace bcwi {

enum class FisherNormalization { kRaw, kMeanOne };

inline std::string to_string(FisherNormalization n) {
  return n == FisherNormalization::kRaw ? "raw" : "mean_one";
}

inline FisherNormalization fisher_normalization_from_string(const std::string& s) {
  if (s == "raw") return FisherNormalization::kRaw;
  if (s == "mean_one") return FisherNormalization::kMeanOne;
  throw ConfigError("unknown fisher normalization: " + s);
}

// Diagonal empirical Fisher information: per-parameter mean of the squared
// gradient of the observed-label log-probability.
struct FisherDiagonal {
  ModelSpec spec;
  std::vector<double> values;
  FisherNormalization normalization = FisherNormalization::kMeanOne;
  double epsilon_floor = 1e-8;

  bool compatible_with(const ParamVector& p) const { return spec == p.spec(); }
};

namespace detail {

// Squared gradient of log p(y|x) at params. The log-prob gradient is the
// negated cross-entropy gradient, so the squares coincide.
inline std::vector<double> squared_logprob_grad(const ParamVector& params,
                                                const FeaturizedExample& ex, ForwardScratch& s,
                                                std::vector<double>& dlogits) {
  forward_into(params, ex.features, s);
  dlogits.assign(s.probs.begin(), s.probs.end());
  dlogits[ex.label] -= 1.0;
  std::vector<double> grad(params.size(), 0.0);
  accumulate_backward(params, ex.features, s, dlogits, grad);
  for (double& g : grad) g *= g;
  return grad;
}

// Midpoint-split pairwise sum of per-example squared gradients. The fixed
// tree makes the reduction independent of thread count and gives exact
// invariance under dataset duplication: sum([d;d]) splits into sum(d)+sum(d).
inline std::vector<double> pairwise_squared_sum(const ParamVector& params,
                                                std::span<const FeaturizedExample> data,
                                                std::size_t lo, std::size_t hi, ForwardScratch& s,
                                                std::vector<double>& dlogits) {
  if (hi - lo == 1) return squared_logprob_grad(params, data[lo], s, dlogits);
  const std::size_t mid = lo + (hi - lo) / 2;
  std::vector<double> left = pairwise_squared_sum(params, data, lo, mid, s, dlogits);
  const std::vector<double> right = pairwise_squared_sum(params, data, mid, hi, s, dlogits);
  for (std::size_t i = 0; i < left.size(); ++i) left[i] += right[i];
  return left;
}

}  // namespace detail

inline FisherDiagonal compute_fisher(const ParamVector& params,
                                     std::span<const FeaturizedExample> data,
                                     FisherNormalization normalization = FisherNormalization::kMeanOne,
                                     double epsilon_floor = 1e-8) {
  if (data.empty()) throw DataError("compute_fisher: empty data");
  if (!params.all_finite()) throw NumericError("compute_fisher: non-finite parameters");
  for (const FeaturizedExample& ex : data) {
    if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= params.spec().num_classes)
      throw ConfigError("compute_fisher: label out of range");
    check_features(params.spec(), ex.features);
  }

  ForwardScratch s;
  std::vector<double> dlogits;
  FisherDiagonal f;
  f.spec = params.spec();
  f.normalization = normalization;
  f.epsilon_floor = epsilon_floor;
  f.values = detail::pairwise_squared_sum(params, data, 0, data.size(), s, dlogits);

  const double n = static_cast<double>(data.size());
  for (double& v : f.values) v /= n;

  if (normalization == FisherNormalization::kMeanOne) {
    double mean = 0.0;
    for (double v : f.values) mean += v;
    mean /= static_cast<double>(f.values.size());
    if (mean > 0.0)
      for (double& v : f.values) v /= mean;
  }
  for (double& v : f.values) v = std::max(v, epsilon_floor);
  return f;
}

}  // namespace bcwi
