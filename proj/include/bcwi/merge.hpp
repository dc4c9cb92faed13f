#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include "bcwi/errors.hpp"
#include "bcwi/fisher.hpp"
#include "bcwi/model.hpp"

namespace bcwi {

inline void check_alpha(double alpha, const char* where) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw ConfigError(std::string(where) + ": alpha must be in [0, 1]");
}

// Zero-pad an old model's classifier head up to target_spec's class count.
// Head rows for classes the old model never saw stay all-zero, so their
// logits are constant zero; every other segment is copied bit-exactly.
inline ParamVector align_old_head(const ParamVector& old_model, const ModelSpec& target_spec) {
  const ModelSpec& os = old_model.spec();
  if (os.input_dim != target_spec.input_dim || os.hidden_dim != target_spec.hidden_dim ||
      os.activation != target_spec.activation)
    throw ConfigError("align_old_head: specs differ in more than num_classes");
  if (os.num_classes > target_spec.num_classes)
    throw ConfigError("align_old_head: old model has more classes than the target spec");
  if (os.num_classes == target_spec.num_classes) return old_model;

  ParamVector out(target_spec);
  if (os.hidden_dim > 0) {
    auto src = old_model.segment("hidden_weight");
    auto dst = out.segment("hidden_weight");
    std::copy(src.begin(), src.end(), dst.begin());
    src = old_model.segment("hidden_bias");
    dst = out.segment("hidden_bias");
    std::copy(src.begin(), src.end(), dst.begin());
  }
  auto src_w = old_model.segment("head_weight");
  auto dst_w = out.segment("head_weight");
  std::copy(src_w.begin(), src_w.end(), dst_w.begin());  // old rows are a prefix
  auto src_b = old_model.segment("head_bias");
  auto dst_b = out.segment("head_bias");
  std::copy(src_b.begin(), src_b.end(), dst_b.begin());
  return out;
}

// Inverse of align_old_head: keep only the first num_classes head rows.
inline ParamVector truncate_head(const ParamVector& model, std::size_t num_classes) {
  const ModelSpec& ms = model.spec();
  if (num_classes > ms.num_classes) throw ConfigError("truncate_head: cannot grow the head");
  if (num_classes < 2) throw ConfigError("truncate_head: need at least 2 classes");
  if (num_classes == ms.num_classes) return model;

  ModelSpec spec = ms;
  spec.num_classes = num_classes;
  ParamVector out(spec);
  if (ms.hidden_dim > 0) {
    auto src = model.segment("hidden_weight");
    auto dst = out.segment("hidden_weight");
    std::copy(src.begin(), src.end(), dst.begin());
    src = model.segment("hidden_bias");
    dst = out.segment("hidden_bias");
    std::copy(src.begin(), src.end(), dst.begin());
  }
  auto src_w = model.segment("head_weight");
  auto dst_w = out.segment("head_weight");
  std::copy(src_w.begin(), src_w.begin() + static_cast<std::ptrdiff_t>(dst_w.size()), dst_w.begin());
  auto src_b = model.segment("head_bias");
  auto dst_b = out.segment("head_bias");
  std::copy(src_b.begin(), src_b.begin() + static_cast<std::ptrdiff_t>(dst_b.size()), dst_b.begin());
  return out;
}

// theta = alpha * old + (1 - alpha) * new, elementwise. The endpoints return
// the corresponding input bit-exactly.
inline ParamVector interpolate(double alpha, const ParamVector& old_model,
                               const ParamVector& new_model) {
  check_alpha(alpha, "interpolate");
  require_compatible(old_model, new_model, "interpolate");
  if (alpha == 0.0) return new_model;
  if (alpha == 1.0) return old_model;
  ParamVector out = new_model;
  auto o = old_model.values();
  auto n = new_model.values();
  auto r = out.values();
  const double wb = 1.0 - alpha;
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = alpha * o[i] + wb * n[i];
  return out;
}

// theta = (alpha*F*old + (1-alpha)*new) / (alpha*F + (1-alpha)), elementwise.
// With F identically one the denominator is exactly 1.0 for every alpha in
// [0, 1], so the result matches interpolate() bit for bit.
inline ParamVector fisher_interpolate(double alpha, const FisherDiagonal& fisher,
                                      const ParamVector& old_model, const ParamVector& new_model) {
  check_alpha(alpha, "fisher_interpolate");
  require_compatible(old_model, new_model, "fisher_interpolate");
  if (!fisher.compatible_with(old_model))
    throw ConfigError("fisher_interpolate: fisher diagonal incompatible with the models");
  if (fisher.values.size() != old_model.size())
    throw ConfigError("fisher_interpolate: fisher diagonal has wrong length");
  for (double v : fisher.values)
    if (!(v > 0.0))
      throw ConfigError("fisher_interpolate: fisher values must be positive (epsilon floor)");
  if (alpha == 0.0) return new_model;

  ParamVector out = new_model;
  auto o = old_model.values();
  auto n = new_model.values();
  auto r = out.values();
  const double wb = 1.0 - alpha;
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double wa = alpha * fisher.values[i];
    r[i] = (wa * o[i] + wb * n[i]) / (wa + wb);
  }
  return out;
}

// Elementwise arithmetic mean, summed in list order.
inline ParamVector soup(std::span<const ParamVector> models) {
  if (models.empty()) throw ConfigError("soup: empty model list");
  for (std::size_t j = 1; j < models.size(); ++j)
    require_compatible(models[0], models[j], "soup");
  ParamVector out = models[0];
  auto r = out.values();
  for (std::size_t j = 1; j < models.size(); ++j) {
    auto v = models[j].values();
    for (std::size_t i = 0; i < r.size(); ++i) r[i] += v[i];
  }
  const double inv_m = 1.0 / static_cast<double>(models.size());
  if (models.size() > 1)
    for (std::size_t i = 0; i < r.size(); ++i) r[i] *= inv_m;
  return out;
}

inline ParamVector soup_interpolate(double alpha, const ParamVector& old_model,
                                    std::span<const ParamVector> models) {
  return interpolate(alpha, old_model, soup(models));
}

// Weighted average of output probabilities. The old model's distribution is
// zero-extended over the trailing num_new_classes entries.
inline std::vector<double> output_ensemble(double beta, std::span<const double> probs_old,
                                           std::span<const double> probs_new,
                                           std::size_t num_new_classes) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("output_ensemble: beta must be in [0, 1]");
  if (probs_new.size() < num_new_classes ||
      probs_old.size() != probs_new.size() - num_new_classes)
    throw ConfigError("output_ensemble: class counts do not line up");
  auto check_sum = [](std::span<const double> p, const char* name) {
    double s = 0.0;
    for (double v : p) s += v;
    if (std::fabs(s - 1.0) > 1e-9)
      throw ConfigError(std::string("output_ensemble: ") + name + " does not sum to 1");
  };
  check_sum(probs_old, "probs_old");
  check_sum(probs_new, "probs_new");

  std::vector<double> out(probs_new.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double po = i < probs_old.size() ? probs_old[i] : 0.0;
    out[i] = beta * po + (1.0 - beta) * probs_new[i];
  }
  return out;
}

}  // namespace bcwi
