#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bcwi/errors.hpp"
#include "bcwi/rng.hpp"

namespace bcwi {

enum class Activation { kTanh, kRelu };

inline std::string to_string(Activation a) {
  return a == Activation::kTanh ? "tanh" : "relu";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "relu") return Activation::kRelu;
  throw ConfigError("unknown activation: " + s);
}

// Feature-hashed bag-of-words classifier: sparse input, optional hidden
// layer, softmax head. hidden_dim == 0 selects the plain linear model.
struct ModelSpec {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t num_classes = 0;
  Activation activation = Activation::kTanh;

  bool operator==(const ModelSpec&) const = default;

  bool valid() const { return input_dim >= 1 && num_classes >= 2; }

  std::size_t param_count() const {
    if (hidden_dim > 0)
      return input_dim * hidden_dim + hidden_dim + hidden_dim * num_classes + num_classes;
    return input_dim * num_classes + num_classes;
  }
};

struct SegmentInfo {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

// Weight matrices are row-major with shape [fan_out, fan_in].
inline std::vector<SegmentInfo> segment_layout(const ModelSpec& spec) {
  std::vector<SegmentInfo> out;
  std::size_t off = 0;
  auto push = [&](std::string name, std::vector<std::size_t> shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    out.push_back(SegmentInfo{std::move(name), std::move(shape), off, n});
    off += n;
  };
  if (spec.hidden_dim > 0) {
    push("hidden_weight", {spec.hidden_dim, spec.input_dim});
    push("hidden_bias", {spec.hidden_dim});
    push("head_weight", {spec.num_classes, spec.hidden_dim});
    push("head_bias", {spec.num_classes});
  } else {
    push("head_weight", {spec.num_classes, spec.input_dim});
    push("head_bias", {spec.num_classes});
  }
  return out;
}

// Flat, named-segment container for all weights of one model.
class ParamVector {
 public:
  ParamVector() = default;

  explicit ParamVector(const ModelSpec& spec)
      : spec_(spec), layout_(segment_layout(spec)), values_(spec.param_count(), 0.0) {
    if (!spec.valid()) throw ConfigError("invalid model spec (need input_dim >= 1, num_classes >= 2)");
  }

  const ModelSpec& spec() const { return spec_; }
  const std::vector<SegmentInfo>& segments() const { return layout_; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::size_t size() const { return values_.size(); }

  std::span<double> segment(std::string_view name) {
    const SegmentInfo& s = find(name);
    return std::span<double>(values_).subspan(s.offset, s.size);
  }
  std::span<const double> segment(std::string_view name) const {
    const SegmentInfo& s = find(name);
    return std::span<const double>(values_).subspan(s.offset, s.size);
  }

  // Same segment names and shapes, elementwise.
  bool compatible_with(const ParamVector& other) const {
    if (layout_.size() != other.layout_.size()) return false;
    for (std::size_t i = 0; i < layout_.size(); ++i) {
      if (layout_[i].name != other.layout_[i].name) return false;
      if (layout_[i].shape != other.layout_[i].shape) return false;
    }
    return true;
  }

  bool all_finite() const {
    for (double v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  const SegmentInfo& find(std::string_view name) const {
    for (const SegmentInfo& s : layout_)
      if (s.name == name) return s;
    throw ConfigError("no such segment: " + std::string(name));
  }

  ModelSpec spec_;
  std::vector<SegmentInfo> layout_;
  std::vector<double> values_;
};

inline void require_compatible(const ParamVector& a, const ParamVector& b, const char* where) {
  if (!a.compatible_with(b))
    throw ConfigError(std::string(where) + ": incompatible parameter vectors");
}

// One featurized input: strictly increasing bucket indices, positive counts.
struct SparseFeatures {
  std::vector<std::uint32_t> indices;
  std::vector<double> counts;
};

struct FeaturizedExample {
  SparseFeatures features;
  int label = 0;
};

// Deterministic init: weight segments uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]
// drawn in segment order, biases zero. Pure function of (spec, seed).
inline ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
  ParamVector p(spec);
  SplitMix64 rng = seeded_stream(seed, "init");
  for (const SegmentInfo& seg : p.segments()) {
    if (seg.name.ends_with("_bias")) continue;
    const double scale = 1.0 / std::sqrt(static_cast<double>(seg.shape.back()));
    for (double& v : p.segment(seg.name)) v = rng.next_uniform(-scale, scale);
  }
  return p;
}

namespace detail {

template <typename T>
struct ParamViews {
  std::span<T> hidden_weight, hidden_bias, head_weight, head_bias;
};

template <typename T>
ParamViews<T> make_views(const ModelSpec& spec, std::span<T> flat) {
  ParamViews<T> v;
  const std::size_t d = spec.input_dim, h = spec.hidden_dim, c = spec.num_classes;
  if (h > 0) {
    v.hidden_weight = flat.subspan(0, d * h);
    v.hidden_bias = flat.subspan(d * h, h);
    v.head_weight = flat.subspan(d * h + h, h * c);
    v.head_bias = flat.subspan(d * h + h + h * c, c);
  } else {
    v.head_weight = flat.subspan(0, d * c);
    v.head_bias = flat.subspan(d * c, c);
  }
  return v;
}

}  // namespace detail

// Reusable per-example workspace; avoids allocation inside training loops.
struct ForwardScratch {
  std::vector<double> hidden_pre;
  std::vector<double> hidden;
  std::vector<double> logits;
  std::vector<double> probs;
  double log_z = 0.0;  // log-sum-exp of shifted logits plus the max logit
};

inline void check_features(const ModelSpec& spec, const SparseFeatures& x) {
  for (std::uint32_t idx : x.indices)
    if (idx >= spec.input_dim)
      throw ConfigError("feature index " + std::to_string(idx) + " out of range for input_dim " +
                        std::to_string(spec.input_dim));
}

inline void forward_into(const ParamVector& params, const SparseFeatures& x, ForwardScratch& s) {
  const ModelSpec& spec = params.spec();
  const std::size_t d = spec.input_dim, h = spec.hidden_dim, c = spec.num_classes;
  const auto views = detail::make_views<const double>(spec, params.values());

  s.logits.assign(c, 0.0);
  if (h > 0) {
    s.hidden_pre.assign(h, 0.0);
    for (std::size_t k = 0; k < x.indices.size(); ++k) {
      const std::size_t j = x.indices[k];
      const double cnt = x.counts[k];
      for (std::size_t i = 0; i < h; ++i) s.hidden_pre[i] += cnt * views.hidden_weight[i * d + j];
    }
    for (std::size_t i = 0; i < h; ++i) s.hidden_pre[i] += views.hidden_bias[i];
    s.hidden.resize(h);
    if (spec.activation == Activation::kTanh) {
      for (std::size_t i = 0; i < h; ++i) s.hidden[i] = std::tanh(s.hidden_pre[i]);
    } else {
      for (std::size_t i = 0; i < h; ++i) s.hidden[i] = s.hidden_pre[i] > 0.0 ? s.hidden_pre[i] : 0.0;
    }
    for (std::size_t k = 0; k < c; ++k) {
      double acc = views.head_bias[k];
      for (std::size_t i = 0; i < h; ++i) acc += views.head_weight[k * h + i] * s.hidden[i];
      s.logits[k] = acc;
    }
  } else {
    for (std::size_t k = 0; k < c; ++k) s.logits[k] = views.head_bias[k];
    for (std::size_t k = 0; k < x.indices.size(); ++k) {
      const std::size_t j = x.indices[k];
      const double cnt = x.counts[k];
      for (std::size_t i = 0; i < c; ++i) s.logits[i] += cnt * views.head_weight[i * d + j];
    }
  }

  // Softmax with max-logit subtraction.
  const double mx = *std::max_element(s.logits.begin(), s.logits.end());
  s.probs.resize(c);
  double z = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    s.probs[k] = std::exp(s.logits[k] - mx);
    z += s.probs[k];
  }
  for (std::size_t k = 0; k < c; ++k) s.probs[k] /= z;
  s.log_z = std::log(z) + mx;
}

inline std::vector<double> forward_probs(const ParamVector& params, const SparseFeatures& x) {
  check_features(params.spec(), x);
  ForwardScratch s;
  forward_into(params, x, s);
  return s.probs;
}

// Argmax over logits; ties resolve to the lowest class index.
inline int predict(const ParamVector& params, const SparseFeatures& x, ForwardScratch& s) {
  forward_into(params, x, s);
  std::size_t best = 0;
  for (std::size_t k = 1; k < s.logits.size(); ++k)
    if (s.logits[k] > s.logits[best]) best = k;
  return static_cast<int>(best);
}

inline int predict(const ParamVector& params, const SparseFeatures& x) {
  ForwardScratch s;
  return predict(params, x, s);
}

// Backprop of dL/dlogits for one example, accumulated into a flat gradient
// with the same segment layout as params. Must be called with the scratch
// left by forward_into on the same (params, x).
inline void accumulate_backward(const ParamVector& params, const SparseFeatures& x,
                                const ForwardScratch& s, std::span<const double> dlogits,
                                std::span<double> grad) {
  const ModelSpec& spec = params.spec();
  const std::size_t d = spec.input_dim, h = spec.hidden_dim, c = spec.num_classes;
  const auto w = detail::make_views<const double>(spec, params.values());
  const auto g = detail::make_views<double>(spec, grad);

  if (h > 0) {
    for (std::size_t k = 0; k < c; ++k) {
      const double dl = dlogits[k];
      if (dl == 0.0) continue;
      g.head_bias[k] += dl;
      for (std::size_t i = 0; i < h; ++i) g.head_weight[k * h + i] += dl * s.hidden[i];
    }
    for (std::size_t i = 0; i < h; ++i) {
      double dh = 0.0;
      for (std::size_t k = 0; k < c; ++k) dh += dlogits[k] * w.head_weight[k * h + i];
      double dpre;
      if (spec.activation == Activation::kTanh) {
        dpre = dh * (1.0 - s.hidden[i] * s.hidden[i]);
      } else {
        dpre = s.hidden_pre[i] > 0.0 ? dh : 0.0;
      }
      if (dpre == 0.0) continue;
      g.hidden_bias[i] += dpre;
      for (std::size_t k = 0; k < x.indices.size(); ++k)
        g.hidden_weight[i * d + x.indices[k]] += dpre * x.counts[k];
    }
  } else {
    for (std::size_t k = 0; k < c; ++k) {
      const double dl = dlogits[k];
      if (dl == 0.0) continue;
      g.head_bias[k] += dl;
      for (std::size_t i = 0; i < x.indices.size(); ++i)
        g.head_weight[k * d + x.indices[i]] += dl * x.counts[i];
    }
  }
}

// Optional quadratic pull toward an anchor: adds (strength/2)*||theta-anchor||^2
// to the loss and strength*(theta-anchor) to the gradient.
struct QuadraticPull {
  const ParamVector* anchor = nullptr;
  double strength = 0.0;
};

// Mean cross-entropy over the batch plus the optional pull term, with the
// exact analytic gradient.
inline std::pair<double, ParamVector> loss_and_grad(const ParamVector& params,
                                                    std::span<const FeaturizedExample> batch,
                                                    const QuadraticPull& pull = {}) {
  if (batch.empty()) throw DataError("loss_and_grad: empty batch");
  const ModelSpec& spec = params.spec();
  for (const FeaturizedExample& ex : batch) {
    if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= spec.num_classes)
      throw ConfigError("loss_and_grad: label out of range");
    check_features(spec, ex.features);
  }
  if (pull.anchor != nullptr) require_compatible(params, *pull.anchor, "loss_and_grad l2_toward");

  ParamVector grad(spec);
  ForwardScratch s;
  std::vector<double> dlogits(spec.num_classes);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const FeaturizedExample& ex : batch) {
    forward_into(params, ex.features, s);
    loss += (s.log_z - s.logits[ex.label]) * inv_b;
    for (std::size_t k = 0; k < s.probs.size(); ++k) dlogits[k] = s.probs[k] * inv_b;
    dlogits[ex.label] -= inv_b;
    accumulate_backward(params, ex.features, s, dlogits, grad.values());
  }

  if (pull.anchor != nullptr && pull.strength != 0.0) {
    auto p = params.values();
    auto a = pull.anchor->values();
    auto g = grad.values();
    double sq = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double diff = p[i] - a[i];
      sq += diff * diff;
      g[i] += pull.strength * diff;
    }
    loss += 0.5 * pull.strength * sq;
  }
  return {loss, std::move(grad)};
}

// Forward-only mean cross-entropy.
inline double mean_ce_loss(const ParamVector& params, std::span<const FeaturizedExample> data) {
  if (data.empty()) throw DataError("mean_ce_loss: empty data");
  ForwardScratch s;
  double loss = 0.0;
  for (const FeaturizedExample& ex : data) {
    forward_into(params, ex.features, s);
    loss += s.log_z - s.logits[ex.label];
  }
  return loss / static_cast<double>(data.size());
}

// Euclidean distance between compatible vectors.
inline double l2_distance(const ParamVector& a, const ParamVector& b) {
  require_compatible(a, b, "l2_distance");
  auto av = a.values();
  auto bv = b.values();
  double sq = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = av[i] - bv[i];
    sq += d * d;
  }
  return std::sqrt(sq);
}

}  // namespace bcwi
