#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <variant>
#include <vector>

#include "bcwi/data.hpp"
#include "bcwi/errors.hpp"
#include "bcwi/fisher.hpp"
#include "bcwi/model.hpp"
#include "bcwi/rng.hpp"

namespace bcwi {

enum class DataMode { kUpdated, kNewOnly };
enum class Role { kOld, kTarget, kNew };

struct TrainConfig {
  int epochs = 30;
  double base_lr = 0.05;
  int batch_size = 16;
  double warmup_ratio = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-6;
  double weight_decay = 0.01;
  double grad_clip_norm = 5.0;
  std::uint64_t seed = 0;
  DataMode data_mode = DataMode::kUpdated;

  void validate() const {
    if (epochs < 0) throw ConfigError("train config: epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
    if (!(warmup_ratio >= 0.0 && warmup_ratio <= 1.0))
      throw ConfigError("train config: warmup_ratio must be in [0, 1]");
    if (!(grad_clip_norm > 0.0)) throw ConfigError("train config: grad_clip_norm must be > 0");
  }
};

// Linear warmup from 0 to base_lr over ceil(warmup_ratio * total_steps)
// steps, then linear decay to 0 at total_steps.
inline double lr_at(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg) {
  if (total_steps < 1) throw ConfigError("lr_at: total_steps must be >= 1");
  if (step < 0 || step > total_steps) throw ConfigError("lr_at: step out of range");
  const auto warmup =
      static_cast<std::int64_t>(std::ceil(cfg.warmup_ratio * static_cast<double>(total_steps)));
  if (warmup > 0 && step <= warmup)
    return cfg.base_lr * (static_cast<double>(step) / static_cast<double>(warmup));
  if (warmup >= total_steps) return cfg.base_lr;
  return cfg.base_lr *
         (static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup));
}

// Training-time baselines.
struct RegNone {};
struct RegPriorWD {
  double lambda = 0.0;
};
struct RegEwc {
  double lambda = 0.0;
  FisherDiagonal fisher;
  ParamVector anchor;
};
struct RegMixout {
  double p = 0.0;
};
struct RegDistill {
  double lambda = 0.0;
  double focal_boost = 1.0;
  ParamVector teacher;
};
struct RegBiasOnly {};

using Regularizer = std::variant<RegNone, RegPriorWD, RegEwc, RegMixout, RegDistill, RegBiasOnly>;

// CE(student, label) + lambda * (1 + focal_boost*[teacher correct]) * KL(teacher || student).
// KL runs over the teacher's support, so a teacher distribution zero-extended
// over classes it was never trained on contributes nothing there.
inline double distill_loss(std::span<const double> student_probs,
                           std::span<const double> teacher_probs, int label, bool teacher_correct,
                           double lambda, double focal_boost) {
  if (student_probs.size() != teacher_probs.size())
    throw ConfigError("distill_loss: probability vectors differ in length");
  const double ce = -std::log(student_probs[label]);
  if (lambda == 0.0) return ce;
  double kl = 0.0;
  for (std::size_t i = 0; i < teacher_probs.size(); ++i) {
    const double t = teacher_probs[i];
    if (t > 0.0) kl += t * std::log(t / student_probs[i]);
  }
  const double w = 1.0 + (teacher_correct ? focal_boost : 0.0);
  return ce + lambda * w * kl;
}

// Bernoulli(p) per coordinate: masked coordinates take the anchor value,
// unmasked deviations are scaled by 1/(1-p) so the expected effective weight
// equals the current weight. p == 0 is the bit-exact identity.
inline ParamVector mixout_mask_apply(const ParamVector& params, const ParamVector& anchor, double p,
                                     SplitMix64& rng, std::vector<std::uint8_t>* keep_mask = nullptr) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("mixout: p must be in [0, 1)");
  require_compatible(params, anchor, "mixout");
  if (p == 0.0) {
    if (keep_mask != nullptr) keep_mask->assign(params.size(), 1);
    return params;
  }
  ParamVector out = params;
  auto r = out.values();
  auto pv = params.values();
  auto av = anchor.values();
  if (keep_mask != nullptr) keep_mask->assign(params.size(), 1);
  const double inv_keep = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (rng.next_double() < p) {
      r[i] = av[i];
      if (keep_mask != nullptr) (*keep_mask)[i] = 0;
    } else {
      r[i] = av[i] + (pv[i] - av[i]) * inv_keep;
    }
  }
  return out;
}

// Quadratic EWC penalty 0.5*lambda*sum_i F_i (theta_i - anchor_i)^2 and its
// gradient lambda*F*(theta - anchor).
inline std::pair<double, std::vector<double>> ewc_penalty(const ParamVector& params,
                                                          const ParamVector& anchor,
                                                          const FisherDiagonal& fisher,
                                                          double lambda) {
  require_compatible(params, anchor, "ewc");
  if (!fisher.compatible_with(params) || fisher.values.size() != params.size())
    throw ConfigError("ewc: fisher diagonal incompatible with parameters");
  auto pv = params.values();
  auto av = anchor.values();
  std::vector<double> grad(params.size());
  double penalty = 0.0;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double diff = pv[i] - av[i];
    penalty += fisher.values[i] * diff * diff;
    grad[i] = lambda * fisher.values[i] * diff;
  }
  return {0.5 * lambda * penalty, std::move(grad)};
}

struct AdamState {
  std::vector<double> m, v;
  std::int64_t step = 0;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

// One optimizer step: global-norm gradient clipping, then Adam with bias
// correction, then decoupled weight decay. Coordinates with mask == 0 are
// left untouched entirely.
inline void adam_step(std::span<double> params, std::span<const double> grad, AdamState& state,
                      double lr, const TrainConfig& cfg,
                      std::span<const std::uint8_t> mask = {}) {
  if (grad.size() != params.size()) throw ConfigError("adam_step: gradient length mismatch");
  double sq = 0.0;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!mask.empty() && mask[i] == 0) continue;
    sq += grad[i] * grad[i];
  }
  const double norm = std::sqrt(sq);
  const double clip_scale = norm > cfg.grad_clip_norm ? cfg.grad_clip_norm / norm : 1.0;

  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!mask.empty() && mask[i] == 0) continue;
    const double g = grad[i] * clip_scale;
    state.m[i] = cfg.adam_beta1 * state.m[i] + (1.0 - cfg.adam_beta1) * g;
    state.v[i] = cfg.adam_beta2 * state.v[i] + (1.0 - cfg.adam_beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
    params[i] -= lr * cfg.weight_decay * params[i];
  }
}

namespace detail {

struct DistillCache {
  std::vector<std::vector<double>> probs;  // zero-extended to the student's class count
  std::vector<std::uint8_t> correct;
  std::size_t teacher_classes = 0;
};

inline DistillCache build_distill_cache(const RegDistill& reg,
                                        std::span<const FeaturizedExample> data,
                                        std::size_t student_classes) {
  const std::size_t tc = reg.teacher.spec().num_classes;
  if (tc > student_classes)
    throw ConfigError("distill: teacher has more classes than the student");
  DistillCache cache;
  cache.teacher_classes = tc;
  cache.probs.resize(data.size());
  cache.correct.resize(data.size(), 0);
  ForwardScratch s;
  for (std::size_t i = 0; i < data.size(); ++i) {
    forward_into(reg.teacher, data[i].features, s);
    std::vector<double> p(student_classes, 0.0);
    std::copy(s.probs.begin(), s.probs.end(), p.begin());
    cache.probs[i] = std::move(p);
    std::size_t best = 0;
    for (std::size_t k = 1; k < s.logits.size(); ++k)
      if (s.logits[k] > s.logits[best]) best = k;
    cache.correct[i] = static_cast<int>(best) == data[i].label ? 1 : 0;
  }
  return cache;
}

}  // namespace detail

// Finetunes `init` on the split selected by `role`:
//   kOld    -> old_train          (old-class head width on add_classes)
//   kTarget -> updated train      (pretrained init)
//   kNew    -> updated train, or new_train when data_mode == kNewOnly
// Deterministic in cfg.seed; shuffling and mixout masks draw from separate
// streams so enabling mixout does not perturb the batch order.
inline ParamVector train(const ParamVector& init, const ScenarioData& data, Role role,
                         const TrainConfig& cfg, const Regularizer& reg = RegNone{}) {
  cfg.validate();
  const bool new_only_reg = std::holds_alternative<RegPriorWD>(reg) ||
                            std::holds_alternative<RegEwc>(reg) ||
                            std::holds_alternative<RegMixout>(reg) ||
                            std::holds_alternative<RegDistill>(reg);
  if (new_only_reg && role != Role::kNew)
    throw ConfigError("train: this regularizer requires the new-model role");

  const std::vector<FeaturizedExample>* split = nullptr;
  switch (role) {
    case Role::kOld:
      split = &data.old_train;
      break;
    case Role::kTarget:
      split = &data.updated_train;
      break;
    case Role::kNew:
      split = cfg.data_mode == DataMode::kNewOnly ? &data.new_train : &data.updated_train;
      break;
  }
  if (split->empty()) throw DataError("train: empty training split");

  const ModelSpec& spec = init.spec();
  for (const FeaturizedExample& ex : *split)
    if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= spec.num_classes)
      throw ConfigError("train: split labels exceed the model's class count");

  if (const auto* ewc = std::get_if<RegEwc>(&reg)) {
    require_compatible(init, ewc->anchor, "train ewc anchor");
    if (!ewc->fisher.compatible_with(init))
      throw ConfigError("train: EWC fisher incompatible with the model");
    if (ewc->lambda < 0.0) throw ConfigError("train: EWC lambda must be >= 0");
  }
  if (const auto* pw = std::get_if<RegPriorWD>(&reg))
    if (pw->lambda < 0.0) throw ConfigError("train: prior weight decay lambda must be >= 0");
  if (const auto* ds = std::get_if<RegDistill>(&reg)) {
    if (ds->lambda < 0.0) throw ConfigError("train: distill lambda must be >= 0");
    if (ds->focal_boost < 0.0) throw ConfigError("train: focal_boost must be >= 0");
  }
  if (const auto* mx = std::get_if<RegMixout>(&reg))
    if (!(mx->p >= 0.0 && mx->p < 1.0)) throw ConfigError("train: mixout p must be in [0, 1)");

  if (cfg.epochs == 0) return init;

  const std::size_t n = split->size();
  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::int64_t total_steps = static_cast<std::int64_t>(cfg.epochs) *
                                   static_cast<std::int64_t>(steps_per_epoch);

  // Anchor for PriorWD and Mixout is the starting point (the old model).
  const ParamVector anchor = init;
  ParamVector theta = init;

  detail::DistillCache distill_cache;
  const auto* distill = std::get_if<RegDistill>(&reg);
  if (distill != nullptr && distill->lambda > 0.0)
    distill_cache = detail::build_distill_cache(*distill, *split, spec.num_classes);

  std::vector<std::uint8_t> bias_mask;
  if (std::holds_alternative<RegBiasOnly>(reg)) {
    bias_mask.assign(theta.size(), 0);
    for (const SegmentInfo& seg : theta.segments()) {
      if (!seg.name.ends_with("_bias")) continue;
      for (std::size_t i = seg.offset; i < seg.offset + seg.size; ++i) bias_mask[i] = 1;
    }
  }

  SplitMix64 shuffle_rng = seeded_stream(cfg.seed, "shuffle");
  SplitMix64 mixout_rng = seeded_stream(cfg.seed, "mixout");
  const auto* mixout = std::get_if<RegMixout>(&reg);

  AdamState opt(theta.size());
  std::vector<double> grad(theta.size());
  std::vector<double> dlogits(spec.num_classes);
  std::vector<std::uint8_t> keep_mask;
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  ForwardScratch scratch;
  std::int64_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(perm, shuffle_rng);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      const double inv_b = 1.0 / static_cast<double>(end - start);

      ParamVector mixed;
      const ParamVector* eval_point = &theta;
      if (mixout != nullptr && mixout->p > 0.0) {
        mixed = mixout_mask_apply(theta, anchor, mixout->p, mixout_rng, &keep_mask);
        eval_point = &mixed;
      }

      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t b = start; b < end; ++b) {
        const FeaturizedExample& ex = (*split)[perm[b]];
        forward_into(*eval_point, ex.features, scratch);
        for (std::size_t k = 0; k < scratch.probs.size(); ++k)
          dlogits[k] = scratch.probs[k] * inv_b;
        dlogits[ex.label] -= inv_b;

        if (distill != nullptr && distill->lambda > 0.0) {
          // Examples whose gold label the teacher cannot express get CE only.
          if (static_cast<std::size_t>(ex.label) < distill_cache.teacher_classes) {
            const std::vector<double>& tp = distill_cache.probs[perm[b]];
            const double w = distill->lambda *
                             (1.0 + (distill_cache.correct[perm[b]] ? distill->focal_boost : 0.0));
            for (std::size_t k = 0; k < dlogits.size(); ++k)
              dlogits[k] += w * (scratch.probs[k] - tp[k]) * inv_b;
          }
        }
        accumulate_backward(*eval_point, ex.features, scratch, dlogits, grad);
      }

      if (mixout != nullptr && mixout->p > 0.0) {
        const double inv_keep = 1.0 / (1.0 - mixout->p);
        for (std::size_t i = 0; i < grad.size(); ++i)
          grad[i] = keep_mask[i] ? grad[i] * inv_keep : 0.0;
      }
      if (const auto* pw = std::get_if<RegPriorWD>(&reg); pw != nullptr && pw->lambda > 0.0) {
        auto tv = theta.values();
        auto av = anchor.values();
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += pw->lambda * (tv[i] - av[i]);
      }
      if (const auto* ewc = std::get_if<RegEwc>(&reg); ewc != nullptr && ewc->lambda > 0.0) {
        auto tv = theta.values();
        auto av = ewc->anchor.values();
        for (std::size_t i = 0; i < grad.size(); ++i)
          grad[i] += ewc->lambda * ewc->fisher.values[i] * (tv[i] - av[i]);
      }

      adam_step(theta.values(), grad, opt, lr_at(step, total_steps, cfg), cfg, bias_mask);
      ++step;
    }
  }

  if (!theta.all_finite()) throw NumericError("train: non-finite parameters after training");
  return theta;
}

}  // namespace bcwi
