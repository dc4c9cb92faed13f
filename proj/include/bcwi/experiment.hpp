#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "bcwi/checkpoint.hpp"
#include "bcwi/data.hpp"
#include "bcwi/errors.hpp"
#include "bcwi/eval.hpp"
#include "bcwi/merge.hpp"
#include "bcwi/train.hpp"
#include "bcwi/util.hpp"

namespace bcwi {

struct SynthSpec {
  int num_classes = 6;
  int per_class = 200;
  int vocab_per_class = 30;
  double noise_rate = 0.3;
  std::uint64_t seed = 7;
};

struct CorpusSpec {
  std::string path;
  std::string text_field = "text";
  std::string label_field = "label";
};

struct ScenarioConfig {
  ScenarioKind kind = ScenarioKind::kAddData;
  std::optional<SynthSpec> synth;
  std::optional<CorpusSpec> corpus;
  ScenarioCounts counts;
  std::vector<std::string> new_class_labels;  // add_classes only
  bool resample_per_seed = true;
  std::uint64_t seed = 0;
};

struct BaselineSpec {
  std::string method;  // prior_wd | ewc | mixout | distill | bias_only
  std::vector<double> strengths;
};

struct ExperimentConfig {
  ScenarioConfig scenario;
  HashConfig featurizer;
  std::size_t hidden_dim = 64;
  Activation activation = Activation::kTanh;
  TrainConfig train_old;
  TrainConfig train_target;
  TrainConfig train_new;
  std::vector<BaselineSpec> baselines;
  double distill_focal_boost = 1.0;
  double alpha_step = 0.05;
  double retention = 0.0;  // 0 means "default by kind": 0.9 AD, 0.95 AC
  std::vector<int> soup_sizes = {4};
  int num_seeds = 10;
  FisherNormalization fisher_normalization = FisherNormalization::kMeanOne;
  double fisher_epsilon_floor = 1e-8;
  bool fisher_on_updated = false;
  std::string output_dir = "out";
  unsigned threads = 0;
  std::uint64_t base_seed = 1;
  bool save_checkpoints = true;

  double resolved_retention() const {
    if (retention != 0.0) return retention;
    return scenario.kind == ScenarioKind::kAddData ? 0.9 : 0.95;
  }
};

namespace detail {

inline const nlohmann::json& field(const nlohmann::json& j, const char* name,
                                   const std::string& where) {
  if (!j.contains(name)) throw ConfigError("config: missing field '" + where + name + "'");
  return j[name];
}

template <typename T>
T get_field(const nlohmann::json& j, const char* name, const std::string& where, T fallback) {
  if (!j.contains(name)) return fallback;
  try {
    return j[name].get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config: bad value for field '" + where + name + "'");
  }
}

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known,
                           const std::string& where) {
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("config: unknown field '" + where + key + "'");
}

inline TrainConfig parse_train_config(const nlohmann::json& j, const TrainConfig& defaults,
                                      const std::string& where) {
  reject_unknown(j,
                 {"epochs", "base_lr", "batch_size", "warmup_ratio", "adam_beta1", "adam_beta2",
                  "adam_eps", "weight_decay", "grad_clip_norm", "data_mode"},
                 where);
  TrainConfig cfg = defaults;
  cfg.epochs = get_field(j, "epochs", where, cfg.epochs);
  cfg.base_lr = get_field(j, "base_lr", where, cfg.base_lr);
  cfg.batch_size = get_field(j, "batch_size", where, cfg.batch_size);
  cfg.warmup_ratio = get_field(j, "warmup_ratio", where, cfg.warmup_ratio);
  cfg.adam_beta1 = get_field(j, "adam_beta1", where, cfg.adam_beta1);
  cfg.adam_beta2 = get_field(j, "adam_beta2", where, cfg.adam_beta2);
  cfg.adam_eps = get_field(j, "adam_eps", where, cfg.adam_eps);
  cfg.weight_decay = get_field(j, "weight_decay", where, cfg.weight_decay);
  cfg.grad_clip_norm = get_field(j, "grad_clip_norm", where, cfg.grad_clip_norm);
  const std::string mode = get_field<std::string>(j, "data_mode", where,
                                                  cfg.data_mode == DataMode::kNewOnly ? "new_only"
                                                                                      : "updated");
  if (mode == "updated")
    cfg.data_mode = DataMode::kUpdated;
  else if (mode == "new_only")
    cfg.data_mode = DataMode::kNewOnly;
  else
    throw ConfigError("config: bad value for field '" + where + "data_mode'");
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError("config: " + where.substr(0, where.size() - 1) + ": " + e.what());
  }
  return cfg;
}

inline nlohmann::json train_config_json(const TrainConfig& cfg) {
  return {{"epochs", cfg.epochs},
          {"base_lr", cfg.base_lr},
          {"batch_size", cfg.batch_size},
          {"warmup_ratio", cfg.warmup_ratio},
          {"adam_beta1", cfg.adam_beta1},
          {"adam_beta2", cfg.adam_beta2},
          {"adam_eps", cfg.adam_eps},
          {"weight_decay", cfg.weight_decay},
          {"grad_clip_norm", cfg.grad_clip_norm},
          {"data_mode", cfg.data_mode == DataMode::kNewOnly ? "new_only" : "updated"}};
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  using detail::field;
  using detail::get_field;
  detail::reject_unknown(
      j, {"scenario", "featurizer", "model", "train", "baselines", "distill_focal_boost",
          "alpha_step", "retention", "soup_sizes", "num_seeds", "fisher", "output_dir", "threads",
          "base_seed", "save_checkpoints"},
      "");

  ExperimentConfig cfg;
  const nlohmann::json& sc = field(j, "scenario", "");
  detail::reject_unknown(
      sc, {"kind", "synth", "corpus", "counts", "new_class_labels", "resample_per_seed", "seed"},
      "scenario.");
  cfg.scenario.kind = scenario_kind_from_string(
      get_field<std::string>(sc, "kind", "scenario.", "add_data"));
  if (sc.contains("synth")) {
    const nlohmann::json& sy = sc["synth"];
    detail::reject_unknown(sy, {"num_classes", "per_class", "vocab_per_class", "noise_rate", "seed"},
                           "scenario.synth.");
    SynthSpec s;
    s.num_classes = get_field(sy, "num_classes", "scenario.synth.", s.num_classes);
    s.per_class = get_field(sy, "per_class", "scenario.synth.", s.per_class);
    s.vocab_per_class = get_field(sy, "vocab_per_class", "scenario.synth.", s.vocab_per_class);
    s.noise_rate = get_field(sy, "noise_rate", "scenario.synth.", s.noise_rate);
    s.seed = get_field(sy, "seed", "scenario.synth.", s.seed);
    cfg.scenario.synth = s;
  }
  if (sc.contains("corpus")) {
    const nlohmann::json& co = sc["corpus"];
    detail::reject_unknown(co, {"path", "text_field", "label_field"}, "scenario.corpus.");
    CorpusSpec c;
    c.path = get_field<std::string>(co, "path", "scenario.corpus.", "");
    if (c.path.empty()) throw ConfigError("config: missing field 'scenario.corpus.path'");
    c.text_field = get_field<std::string>(co, "text_field", "scenario.corpus.", c.text_field);
    c.label_field = get_field<std::string>(co, "label_field", "scenario.corpus.", c.label_field);
    cfg.scenario.corpus = c;
  }
  if (cfg.scenario.synth.has_value() == cfg.scenario.corpus.has_value())
    throw ConfigError("config: scenario needs exactly one of 'scenario.synth' or 'scenario.corpus'");
  const nlohmann::json& cn = field(sc, "counts", "scenario.");
  detail::reject_unknown(cn, {"old_train", "new_train", "old_dev", "new_dev", "test"},
                         "scenario.counts.");
  cfg.scenario.counts.old_train = get_field<std::size_t>(cn, "old_train", "scenario.counts.", 0);
  cfg.scenario.counts.new_train = get_field<std::size_t>(cn, "new_train", "scenario.counts.", 0);
  cfg.scenario.counts.old_dev = get_field<std::size_t>(cn, "old_dev", "scenario.counts.", 0);
  cfg.scenario.counts.new_dev = get_field<std::size_t>(cn, "new_dev", "scenario.counts.", 0);
  cfg.scenario.counts.test = get_field<std::size_t>(cn, "test", "scenario.counts.", 0);
  if (cfg.scenario.counts.old_train == 0)
    throw ConfigError("config: field 'scenario.counts.old_train' must be >= 1");
  if (cfg.scenario.counts.test == 0)
    throw ConfigError("config: field 'scenario.counts.test' must be >= 1");
  cfg.scenario.new_class_labels =
      get_field<std::vector<std::string>>(sc, "new_class_labels", "scenario.", {});
  if (cfg.scenario.kind == ScenarioKind::kAddClasses && cfg.scenario.new_class_labels.empty())
    throw ConfigError("config: field 'scenario.new_class_labels' required for add_classes");
  cfg.scenario.resample_per_seed = get_field(sc, "resample_per_seed", "scenario.", true);
  cfg.scenario.seed = get_field<std::uint64_t>(sc, "seed", "scenario.", 0);

  if (j.contains("featurizer")) {
    const nlohmann::json& fz = j["featurizer"];
    detail::reject_unknown(fz, {"buckets", "ngram_max", "hash_seed"}, "featurizer.");
    cfg.featurizer.buckets = get_field<std::size_t>(fz, "buckets", "featurizer.", cfg.featurizer.buckets);
    cfg.featurizer.ngram_max = get_field(fz, "ngram_max", "featurizer.", cfg.featurizer.ngram_max);
    cfg.featurizer.seed = get_field<std::uint64_t>(fz, "hash_seed", "featurizer.", cfg.featurizer.seed);
    validate_hash_config(cfg.featurizer);
  }
  if (j.contains("model")) {
    const nlohmann::json& mo = j["model"];
    detail::reject_unknown(mo, {"hidden_dim", "activation"}, "model.");
    cfg.hidden_dim = get_field<std::size_t>(mo, "hidden_dim", "model.", cfg.hidden_dim);
    cfg.activation =
        activation_from_string(get_field<std::string>(mo, "activation", "model.", "tanh"));
  }

  TrainConfig base_old;  // desk-scale defaults
  base_old.epochs = 30;
  TrainConfig base_new = base_old;
  base_new.epochs = 10;
  if (j.contains("train")) {
    const nlohmann::json& tr = j["train"];
    detail::reject_unknown(tr, {"old", "target", "new"}, "train.");
    cfg.train_old = tr.contains("old") ? detail::parse_train_config(tr["old"], base_old, "train.old.")
                                       : base_old;
    cfg.train_target = tr.contains("target")
                           ? detail::parse_train_config(tr["target"], cfg.train_old, "train.target.")
                           : cfg.train_old;
    cfg.train_new = tr.contains("new") ? detail::parse_train_config(tr["new"], base_new, "train.new.")
                                       : base_new;
  } else {
    cfg.train_old = base_old;
    cfg.train_target = base_old;
    cfg.train_new = base_new;
  }

  if (j.contains("baselines")) {
    if (!j["baselines"].is_array()) throw ConfigError("config: field 'baselines' must be an array");
    for (const auto& b : j["baselines"]) {
      detail::reject_unknown(b, {"method", "strengths"}, "baselines[].");
      BaselineSpec spec;
      spec.method = detail::get_field<std::string>(b, "method", "baselines[].", "");
      static const std::set<std::string> methods = {"prior_wd", "ewc", "mixout", "distill",
                                                    "bias_only"};
      if (!methods.count(spec.method))
        throw ConfigError("config: unknown baseline method '" + spec.method + "'");
      spec.strengths = detail::get_field<std::vector<double>>(b, "strengths", "baselines[].", {});
      if (spec.method != "bias_only" && spec.strengths.empty())
        throw ConfigError("config: baseline '" + spec.method + "' needs a 'strengths' grid");
      for (double s : spec.strengths) {
        if (spec.method == "mixout" && !(s >= 0.0 && s < 1.0))
          throw ConfigError("config: mixout strengths must be in [0, 1)");
        if (s < 0.0) throw ConfigError("config: baseline strengths must be >= 0");
      }
      std::sort(spec.strengths.begin(), spec.strengths.end());
      cfg.baselines.push_back(std::move(spec));
    }
  }

  cfg.distill_focal_boost = get_field(j, "distill_focal_boost", "", cfg.distill_focal_boost);
  cfg.alpha_step = get_field(j, "alpha_step", "", cfg.alpha_step);
  const auto steps = static_cast<std::size_t>(std::llround(1.0 / cfg.alpha_step));
  if (!(cfg.alpha_step > 0.0) ||
      std::fabs(static_cast<double>(steps) * cfg.alpha_step - 1.0) > 1e-9)
    throw ConfigError("config: field 'alpha_step' must divide 1 evenly");
  cfg.retention = get_field(j, "retention", "", cfg.retention);
  if (j.contains("retention") && !(cfg.retention > 0.0 && cfg.retention <= 1.0))
    throw ConfigError("config: field 'retention' must be in (0, 1]");
  cfg.soup_sizes = get_field(j, "soup_sizes", "", cfg.soup_sizes);
  for (int m : cfg.soup_sizes)
    if (m < 1) throw ConfigError("config: field 'soup_sizes' entries must be >= 1");
  cfg.num_seeds = get_field(j, "num_seeds", "", cfg.num_seeds);
  if (cfg.num_seeds < 1) throw ConfigError("config: field 'num_seeds' must be >= 1");
  if (j.contains("fisher")) {
    const nlohmann::json& fi = j["fisher"];
    detail::reject_unknown(fi, {"normalization", "epsilon_floor", "data"}, "fisher.");
    cfg.fisher_normalization = fisher_normalization_from_string(
        detail::get_field<std::string>(fi, "normalization", "fisher.", "mean_one"));
    cfg.fisher_epsilon_floor = get_field(fi, "epsilon_floor", "fisher.", cfg.fisher_epsilon_floor);
    if (!(cfg.fisher_epsilon_floor > 0.0))
      throw ConfigError("config: field 'fisher.epsilon_floor' must be > 0");
    const std::string data = detail::get_field<std::string>(fi, "data", "fisher.", "old");
    if (data == "old")
      cfg.fisher_on_updated = false;
    else if (data == "updated")
      cfg.fisher_on_updated = true;
    else
      throw ConfigError("config: field 'fisher.data' must be 'old' or 'updated'");
  }
  cfg.output_dir = get_field<std::string>(j, "output_dir", "", cfg.output_dir);
  cfg.threads = get_field(j, "threads", "", cfg.threads);
  cfg.base_seed = get_field<std::uint64_t>(j, "base_seed", "", cfg.base_seed);
  cfg.save_checkpoints = get_field(j, "save_checkpoints", "", cfg.save_checkpoints);
  return cfg;
}

inline nlohmann::json resolved_config_json(const ExperimentConfig& cfg) {
  nlohmann::json sc;
  sc["kind"] = to_string(cfg.scenario.kind);
  if (cfg.scenario.synth) {
    const SynthSpec& s = *cfg.scenario.synth;
    sc["synth"] = {{"num_classes", s.num_classes},
                   {"per_class", s.per_class},
                   {"vocab_per_class", s.vocab_per_class},
                   {"noise_rate", s.noise_rate},
                   {"seed", s.seed}};
  }
  if (cfg.scenario.corpus) {
    const CorpusSpec& c = *cfg.scenario.corpus;
    sc["corpus"] = {{"path", c.path}, {"text_field", c.text_field}, {"label_field", c.label_field}};
  }
  sc["counts"] = {{"old_train", cfg.scenario.counts.old_train},
                  {"new_train", cfg.scenario.counts.new_train},
                  {"old_dev", cfg.scenario.counts.old_dev},
                  {"new_dev", cfg.scenario.counts.new_dev},
                  {"test", cfg.scenario.counts.test}};
  if (!cfg.scenario.new_class_labels.empty()) sc["new_class_labels"] = cfg.scenario.new_class_labels;
  sc["resample_per_seed"] = cfg.scenario.resample_per_seed;
  sc["seed"] = cfg.scenario.seed;

  nlohmann::json baselines = nlohmann::json::array();
  for (const BaselineSpec& b : cfg.baselines)
    baselines.push_back({{"method", b.method}, {"strengths", b.strengths}});

  return {{"scenario", sc},
          {"featurizer",
           {{"buckets", cfg.featurizer.buckets},
            {"ngram_max", cfg.featurizer.ngram_max},
            {"hash_seed", cfg.featurizer.seed}}},
          {"model", {{"hidden_dim", cfg.hidden_dim}, {"activation", to_string(cfg.activation)}}},
          {"train",
           {{"old", detail::train_config_json(cfg.train_old)},
            {"target", detail::train_config_json(cfg.train_target)},
            {"new", detail::train_config_json(cfg.train_new)}}},
          {"baselines", baselines},
          {"distill_focal_boost", cfg.distill_focal_boost},
          {"alpha_step", cfg.alpha_step},
          {"retention", cfg.resolved_retention()},
          {"soup_sizes", cfg.soup_sizes},
          {"num_seeds", cfg.num_seeds},
          {"fisher",
           {{"normalization", to_string(cfg.fisher_normalization)},
            {"epsilon_floor", cfg.fisher_epsilon_floor},
            {"data", cfg.fisher_on_updated ? "updated" : "old"}}},
          {"output_dir", cfg.output_dir},
          {"threads", cfg.threads},
          {"base_seed", cfg.base_seed},
          {"save_checkpoints", cfg.save_checkpoints}};
}

// Dotted-path override: "train.new.epochs=5". The value is parsed as JSON
// when possible and falls back to a plain string.
inline void apply_dotted_override(nlohmann::json& j, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like dotted.path=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  nlohmann::json parsed;
  try {
    parsed = nlohmann::json::parse(value);
  } catch (const nlohmann::json::exception&) {
    parsed = value;
  }
  nlohmann::json* node = &j;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw ConfigError("override has an empty path component: " + assignment);
    if (dot == std::string::npos) {
      (*node)[key] = parsed;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

inline std::string config_hash_hex(const nlohmann::json& resolved) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(resolved.dump())));
  return buf;
}

// ---------------------------------------------------------------------------
// Experiment pipeline
// ---------------------------------------------------------------------------

struct MethodRow {
  std::string method;
  bool has_param = false;
  double param = 0.0;  // selected alpha or regularizer strength
  double dev_acc = 0.0, dev_nfr = 0.0, test_acc = 0.0, test_nfr = 0.0;
};

struct SeedResult {
  std::vector<MethodRow> rows;
};

struct ExperimentSummary {
  std::vector<std::string> methods;
  std::map<std::string, SeedAggregate> dev_acc, dev_nfr, test_acc, test_nfr;
  std::map<std::string, double> mean_param;
  std::map<std::string, bool> has_param;
  std::vector<SeedResult> per_seed;
};

namespace detail {

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index, std::string_view tag) {
  return mix64(mix64(base + index + 1) ^ fnv1a64(tag));
}

inline MethodRow eval_method(const std::string& name, const ParamVector& model,
                             const ScenarioData& data, const std::vector<int>& old_dev,
                             const std::vector<int>& old_test, const std::vector<int>& dev_gold,
                             const std::vector<int>& test_gold) {
  const EvalReport dev = evaluate(old_dev, predict_all(model, data.updated_dev), dev_gold);
  const EvalReport test = evaluate(old_test, predict_all(model, data.test), test_gold);
  MethodRow row;
  row.method = name;
  row.dev_acc = dev.accuracy;
  row.dev_nfr = dev.nfr;
  row.test_acc = test.accuracy;
  row.test_nfr = test.nfr;
  return row;
}

inline MethodRow row_from_curve(const std::string& name, const TradeoffCurve& curve, double alpha) {
  const TradeoffPoint& p = curve_point_at(curve, alpha);
  MethodRow row;
  row.method = name;
  row.has_param = true;
  row.param = alpha;
  row.dev_acc = p.dev_acc;
  row.dev_nfr = p.dev_nfr;
  row.test_acc = p.test_acc;
  row.test_nfr = p.test_nfr;
  return row;
}

inline Regularizer make_baseline_reg(const std::string& method, double strength,
                                     const ExperimentConfig& cfg, const ParamVector& aligned_old,
                                     const ParamVector& raw_old, const FisherDiagonal& fisher) {
  if (method == "prior_wd") return RegPriorWD{strength};
  if (method == "ewc") return RegEwc{strength, fisher, aligned_old};
  if (method == "mixout") return RegMixout{strength};
  if (method == "distill") return RegDistill{strength, cfg.distill_focal_boost, raw_old};
  return RegBiasOnly{};
}

}  // namespace detail

// Trains old/target/new models for one seed, computes Fisher, sweeps the
// merge operators, runs requested baselines, and (optionally) persists
// checkpoints, curves, and the scenario manifest under <out>/seed_<i>.
inline SeedResult run_seed(const ExperimentConfig& cfg, const LabeledDataset& corpus,
                           int seed_index, const std::string& out_dir = "") {
  using detail::derive_seed;
  const std::uint64_t scenario_seed =
      cfg.scenario.resample_per_seed
          ? derive_seed(cfg.scenario.seed, static_cast<std::uint64_t>(seed_index), "scenario-resample")
          : cfg.scenario.seed;

  ScenarioSplit scenario;
  if (cfg.scenario.kind == ScenarioKind::kAddData) {
    scenario = build_add_data(corpus, cfg.scenario.counts, scenario_seed);
  } else {
    const std::set<std::string> new_labels(cfg.scenario.new_class_labels.begin(),
                                           cfg.scenario.new_class_labels.end());
    scenario = build_add_classes(corpus, new_labels, cfg.scenario.counts, scenario_seed);
  }
  validate_scenario(scenario);
  const ScenarioData data = featurize_scenario(scenario, cfg.featurizer);

  const ModelSpec spec_full{cfg.featurizer.buckets, cfg.hidden_dim,
                            static_cast<std::size_t>(data.num_classes), cfg.activation};
  const std::uint64_t base = cfg.base_seed;
  const auto idx = static_cast<std::uint64_t>(seed_index);

  const ParamVector theta_pre = init_params(spec_full, derive_seed(base, idx, "pre"));

  TrainConfig cfg_old = cfg.train_old;
  cfg_old.seed = derive_seed(base, idx, "old");
  const bool add_classes = cfg.scenario.kind == ScenarioKind::kAddClasses;
  const ParamVector old_init =
      add_classes ? truncate_head(theta_pre, static_cast<std::size_t>(data.num_old_classes))
                  : theta_pre;
  const ParamVector old_model = train(old_init, data, Role::kOld, cfg_old);
  const ParamVector aligned_old = add_classes ? align_old_head(old_model, spec_full) : old_model;

  TrainConfig cfg_target = cfg.train_target;
  cfg_target.seed = derive_seed(base, idx, "target");
  const ParamVector target_model = train(theta_pre, data, Role::kTarget, cfg_target);

  int max_soup = 1;
  for (int m : cfg.soup_sizes) max_soup = std::max(max_soup, m);
  std::vector<ParamVector> new_models;
  new_models.reserve(max_soup);
  for (int jm = 0; jm < max_soup; ++jm) {
    TrainConfig cfg_new = cfg.train_new;
    cfg_new.seed = derive_seed(base, idx, "new" + std::to_string(jm));
    new_models.push_back(train(aligned_old, data, Role::kNew, cfg_new));
  }
  const ParamVector& new_model = new_models[0];

  std::vector<FeaturizedExample> fisher_data;
  if (cfg.fisher_on_updated) {
    fisher_data = data.updated_train;
    fisher_data.insert(fisher_data.end(), data.updated_dev.begin(), data.updated_dev.end());
  } else {
    fisher_data = data.old_train;
    fisher_data.insert(fisher_data.end(), data.old_dev.begin(), data.old_dev.end());
  }
  const FisherDiagonal fisher =
      compute_fisher(aligned_old, fisher_data, cfg.fisher_normalization, cfg.fisher_epsilon_floor);

  const std::vector<int> dev_gold = gold_labels(data.updated_dev);
  const std::vector<int> test_gold = gold_labels(data.test);
  const std::vector<int> old_dev = predict_all(aligned_old, data.updated_dev);
  const std::vector<int> old_test = predict_all(aligned_old, data.test);

  SeedResult result;
  result.rows.push_back(detail::eval_method("old", aligned_old, data, old_dev, old_test, dev_gold,
                                            test_gold));
  result.rows.push_back(detail::eval_method("target", target_model, data, old_dev, old_test,
                                            dev_gold, test_gold));
  result.rows.push_back(detail::eval_method("new", new_model, data, old_dev, old_test, dev_gold,
                                            test_gold));
  const double old_dev_acc = result.rows[0].dev_acc;
  const double new_dev_acc = result.rows[2].dev_acc;
  const double retention = cfg.resolved_retention();
  const double threshold = old_dev_acc + retention * (new_dev_acc - old_dev_acc);

  const TradeoffCurve bcwi_curve = sweep_alpha(aligned_old, new_model, nullptr, data, cfg.alpha_step);
  const double bcwi_alpha = select_alpha(bcwi_curve, old_dev_acc, new_dev_acc, retention);
  result.rows.push_back(detail::row_from_curve("bcwi", bcwi_curve, bcwi_alpha));

  const TradeoffCurve fisher_curve =
      sweep_alpha(aligned_old, new_model, &fisher, data, cfg.alpha_step);
  const double fisher_alpha = select_alpha(fisher_curve, old_dev_acc, new_dev_acc, retention);
  result.rows.push_back(detail::row_from_curve("fisher_bcwi", fisher_curve, fisher_alpha));

  std::map<int, TradeoffCurve> soup_curves;
  for (int m : cfg.soup_sizes) {
    if (soup_curves.count(m)) continue;
    const std::span<const ParamVector> members(new_models.data(), static_cast<std::size_t>(m));
    const ParamVector souped = soup(members);
    soup_curves[m] = sweep_alpha(aligned_old, souped, nullptr, data, cfg.alpha_step);
    const double soup_alpha = select_alpha(soup_curves[m], old_dev_acc, new_dev_acc, retention);
    result.rows.push_back(
        detail::row_from_curve("soup_bcwi_" + std::to_string(m), soup_curves[m], soup_alpha));
  }

  for (const BaselineSpec& b : cfg.baselines) {
    TrainConfig cfg_base = cfg.train_new;
    cfg_base.seed = derive_seed(base, idx, "baseline_" + b.method);
    if (b.method == "bias_only") {
      const ParamVector model = train(aligned_old, data, Role::kNew, cfg_base, RegBiasOnly{});
      MethodRow row = detail::eval_method("bias_only", model, data, old_dev, old_test, dev_gold,
                                          test_gold);
      result.rows.push_back(row);
      continue;
    }
    // Strongest regularization whose dev accuracy stays above the threshold;
    // the weakest strength is the fallback when none qualifies.
    MethodRow chosen;
    bool found = false;
    for (std::size_t si = 0; si < b.strengths.size(); ++si) {
      const Regularizer reg =
          detail::make_baseline_reg(b.method, b.strengths[si], cfg, aligned_old, old_model, fisher);
      const ParamVector model = train(aligned_old, data, Role::kNew, cfg_base, reg);
      MethodRow row = detail::eval_method(b.method, model, data, old_dev, old_test, dev_gold,
                                          test_gold);
      row.has_param = true;
      row.param = b.strengths[si];
      if (si == 0 || row.dev_acc >= threshold) {
        chosen = row;
        found = found || row.dev_acc >= threshold;
      }
    }
    result.rows.push_back(chosen);
  }

  if (!out_dir.empty()) {
    namespace fs = std::filesystem;
    const fs::path seed_dir = fs::path(out_dir) / ("seed_" + std::to_string(seed_index));
    fs::create_directories(seed_dir);
    const nlohmann::json manifest = scenario_manifest(
        scenario, &cfg.featurizer,
        cfg.scenario.corpus ? cfg.scenario.corpus->path : "synthetic corpus");
    write_text_file((seed_dir / "scenario.json").string(), manifest.dump(2) + "\n");
    write_text_file((seed_dir / "bcwi_curve.csv").string(), tradeoff_curve_csv(bcwi_curve));
    write_text_file((seed_dir / "fisher_curve.csv").string(), tradeoff_curve_csv(fisher_curve));
    for (const auto& [m, curve] : soup_curves)
      write_text_file((seed_dir / ("soup" + std::to_string(m) + "_curve.csv")).string(),
                      tradeoff_curve_csv(curve));
    if (cfg.save_checkpoints) {
      const std::string hash = config_hash_hex(resolved_config_json(cfg));
      const auto us = static_cast<std::uint64_t>(seed_index);
      save_checkpoint((seed_dir / "old.bcwi").string(), old_model, {"old", us, hash});
      save_checkpoint((seed_dir / "target.bcwi").string(), target_model, {"target", us, hash});
      save_checkpoint((seed_dir / "new.bcwi").string(), new_model, {"new", us, hash});
      save_fisher((seed_dir / "fisher.bcwi").string(), fisher, {"fisher", us, hash});
      save_checkpoint((seed_dir / "bcwi_merged.bcwi").string(),
                      interpolate(bcwi_alpha, aligned_old, new_model), {"bcwi", us, hash});
    }
  }
  return result;
}

inline ExperimentSummary aggregate_results(const std::vector<SeedResult>& per_seed) {
  ExperimentSummary summary;
  summary.per_seed = per_seed;
  if (per_seed.empty()) return summary;
  for (const MethodRow& row : per_seed[0].rows) summary.methods.push_back(row.method);

  for (std::size_t mi = 0; mi < summary.methods.size(); ++mi) {
    const std::string& name = summary.methods[mi];
    std::vector<double> dev_acc, dev_nfr, test_acc, test_nfr, params;
    bool has_param = false;
    for (const SeedResult& sr : per_seed) {
      const MethodRow& row = sr.rows.at(mi);
      if (row.method != name) throw ConfigError("aggregate_results: inconsistent row order");
      dev_acc.push_back(row.dev_acc);
      dev_nfr.push_back(row.dev_nfr);
      test_acc.push_back(row.test_acc);
      test_nfr.push_back(row.test_nfr);
      params.push_back(row.param);
      has_param = has_param || row.has_param;
    }
    auto agg = [](const std::vector<double>& v) {
      if (v.size() >= 2) return ci95(v);
      SeedAggregate a;
      a.values = v;
      a.mean = v.empty() ? 0.0 : v[0];
      return a;
    };
    summary.dev_acc[name] = agg(dev_acc);
    summary.dev_nfr[name] = agg(dev_nfr);
    summary.test_acc[name] = agg(test_acc);
    summary.test_nfr[name] = agg(test_nfr);
    double mean_param = 0.0;
    for (double p : params) mean_param += p;
    summary.mean_param[name] = params.empty() ? 0.0 : mean_param / static_cast<double>(params.size());
    summary.has_param[name] = has_param;
  }
  return summary;
}

inline std::string summary_csv(const ExperimentSummary& summary) {
  std::string out =
      "method,param,dev_acc,dev_acc_ci,dev_nfr,dev_nfr_ci,test_acc,test_acc_ci,test_nfr,test_nfr_ci\n";
  for (const std::string& name : summary.methods) {
    out += name + ',';
    out += summary.has_param.at(name) ? format_double(summary.mean_param.at(name)) : std::string();
    const SeedAggregate* aggs[] = {&summary.dev_acc.at(name), &summary.dev_nfr.at(name),
                                   &summary.test_acc.at(name), &summary.test_nfr.at(name)};
    for (const SeedAggregate* a : aggs) {
      out += ',' + format_double(a->mean) + ',' + format_double(a->ci_halfwidth);
    }
    out += '\n';
  }
  return out;
}

// Console table; metrics reported in percent.
inline std::string summary_table(const ExperimentSummary& summary) {
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof(buf), "%-14s %8s %16s %16s %16s %16s\n", "method", "param", "dev ACC",
                "dev NFR", "test ACC", "test NFR");
  out += buf;
  for (const std::string& name : summary.methods) {
    std::string param = summary.has_param.at(name) ? format_double(summary.mean_param.at(name)) : "-";
    auto cell = [&](const SeedAggregate& a) {
      char c[64];
      std::snprintf(c, sizeof(c), "%6.1f ±%4.1f", 100.0 * a.mean, 100.0 * a.ci_halfwidth);
      return std::string(c);
    };
    std::snprintf(buf, sizeof(buf), "%-14s %8s %16s %16s %16s %16s\n", name.c_str(), param.c_str(),
                  cell(summary.dev_acc.at(name)).c_str(), cell(summary.dev_nfr.at(name)).c_str(),
                  cell(summary.test_acc.at(name)).c_str(), cell(summary.test_nfr.at(name)).c_str());
    out += buf;
  }
  return out;
}

// Full experiment: loads or generates the corpus, runs every seed in a worker
// pool, writes per-seed artifacts plus summary.csv and the resolved config.
inline ExperimentSummary run_experiment(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);

  const nlohmann::json resolved = resolved_config_json(cfg);
  write_text_file((fs::path(cfg.output_dir) / "resolved_config.json").string(),
                  resolved.dump(2) + "\n");

  LabeledDataset corpus;
  if (cfg.scenario.synth) {
    const SynthSpec& s = *cfg.scenario.synth;
    corpus = synth_generate(s.num_classes, s.per_class, s.vocab_per_class, s.noise_rate, s.seed);
  } else {
    corpus = load_jsonl(cfg.scenario.corpus->path, cfg.scenario.corpus->text_field,
                        cfg.scenario.corpus->label_field);
  }

  std::vector<SeedResult> per_seed(cfg.num_seeds);
  parallel_for(static_cast<std::size_t>(cfg.num_seeds), cfg.threads, [&](std::size_t i) {
    per_seed[i] = run_seed(cfg, corpus, static_cast<int>(i), cfg.output_dir);
  });

  const ExperimentSummary summary = aggregate_results(per_seed);
  write_text_file((fs::path(cfg.output_dir) / "summary.csv").string(), summary_csv(summary));
  return summary;
}

}  // namespace bcwi
