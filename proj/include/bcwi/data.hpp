#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "bcwi/errors.hpp"
#include "bcwi/model.hpp"
#include "bcwi/rng.hpp"

namespace bcwi {

struct Example {
  std::string text;
  std::string label;
};

inline std::string_view trim_view(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Examples plus a label<->id bijection; ids are contiguous 0..C-1.
class LabeledDataset {
 public:
  LabeledDataset() = default;

  // Dataset with a fixed label index; adding an unlisted label is an error.
  static LabeledDataset with_label_index(std::vector<std::string> labels) {
    LabeledDataset ds;
    ds.frozen_index_ = true;
    for (std::size_t i = 0; i < labels.size(); ++i) ds.ids_[labels[i]] = static_cast<int>(i);
    if (ds.ids_.size() != labels.size()) throw ConfigError("duplicate label in label index");
    ds.labels_ = std::move(labels);
    return ds;
  }

  // Unseen labels are assigned the next id, in order of first appearance.
  void add(const Example& ex) {
    if (trim_view(ex.text).empty()) throw DataError("example text empty after trimming");
    if (ex.label.empty()) throw DataError("example label empty");
    auto it = ids_.find(ex.label);
    int id;
    if (it != ids_.end()) {
      id = it->second;
    } else {
      if (frozen_index_) throw DataError("label not in fixed label index: " + ex.label);
      id = static_cast<int>(labels_.size());
      ids_.emplace(ex.label, id);
      labels_.push_back(ex.label);
    }
    examples_.push_back(ex);
    label_ids_.push_back(id);
  }

  std::size_t size() const { return examples_.size(); }
  bool empty() const { return examples_.empty(); }
  const Example& at(std::size_t i) const { return examples_[i]; }
  int label_id(std::size_t i) const { return label_ids_[i]; }

  int id_of(const std::string& label) const {
    auto it = ids_.find(label);
    return it == ids_.end() ? -1 : it->second;
  }

  const std::vector<std::string>& labels() const { return labels_; }
  int num_classes() const { return static_cast<int>(labels_.size()); }

 private:
  std::vector<Example> examples_;
  std::vector<int> label_ids_;
  std::vector<std::string> labels_;
  std::unordered_map<std::string, int> ids_;
  bool frozen_index_ = false;
};

// One JSON object per line. Label ids follow first appearance; order preserved.
inline LabeledDataset load_jsonl(const std::string& path, const std::string& text_field = "text",
                                 const std::string& label_field = "label") {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path);
  LabeledDataset ds;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim_view(line).empty()) {
      if (in.peek() == std::ifstream::traits_type::eof()) break;  // trailing newline
      throw DataError(path + ": line " + std::to_string(line_no) + ": empty line");
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ": line " + std::to_string(line_no) + ": malformed JSON: " + e.what());
    }
    if (!j.is_object())
      throw DataError(path + ": line " + std::to_string(line_no) + ": not a JSON object");
    for (const std::string& field : {text_field, label_field}) {
      if (!j.contains(field))
        throw DataError(path + ": line " + std::to_string(line_no) + ": missing field '" + field + "'");
      if (!j[field].is_string())
        throw DataError(path + ": line " + std::to_string(line_no) + ": field '" + field +
                        "' is not a string");
    }
    try {
      ds.add(Example{j[text_field].get<std::string>(), j[label_field].get<std::string>()});
    } catch (const DataError& e) {
      throw DataError(path + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (ds.empty()) throw DataError(path + ": empty file");
  return ds;
}

// Lowercased maximal runs of ASCII alphanumerics; everything else separates.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    const auto uc = static_cast<unsigned char>(ch);
    if (std::isalnum(uc)) {
      cur.push_back(static_cast<char>(std::tolower(uc)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

struct HashConfig {
  std::size_t buckets = std::size_t{1} << 15;
  int ngram_max = 1;  // 1 or 2
  std::uint64_t seed = 0;
};

// Bucket of one n-gram: FNV-1a64 over its bytes with the offset basis XORed
// with mix64(seed), reduced modulo the bucket count. Tokens of a bigram are
// joined with 0x1f, which cannot occur inside a token.
inline std::size_t hash_bucket(std::string_view ngram, std::uint64_t seed, std::size_t buckets) {
  const std::uint64_t h = fnv1a64(ngram, 0xcbf29ce484222325ULL ^ mix64(seed));
  return static_cast<std::size_t>(h % buckets);
}

inline void validate_hash_config(const HashConfig& cfg) {
  if (cfg.buckets < 2) throw ConfigError("hash buckets must be >= 2");
  if (cfg.ngram_max != 1 && cfg.ngram_max != 2) throw ConfigError("ngram_max must be 1 or 2");
}

inline SparseFeatures featurize_text(std::string_view text, const HashConfig& cfg) {
  validate_hash_config(cfg);
  const std::vector<std::string> tokens = tokenize(text);
  std::map<std::uint32_t, double> acc;  // collisions accumulate
  for (const std::string& tok : tokens)
    acc[static_cast<std::uint32_t>(hash_bucket(tok, cfg.seed, cfg.buckets))] += 1.0;
  if (cfg.ngram_max >= 2) {
    for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
      const std::string bigram = tokens[i] + '\x1f' + tokens[i + 1];
      acc[static_cast<std::uint32_t>(hash_bucket(bigram, cfg.seed, cfg.buckets))] += 1.0;
    }
  }
  SparseFeatures out;
  out.indices.reserve(acc.size());
  out.counts.reserve(acc.size());
  for (const auto& [idx, cnt] : acc) {
    out.indices.push_back(idx);
    out.counts.push_back(cnt);
  }
  return out;
}

inline std::vector<FeaturizedExample> featurize(const LabeledDataset& ds, const HashConfig& cfg) {
  validate_hash_config(cfg);
  std::vector<FeaturizedExample> out;
  out.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i)
    out.push_back(FeaturizedExample{featurize_text(ds.at(i).text, cfg), ds.label_id(i)});
  return out;
}

// ---------------------------------------------------------------------------
// Update scenarios
// ---------------------------------------------------------------------------

enum class ScenarioKind { kAddData, kAddClasses };

inline std::string to_string(ScenarioKind k) {
  return k == ScenarioKind::kAddData ? "add_data" : "add_classes";
}

inline ScenarioKind scenario_kind_from_string(const std::string& s) {
  if (s == "add_data") return ScenarioKind::kAddData;
  if (s == "add_classes") return ScenarioKind::kAddClasses;
  throw ConfigError("unknown scenario kind: " + s);
}

struct ScenarioCounts {
  std::size_t old_train = 0, new_train = 0, old_dev = 0, new_dev = 0, test = 0;
  std::size_t total() const { return old_train + new_train + old_dev + new_dev + test; }
};

struct SplitIndices {
  std::vector<std::size_t> old_train, new_train, old_dev, new_dev, test;
};

// Old/new/test splits over a shared label index. For add_classes the labels
// are reordered so old classes occupy ids 0..C_old-1 and new classes follow;
// the old model's head rows then line up with the merged head's prefix.
struct ScenarioSplit {
  ScenarioKind kind = ScenarioKind::kAddData;
  LabeledDataset old_train, old_dev, new_train, new_dev, test;
  std::set<int> old_classes, new_classes;
  SplitIndices source_indices;  // rows of the source corpus, in draw order

  LabeledDataset updated_train() const { return concat(old_train, new_train); }
  LabeledDataset updated_dev() const { return concat(old_dev, new_dev); }

 private:
  static LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b) {
    LabeledDataset out = LabeledDataset::with_label_index(a.labels());
    for (std::size_t i = 0; i < a.size(); ++i) out.add(a.at(i));
    for (std::size_t i = 0; i < b.size(); ++i) out.add(b.at(i));
    return out;
  }
};

namespace detail {

// Per-class pools of source rows, consumed as splits are drawn.
struct SamplePools {
  std::vector<std::vector<std::size_t>> by_class;  // scenario class id -> source rows

  std::size_t remaining(const std::vector<int>& classes) const {
    std::size_t n = 0;
    for (int c : classes) n += by_class[c].size();
    return n;
  }
};

// Proportional largest-remainder allocation of n across the given pools.
// min_one forces at least one draw per nonempty class (test coverage).
inline std::vector<std::size_t> allocate_counts(const SamplePools& pools,
                                                const std::vector<int>& classes, std::size_t n,
                                                bool min_one) {
  std::vector<std::size_t> take(pools.by_class.size(), 0);
  std::size_t total = pools.remaining(classes);
  if (n > total) throw DataError("insufficient examples for requested split sizes");
  std::size_t assigned = 0;
  if (min_one) {
    for (int c : classes) {
      if (pools.by_class[c].empty())
        throw DataError("class id " + std::to_string(c) + " has no examples left for the test split");
      take[c] = 1;
      ++assigned;
    }
    if (assigned > n) throw DataError("test split too small to cover every class");
  }
  // Largest remainder on what is left.
  const std::size_t rest = n - assigned;
  std::vector<std::pair<double, int>> fractional;
  std::size_t base_sum = 0;
  std::vector<std::size_t> spare(pools.by_class.size(), 0);
  for (int c : classes) {
    const std::size_t cap = pools.by_class[c].size() - take[c];
    const double quota = total == 0 ? 0.0
                                    : static_cast<double>(rest) *
                                          (static_cast<double>(pools.by_class[c].size()) /
                                           static_cast<double>(total));
    std::size_t base = std::min(static_cast<std::size_t>(quota), cap);
    take[c] += base;
    base_sum += base;
    spare[c] = cap - base;
    fractional.push_back({quota - static_cast<double>(base), c});
  }
  std::size_t leftover = rest - base_sum;
  std::sort(fractional.begin(), fractional.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;  // deterministic tie-break by class id
  });
  while (leftover > 0) {
    bool progressed = false;
    for (auto& [frac, c] : fractional) {
      if (leftover == 0) break;
      if (spare[c] > 0) {
        ++take[c];
        --spare[c];
        --leftover;
        progressed = true;
      }
    }
    if (!progressed) throw DataError("insufficient examples for requested split sizes");
  }
  return take;
}

// Draw n rows from the pools restricted to `classes`. Stratifies when the
// request is at least as large as the class count, otherwise draws uniformly
// from the merged remaining pool.
inline std::vector<std::size_t> draw_split(SamplePools& pools, const std::vector<int>& classes,
                                           std::size_t n, bool min_one, SplitMix64& rng) {
  std::vector<std::size_t> out;
  out.reserve(n);
  if (n == 0) return out;
  if (min_one || n >= classes.size()) {
    const std::vector<std::size_t> take = allocate_counts(pools, classes, n, min_one);
    for (int c : classes) {
      auto& pool = pools.by_class[c];
      for (std::size_t k = 0; k < take[c]; ++k) {
        out.push_back(pool.back());
        pool.pop_back();
      }
    }
  } else {
    std::vector<std::pair<int, std::size_t>> merged;  // (class, position)
    for (int c : classes)
      for (std::size_t k = 0; k < pools.by_class[c].size(); ++k) merged.push_back({c, k});
    if (n > merged.size()) throw DataError("insufficient examples for requested split sizes");
    shuffle(merged, rng);
    merged.resize(n);
    // Remove drawn rows from their pools, highest position first.
    std::sort(merged.begin(), merged.end(),
              [](const auto& a, const auto& b) { return a.second > b.second; });
    for (const auto& [c, pos] : merged) {
      auto& pool = pools.by_class[c];
      out.push_back(pool[pos]);
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pos));
    }
  }
  return out;
}

inline LabeledDataset dataset_from_rows(const LabeledDataset& source,
                                        const std::vector<std::string>& labels,
                                        const std::vector<std::size_t>& rows) {
  LabeledDataset out = LabeledDataset::with_label_index(labels);
  for (std::size_t r : rows) out.add(source.at(r));
  return out;
}

}  // namespace detail

// Add_Data: new i.i.d. instances for the existing class set; the test set is
// shared by old and new model. Deterministic in seed.
inline ScenarioSplit build_add_data(const LabeledDataset& ds, const ScenarioCounts& counts,
                                    std::uint64_t seed) {
  if (ds.num_classes() < 1) throw DataError("corpus has no classes");
  if (counts.total() > ds.size()) throw DataError("requested split sizes exceed corpus size");
  if (counts.test < static_cast<std::size_t>(ds.num_classes()))
    throw DataError("test split smaller than the number of classes");

  SplitMix64 rng = seeded_stream(seed, "scenario");
  const int c = ds.num_classes();
  detail::SamplePools pools;
  pools.by_class.resize(c);
  for (std::size_t i = 0; i < ds.size(); ++i) pools.by_class[ds.label_id(i)].push_back(i);
  std::vector<int> all_classes(c);
  for (int k = 0; k < c; ++k) all_classes[k] = k;
  for (int k = 0; k < c; ++k) shuffle(pools.by_class[k], rng);

  ScenarioSplit s;
  s.kind = ScenarioKind::kAddData;
  s.old_classes.insert(all_classes.begin(), all_classes.end());
  s.source_indices.old_train = detail::draw_split(pools, all_classes, counts.old_train, false, rng);
  s.source_indices.new_train = detail::draw_split(pools, all_classes, counts.new_train, false, rng);
  s.source_indices.old_dev = detail::draw_split(pools, all_classes, counts.old_dev, false, rng);
  s.source_indices.new_dev = detail::draw_split(pools, all_classes, counts.new_dev, false, rng);
  s.source_indices.test = detail::draw_split(pools, all_classes, counts.test, true, rng);

  const std::vector<std::string>& labels = ds.labels();
  s.old_train = detail::dataset_from_rows(ds, labels, s.source_indices.old_train);
  s.new_train = detail::dataset_from_rows(ds, labels, s.source_indices.new_train);
  s.old_dev = detail::dataset_from_rows(ds, labels, s.source_indices.old_dev);
  s.new_dev = detail::dataset_from_rows(ds, labels, s.source_indices.new_dev);
  s.test = detail::dataset_from_rows(ds, labels, s.source_indices.test);
  return s;
}

// Add_Classes: old splits are limited to the remaining classes, new splits
// carry the added classes, and the test set covers the union.
inline ScenarioSplit build_add_classes(const LabeledDataset& ds,
                                       const std::set<std::string>& new_class_labels,
                                       const ScenarioCounts& counts, std::uint64_t seed) {
  if (new_class_labels.empty()) throw ConfigError("new_class_labels is empty");
  for (const std::string& l : new_class_labels)
    if (ds.id_of(l) < 0) throw ConfigError("unknown label in new_class_labels: " + l);
  if (new_class_labels.size() >= static_cast<std::size_t>(ds.num_classes()))
    throw ConfigError("new_class_labels must be a proper subset of the corpus labels");
  if (counts.total() > ds.size()) throw DataError("requested split sizes exceed corpus size");
  if (counts.test < static_cast<std::size_t>(ds.num_classes()))
    throw DataError("test split smaller than the number of classes");

  // Relabel: old classes first (corpus order), new classes after.
  std::vector<std::string> labels;
  for (const std::string& l : ds.labels())
    if (!new_class_labels.count(l)) labels.push_back(l);
  const int c_old = static_cast<int>(labels.size());
  for (const std::string& l : ds.labels())
    if (new_class_labels.count(l)) labels.push_back(l);
  std::unordered_map<std::string, int> scen_id;
  for (std::size_t i = 0; i < labels.size(); ++i) scen_id[labels[i]] = static_cast<int>(i);

  SplitMix64 rng = seeded_stream(seed, "scenario");
  const int c = static_cast<int>(labels.size());
  detail::SamplePools pools;
  pools.by_class.resize(c);
  for (std::size_t i = 0; i < ds.size(); ++i)
    pools.by_class[scen_id[ds.at(i).label]].push_back(i);
  for (int k = 0; k < c; ++k) shuffle(pools.by_class[k], rng);

  std::vector<int> old_ids(c_old), new_ids(c - c_old), all_ids(c);
  for (int k = 0; k < c_old; ++k) old_ids[k] = k;
  for (int k = c_old; k < c; ++k) new_ids[k - c_old] = k;
  for (int k = 0; k < c; ++k) all_ids[k] = k;

  ScenarioSplit s;
  s.kind = ScenarioKind::kAddClasses;
  s.old_classes.insert(old_ids.begin(), old_ids.end());
  s.new_classes.insert(new_ids.begin(), new_ids.end());
  s.source_indices.old_train = detail::draw_split(pools, old_ids, counts.old_train, false, rng);
  s.source_indices.new_train = detail::draw_split(pools, new_ids, counts.new_train, false, rng);
  s.source_indices.old_dev = detail::draw_split(pools, old_ids, counts.old_dev, false, rng);
  s.source_indices.new_dev = detail::draw_split(pools, new_ids, counts.new_dev, false, rng);
  s.source_indices.test = detail::draw_split(pools, all_ids, counts.test, true, rng);

  s.old_train = detail::dataset_from_rows(ds, labels, s.source_indices.old_train);
  s.new_train = detail::dataset_from_rows(ds, labels, s.source_indices.new_train);
  s.old_dev = detail::dataset_from_rows(ds, labels, s.source_indices.old_dev);
  s.new_dev = detail::dataset_from_rows(ds, labels, s.source_indices.new_dev);
  s.test = detail::dataset_from_rows(ds, labels, s.source_indices.test);
  return s;
}

// Synthetic corpus: each class owns a disjoint signature vocabulary; tokens
// are replaced by shared noise tokens at noise_rate. noise_rate 0 yields a
// linearly separable task.
inline LabeledDataset synth_generate(int num_classes, int per_class, int vocab_per_class,
                                     double noise_rate, std::uint64_t seed) {
  if (num_classes < 2) throw ConfigError("synth_generate: num_classes must be >= 2");
  if (per_class < 1) throw ConfigError("synth_generate: per_class must be >= 1");
  if (vocab_per_class < 1) throw ConfigError("synth_generate: vocab_per_class must be >= 1");
  if (!(noise_rate >= 0.0 && noise_rate < 1.0))
    throw ConfigError("synth_generate: noise_rate must be in [0, 1)");

  SplitMix64 rng = seeded_stream(seed, "synth");
  const int noise_vocab = 2 * vocab_per_class;
  LabeledDataset ds;
  for (int k = 0; k < num_classes; ++k) {
    const std::string label = "class" + std::to_string(k);
    for (int i = 0; i < per_class; ++i) {
      const int len = 6 + static_cast<int>(rng.next_below(5));
      std::string text;
      for (int t = 0; t < len; ++t) {
        if (!text.empty()) text += ' ';
        if (rng.next_double() < noise_rate) {
          text += "nz" + std::to_string(rng.next_below(noise_vocab));
        } else {
          text += "c" + std::to_string(k) + "w" + std::to_string(rng.next_below(vocab_per_class));
        }
      }
      ds.add(Example{text, label});
    }
  }
  return ds;
}

// Checks every invariant of the split's kind; throws DataError on violation.
inline void validate_scenario(const ScenarioSplit& s) {
  const LabeledDataset* splits[] = {&s.old_train, &s.new_train, &s.old_dev, &s.new_dev, &s.test};
  const char* names[] = {"old_train", "new_train", "old_dev", "new_dev", "test"};
  for (const LabeledDataset* d : splits)
    if (d->labels() != s.old_train.labels())
      throw DataError("scenario splits do not share one label index");

  const int c = s.old_train.num_classes();
  std::set<int> all;
  for (int k = 0; k < c; ++k) all.insert(k);
  std::set<int> uni;
  uni.insert(s.old_classes.begin(), s.old_classes.end());
  uni.insert(s.new_classes.begin(), s.new_classes.end());
  if (uni != all) throw DataError("old_classes and new_classes do not cover the label index");

  if (s.kind == ScenarioKind::kAddData) {
    if (!s.new_classes.empty()) throw DataError("add_data scenario must have no new classes");
  } else {
    if (s.new_classes.empty()) throw DataError("add_classes scenario must have new classes");
    auto check_only = [&](const LabeledDataset& d, const std::set<int>& allowed, const char* name) {
      for (std::size_t i = 0; i < d.size(); ++i)
        if (!allowed.count(d.label_id(i)))
          throw DataError(std::string(name) + " contains an example outside its class set");
    };
    check_only(s.old_train, s.old_classes, "old_train");
    check_only(s.old_dev, s.old_classes, "old_dev");
    check_only(s.new_train, s.new_classes, "new_train");
    check_only(s.new_dev, s.new_classes, "new_dev");
    std::set<int> seen;
    for (std::size_t i = 0; i < s.test.size(); ++i) seen.insert(s.test.label_id(i));
    if (seen != all) throw DataError("test split does not cover all classes");
  }

  // Pairwise disjoint as source-row sets.
  const std::vector<std::size_t>* rows[] = {&s.source_indices.old_train, &s.source_indices.new_train,
                                            &s.source_indices.old_dev, &s.source_indices.new_dev,
                                            &s.source_indices.test};
  std::set<std::size_t> seen_rows;
  std::size_t total = 0;
  for (std::size_t i = 0; i < 5; ++i) {
    if (rows[i]->size() != splits[i]->size())
      throw DataError(std::string(names[i]) + ": source indices and examples disagree");
    seen_rows.insert(rows[i]->begin(), rows[i]->end());
    total += rows[i]->size();
  }
  if (seen_rows.size() != total) throw DataError("scenario splits are not pairwise disjoint");
}

// ---------------------------------------------------------------------------
// Manifest: persists split membership as source-row indices.
// ---------------------------------------------------------------------------

inline nlohmann::json scenario_manifest(const ScenarioSplit& s, const HashConfig* featurizer = nullptr,
                                        const std::string& source_description = "") {
  nlohmann::json j;
  j["format_version"] = 1;
  j["kind"] = to_string(s.kind);
  j["labels"] = s.old_train.labels();
  j["old_classes"] = std::vector<int>(s.old_classes.begin(), s.old_classes.end());
  j["new_classes"] = std::vector<int>(s.new_classes.begin(), s.new_classes.end());
  j["splits"] = {{"old_train", s.source_indices.old_train},
                 {"new_train", s.source_indices.new_train},
                 {"old_dev", s.source_indices.old_dev},
                 {"new_dev", s.source_indices.new_dev},
                 {"test", s.source_indices.test}};
  if (!source_description.empty()) j["source"] = source_description;
  if (featurizer != nullptr)
    j["featurizer"] = {{"buckets", featurizer->buckets},
                       {"ngram_max", featurizer->ngram_max},
                       {"hash_seed", featurizer->seed}};
  return j;
}

inline ScenarioSplit scenario_from_manifest(const LabeledDataset& ds, const nlohmann::json& j) {
  try {
    ScenarioSplit s;
    s.kind = scenario_kind_from_string(j.at("kind").get<std::string>());
    const auto labels = j.at("labels").get<std::vector<std::string>>();
    for (int c : j.at("old_classes").get<std::vector<int>>()) s.old_classes.insert(c);
    for (int c : j.at("new_classes").get<std::vector<int>>()) s.new_classes.insert(c);
    const nlohmann::json& sp = j.at("splits");
    auto load = [&](const char* name, std::vector<std::size_t>& rows, LabeledDataset& out) {
      rows = sp.at(name).get<std::vector<std::size_t>>();
      for (std::size_t r : rows)
        if (r >= ds.size()) throw DataError("manifest row index out of range");
      out = detail::dataset_from_rows(ds, labels, rows);
    };
    load("old_train", s.source_indices.old_train, s.old_train);
    load("new_train", s.source_indices.new_train, s.new_train);
    load("old_dev", s.source_indices.old_dev, s.old_dev);
    load("new_dev", s.source_indices.new_dev, s.new_dev);
    load("test", s.source_indices.test, s.test);
    validate_scenario(s);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed scenario manifest: ") + e.what());
  }
}

inline HashConfig featurizer_from_manifest(const nlohmann::json& j) {
  if (!j.contains("featurizer")) throw DataError("scenario manifest has no featurizer block");
  const nlohmann::json& f = j["featurizer"];
  HashConfig cfg;
  cfg.buckets = f.at("buckets").get<std::size_t>();
  cfg.ngram_max = f.at("ngram_max").get<int>();
  cfg.seed = f.at("hash_seed").get<std::uint64_t>();
  return cfg;
}

// ---------------------------------------------------------------------------
// Featurized view consumed by training and evaluation.
// ---------------------------------------------------------------------------

struct ScenarioData {
  ScenarioKind kind = ScenarioKind::kAddData;
  int num_classes = 0;
  int num_old_classes = 0;
  std::vector<FeaturizedExample> old_train, new_train, old_dev, new_dev, test;
  std::vector<FeaturizedExample> updated_train, updated_dev;  // old first, then new
};

inline ScenarioData featurize_scenario(const ScenarioSplit& s, const HashConfig& cfg) {
  ScenarioData d;
  d.kind = s.kind;
  d.num_classes = s.old_train.num_classes();
  d.num_old_classes = static_cast<int>(s.old_classes.size());
  d.old_train = featurize(s.old_train, cfg);
  d.new_train = featurize(s.new_train, cfg);
  d.old_dev = featurize(s.old_dev, cfg);
  d.new_dev = featurize(s.new_dev, cfg);
  d.test = featurize(s.test, cfg);
  d.updated_train = d.old_train;
  d.updated_train.insert(d.updated_train.end(), d.new_train.begin(), d.new_train.end());
  d.updated_dev = d.old_dev;
  d.updated_dev.insert(d.updated_dev.end(), d.new_dev.begin(), d.new_dev.end());
  return d;
}

}  // namespace bcwi
