#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "bcwi/errors.hpp"
#include "bcwi/fisher.hpp"
#include "bcwi/model.hpp"

namespace bcwi {

// Checkpoint container, version 1:
//   "BCWI"                       4 magic bytes
//   version                      1 byte (0x01)
//   header_len                   u32 LE
//   header                       JSON, header_len bytes (keys sorted)
//   payload                      named arrays in header order, f64 LE each
//   crc32(payload)               u32 LE, polynomial 0xEDB88320
// The header lists array names and shapes; everything round-trips
// byte-identically.

struct CheckpointMeta {
  std::string role;
  std::uint64_t seed = 0;
  std::string config_hash;
};

namespace detail {

inline const std::array<std::uint32_t, 256>& crc32_table() {
  static const std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  return table;
}

inline std::uint32_t crc32(const unsigned char* data, std::size_t len) {
  std::uint32_t c = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i) c = crc32_table()[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

inline void put_u32le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline void put_f64le(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline double get_f64le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

struct RawContainer {
  nlohmann::json header;
  std::vector<std::vector<double>> arrays;  // aligned with header["arrays"]
};

inline void write_container(const std::string& path, const nlohmann::json& header,
                            const std::vector<std::span<const double>>& arrays) {
  const std::string header_bytes = header.dump();
  std::string out;
  out += "BCWI";
  out.push_back('\x01');
  put_u32le(out, static_cast<std::uint32_t>(header_bytes.size()));
  out += header_bytes;
  std::string payload;
  for (const auto& arr : arrays)
    for (double v : arr) put_f64le(payload, v);
  out += payload;
  put_u32le(out, crc32(reinterpret_cast<const unsigned char*>(payload.data()), payload.size()));

  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write checkpoint: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("checkpoint write failed: " + path);
}

inline RawContainer read_container(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t n = bytes.size();
  if (n < 9 || std::memcmp(p, "BCWI", 4) != 0)
    throw DataError(path + ": not a checkpoint file (bad magic)");
  if (p[4] != 0x01) throw DataError(path + ": unsupported checkpoint version");
  const std::uint32_t header_len = get_u32le(p + 5);
  if (9 + static_cast<std::size_t>(header_len) + 4 > n)
    throw DataError(path + ": truncated checkpoint header");

  RawContainer raw;
  try {
    raw.header = nlohmann::json::parse(bytes.substr(9, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": malformed checkpoint header: " + e.what());
  }

  std::size_t total_values = 0;
  for (const auto& a : raw.header.at("arrays")) {
    std::size_t sz = 1;
    for (const auto& d : a.at("shape")) sz *= d.get<std::size_t>();
    total_values += sz;
  }
  const std::size_t payload_off = 9 + header_len;
  const std::size_t payload_len = total_values * 8;
  if (payload_off + payload_len + 4 != n) throw DataError(path + ": truncated checkpoint payload");
  const std::uint32_t stored_crc = get_u32le(p + payload_off + payload_len);
  if (stored_crc != crc32(p + payload_off, payload_len))
    throw DataError(path + ": checkpoint checksum mismatch");

  std::size_t off = payload_off;
  for (const auto& a : raw.header.at("arrays")) {
    std::size_t sz = 1;
    for (const auto& d : a.at("shape")) sz *= d.get<std::size_t>();
    std::vector<double> vals(sz);
    for (std::size_t i = 0; i < sz; ++i, off += 8) vals[i] = get_f64le(p + off);
    raw.arrays.push_back(std::move(vals));
  }
  return raw;
}

inline nlohmann::json spec_to_json(const ModelSpec& spec) {
  return {{"input_dim", spec.input_dim},
          {"hidden_dim", spec.hidden_dim},
          {"num_classes", spec.num_classes},
          {"activation", to_string(spec.activation)}};
}

inline ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec spec;
  spec.input_dim = j.at("input_dim").get<std::size_t>();
  spec.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  spec.num_classes = j.at("num_classes").get<std::size_t>();
  spec.activation = activation_from_string(j.at("activation").get<std::string>());
  return spec;
}

inline nlohmann::json base_header(const ModelSpec& spec, const std::vector<SegmentInfo>& segments,
                                  const CheckpointMeta& meta, const char* kind) {
  nlohmann::json arrays = nlohmann::json::array();
  for (const SegmentInfo& seg : segments)
    arrays.push_back({{"name", seg.name}, {"shape", seg.shape}});
  return {{"format_version", 1},
          {"kind", kind},
          {"spec", spec_to_json(spec)},
          {"arrays", arrays},
          {"provenance",
           {{"role", meta.role}, {"seed", meta.seed}, {"config_hash", meta.config_hash}}}};
}

inline CheckpointMeta meta_from_header(const nlohmann::json& header) {
  CheckpointMeta meta;
  if (header.contains("provenance")) {
    const auto& p = header["provenance"];
    meta.role = p.value("role", "");
    meta.seed = p.value("seed", std::uint64_t{0});
    meta.config_hash = p.value("config_hash", "");
  }
  return meta;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ParamVector& params,
                            const CheckpointMeta& meta = {}) {
  const nlohmann::json header =
      detail::base_header(params.spec(), params.segments(), meta, "params");
  std::vector<std::span<const double>> arrays;
  for (const SegmentInfo& seg : params.segments()) arrays.push_back(params.segment(seg.name));
  detail::write_container(path, header, arrays);
}

inline ParamVector load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr) {
  const detail::RawContainer raw = detail::read_container(path);
  try {
    if (raw.header.at("kind").get<std::string>() != "params")
      throw DataError(path + ": not a parameter checkpoint");
    const ModelSpec spec = detail::spec_from_json(raw.header.at("spec"));
    ParamVector params(spec);
    const auto& layout = params.segments();
    const auto& arrays_meta = raw.header.at("arrays");
    if (arrays_meta.size() != layout.size())
      throw DataError(path + ": segment count does not match the model spec");
    for (std::size_t i = 0; i < layout.size(); ++i) {
      if (arrays_meta[i].at("name").get<std::string>() != layout[i].name ||
          arrays_meta[i].at("shape").get<std::vector<std::size_t>>() != layout[i].shape)
        throw DataError(path + ": segment layout does not match the model spec");
      auto dst = params.segment(layout[i].name);
      std::copy(raw.arrays[i].begin(), raw.arrays[i].end(), dst.begin());
    }
    if (meta != nullptr) *meta = detail::meta_from_header(raw.header);
    return params;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": malformed checkpoint header: " + e.what());
  }
}

// Fisher diagonals share the container, tagged with their normalization mode.
inline void save_fisher(const std::string& path, const FisherDiagonal& fisher,
                        const CheckpointMeta& meta = {}) {
  const std::vector<SegmentInfo> layout = segment_layout(fisher.spec);
  nlohmann::json header = detail::base_header(fisher.spec, layout, meta, "fisher");
  header["fisher"] = {{"normalization", to_string(fisher.normalization)},
                      {"epsilon_floor", fisher.epsilon_floor}};
  std::vector<std::span<const double>> arrays;
  std::span<const double> flat(fisher.values);
  for (const SegmentInfo& seg : layout) arrays.push_back(flat.subspan(seg.offset, seg.size));
  detail::write_container(path, header, arrays);
}

inline FisherDiagonal load_fisher(const std::string& path, CheckpointMeta* meta = nullptr) {
  const detail::RawContainer raw = detail::read_container(path);
  try {
    if (raw.header.at("kind").get<std::string>() != "fisher")
      throw DataError(path + ": not a fisher checkpoint");
    FisherDiagonal fisher;
    fisher.spec = detail::spec_from_json(raw.header.at("spec"));
    fisher.normalization =
        fisher_normalization_from_string(raw.header.at("fisher").at("normalization").get<std::string>());
    fisher.epsilon_floor = raw.header.at("fisher").at("epsilon_floor").get<double>();
    fisher.values.reserve(fisher.spec.param_count());
    for (const auto& arr : raw.arrays) fisher.values.insert(fisher.values.end(), arr.begin(), arr.end());
    if (fisher.values.size() != fisher.spec.param_count())
      throw DataError(path + ": fisher value count does not match the model spec");
    if (meta != nullptr) *meta = detail::meta_from_header(raw.header);
    return fisher;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": malformed checkpoint header: " + e.what());
  }
}

}  // namespace bcwi
