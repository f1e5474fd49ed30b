#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "scmse/diff/store.hpp"

namespace scmse::diff {

constexpr char kCheckpointMagic[4] = {'S', 'C', 'M', '1'};
constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::string stage;        // "1" or "joint"
  int64_t step = 0;
  uint64_t seed = 0;
  std::string config_hash;
  std::string precision;    // "f32" or "f64"
  std::string config_text;  // canonical key = value dump

  nlohmann::json to_json() const {
    return {{"stage", stage},         {"step", step},
            {"seed", seed},           {"config_hash", config_hash},
            {"precision", precision}, {"config", config_text}};
  }
  static CheckpointMeta from_json(const nlohmann::json& j) {
    CheckpointMeta m;
    m.stage = j.value("stage", "");
    m.step = j.value("step", int64_t{0});
    m.seed = j.value("seed", uint64_t{0});
    m.config_hash = j.value("config_hash", "");
    m.precision = j.value("precision", "");
    m.config_text = j.value("config", "");
    return m;
  }
};

namespace detail {

template <typename T>
constexpr uint8_t dtype_code();
template <>
constexpr uint8_t dtype_code<float>() { return 0; }
template <>
constexpr uint8_t dtype_code<double>() { return 1; }

inline const char* dtype_name(uint8_t code) { return code == 0 ? "f32" : "f64"; }

template <typename V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& in) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

template <typename T>
void put_array(std::ostream& out, const std::string& name, const Tensor<T>& t) {
  if (name.size() > 0xffff) throw std::runtime_error("checkpoint: name too long");
  put<uint16_t>(out, static_cast<uint16_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<uint8_t>(out, dtype_code<T>());
  put<uint8_t>(out, static_cast<uint8_t>(t.rank()));
  for (Index d : t.shape()) put<uint32_t>(out, static_cast<uint32_t>(d));
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(T)));
}

template <typename T>
std::pair<std::string, Tensor<T>> get_array(std::istream& in) {
  const uint16_t name_len = get<uint16_t>(in);
  std::string name(name_len, '\0');
  in.read(name.data(), name_len);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  const uint8_t dtype = get<uint8_t>(in);
  if (dtype != dtype_code<T>())
    throw std::runtime_error(std::string("checkpoint: dtype ") + dtype_name(dtype) +
                             ", expected " + dtype_name(dtype_code<T>()));
  const uint8_t rank = get<uint8_t>(in);
  Shape shape(rank);
  for (auto& d : shape) d = static_cast<Index>(get<uint32_t>(in));
  Tensor<T> t(shape);
  in.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.numel() * sizeof(T)));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return {std::move(name), std::move(t)};
}

}  // namespace detail

/// Layout: magic "SCM1", version u32, meta length u32 + JSON text, entry
/// count u32, then per array: name (u16 length + bytes), dtype u8 (0 = f32,
/// 1 = f64), rank u8, dims u32 each, raw little-endian values row-major.
/// Adam moments ride along as sibling arrays `<name>.m` / `<name>.v`.
template <typename T>
void save_checkpoint(const std::string& path, const ParameterStore<T>& store,
                     const AdamState& adam, const CheckpointMeta& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out.write(kCheckpointMagic, 4);
  detail::put<uint32_t>(out, kCheckpointVersion);

  CheckpointMeta m = meta;
  m.precision = detail::dtype_code<T>() == 0 ? "f32" : "f64";
  nlohmann::json j = m.to_json();
  j["adam_t"] = adam.t;
  const std::string meta_text = j.dump();
  detail::put<uint32_t>(out, static_cast<uint32_t>(meta_text.size()));
  out.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));

  detail::put<uint32_t>(out, static_cast<uint32_t>(store.size() * 3));
  for (const auto& [name, e] : store) {
    detail::put_array(out, name, e.value);
    detail::put_array(out, name + ".m", e.m);
    detail::put_array(out, name + ".v", e.v);
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

/// Reads only magic/version/meta; used to pick precision before loading.
inline CheckpointMeta peek_checkpoint(const std::string& path, int64_t* adam_t = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const uint32_t version = detail::get<uint32_t>(in);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const uint32_t meta_len = detail::get<uint32_t>(in);
  std::string meta_text(meta_len, '\0');
  in.read(meta_text.data(), meta_len);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  nlohmann::json j = nlohmann::json::parse(meta_text);
  if (adam_t) *adam_t = j.value("adam_t", int64_t{0});
  return CheckpointMeta::from_json(j);
}

/// Loads into a fresh store (all-trainable masks; structural flags are the
/// caller's business). Arrays round-trip bit-exactly.
template <typename T>
CheckpointMeta load_checkpoint(const std::string& path, ParameterStore<T>& store,
                               AdamState& adam) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const uint32_t version = detail::get<uint32_t>(in);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const uint32_t meta_len = detail::get<uint32_t>(in);
  std::string meta_text(meta_len, '\0');
  in.read(meta_text.data(), meta_len);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  nlohmann::json j = nlohmann::json::parse(meta_text);
  adam.t = j.value("adam_t", int64_t{0});

  const uint32_t count = detail::get<uint32_t>(in);
  std::map<std::string, Tensor<T>> arrays;
  for (uint32_t i = 0; i < count; ++i) {
    auto [name, tensor] = detail::get_array<T>(in);
    arrays.emplace(std::move(name), std::move(tensor));
  }
  for (auto& [name, tensor] : arrays) {
    if (name.size() > 2 && (name.ends_with(".m") || name.ends_with(".v"))) continue;
    ParamEntry<T>& e = store.add(name, std::move(tensor));
    auto m_it = arrays.find(name + ".m");
    auto v_it = arrays.find(name + ".v");
    if (m_it != arrays.end()) e.m = std::move(m_it->second);
    if (v_it != arrays.end()) e.v = std::move(v_it->second);
  }
  return CheckpointMeta::from_json(j);
}

/// Copies values and moments from a checkpoint into an existing store,
/// matching by name; `prefix` restricts which entries are touched. Returns
/// the number of filled entries.
template <typename T>
size_t load_checkpoint_into(const std::string& path, ParameterStore<T>& store,
                            const std::string& prefix, CheckpointMeta* meta_out = nullptr,
                            bool load_moments = false) {
  ParameterStore<T> fresh;
  AdamState adam;
  CheckpointMeta meta = load_checkpoint(path, fresh, adam);
  if (meta_out) *meta_out = meta;
  size_t filled = 0;
  for (auto& [name, e] : fresh) {
    if (!name.starts_with(prefix)) continue;
    ParamEntry<T>& dst = store.entry(name);
    if (!dst.value.same_shape(e.value))
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    dst.value = e.value;
    if (load_moments) {
      dst.m = e.m;
      dst.v = e.v;
    }
    ++filled;
  }
  return filled;
}

}  // namespace scmse::diff
