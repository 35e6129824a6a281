// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "skyrank/scorer.hpp"
#include "skyrank/util.hpp"

namespace skyrank {

// Parameter checkpoint: magic "SKLK", u32 version, length-prefixed config
// JSON, then every tensor as (u32 name length, name, u32 rank, u64 dims,
// row-major IEEE-754 little-endian doubles). Round-trips byte-exactly.
inline constexpr char kCheckpointMagic[4] = {'S', 'K', 'L', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

struct TensorEntry {
  std::string name;
  Mat* mat = nullptr;
  Vec* vec = nullptr;
};

inline std::vector<TensorEntry> tensor_table(ScorerParams& p) {
  std::vector<TensorEntry> t;
  auto add_mat = [&](const std::string& name, Mat& m) { t.push_back({name, &m, nullptr}); };
  auto add_vec = [&](const std::string& name, Vec& v) { t.push_back({name, nullptr, &v}); };

  add_mat("input_proj", p.input_proj);
  add_mat("pos_embed", p.pos_embed);
  add_vec("separator", p.separator);
  add_vec("readout", p.readout);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    LayerParams& layer = p.layers[l];
    const std::string prefix = "layer" + std::to_string(l) + ".";
    add_mat(prefix + "w_q", layer.w_q);
    add_mat(prefix + "w_k", layer.w_k);
    add_mat(prefix + "w_v", layer.w_v);
    add_mat(prefix + "w_o", layer.w_o);
    add_mat(prefix + "mlp_w1", layer.mlp_w1);
    add_vec(prefix + "mlp_b1", layer.mlp_b1);
    add_mat(prefix + "mlp_w2", layer.mlp_w2);
    add_vec(prefix + "mlp_b2", layer.mlp_b2);
    add_vec(prefix + "ln1_scale", layer.ln1_scale);
    add_vec(prefix + "ln1_shift", layer.ln1_shift);
    add_vec(prefix + "ln2_scale", layer.ln2_scale);
    add_vec(prefix + "ln2_shift", layer.ln2_shift);
    for (auto& [slot, pair] : layer.lora) {
      const std::string base = prefix + "lora." + lora_slot_name(slot);
      add_mat(base + ".A", pair.A);
      add_mat(base + ".B", pair.B);
    }
  }
  add_vec("value_head", p.value_head);
  return t;
}

inline void put_u32(std::string& out, std::uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

inline void put_u64(std::string& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

inline void put_f64(std::string& out, double v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

class ByteReader {
 public:
  ByteReader(const std::string& data, const std::string& origin)
      : data_(data), origin_(origin) {}

  std::uint32_t u32() {
    std::uint32_t v;
    copy(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    copy(&v, 8);
    return v;
  }
  double f64() {
    double v;
    copy(&v, 8);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw DataError(origin_ + ": truncated checkpoint");
  }
  void copy(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, data_.data() + pos_, n);
    pos_ += n;
  }
  const std::string& data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_params(const ScorerParams& params) {
  nlohmann::ordered_json cfg_json;
  to_json(cfg_json, params.config);
  const std::string cfg = cfg_json.dump();

  std::string out;
  out.append(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u64(out, cfg.size());
  out += cfg;

  auto table = detail::tensor_table(const_cast<ScorerParams&>(params));
  for (const auto& t : table) {
    detail::put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    if (t.mat) {
      detail::put_u32(out, 2);
      detail::put_u64(out, static_cast<std::uint64_t>(t.mat->rows()));
      detail::put_u64(out, static_cast<std::uint64_t>(t.mat->cols()));
      for (Eigen::Index i = 0; i < t.mat->rows(); ++i)
        for (Eigen::Index j = 0; j < t.mat->cols(); ++j)
          detail::put_f64(out, (*t.mat)(i, j));
    } else {
      detail::put_u32(out, 1);
      detail::put_u64(out, static_cast<std::uint64_t>(t.vec->size()));
      for (Eigen::Index i = 0; i < t.vec->size(); ++i)
        detail::put_f64(out, (*t.vec)(i));
    }
  }
  return out;
}

inline ScorerParams deserialize_params(const std::string& data,
                                       const std::string& origin = "<memory>") {
  detail::ByteReader in(data, origin);
  const std::string magic = in.bytes(4);
  if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0) {
    throw DataError(origin + ": not a scorer checkpoint");
  }
  if (in.u32() != kCheckpointVersion) {
    throw DataError(origin + ": unsupported checkpoint version");
  }
  const std::uint64_t cfg_len = in.u64();
  ScorerConfig config;
  try {
    nlohmann::json cfg_json = nlohmann::json::parse(in.bytes(cfg_len));
    config = cfg_json.get<ScorerConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(origin + ": bad config block: " + e.what());
  }
  config.validate();

  // Allocate the full structure from the config, then fill tensors in the
  // canonical order; any name/shape drift is rejected.
  ScorerParams params = init_params(config);
  auto table = detail::tensor_table(params);
  for (auto& t : table) {
    const std::uint32_t name_len = in.u32();
    const std::string name = in.bytes(name_len);
    if (name != t.name) {
      throw DataError(origin + ": expected tensor \"" + t.name + "\", found \"" +
                      name + "\"");
    }
    const std::uint32_t rank = in.u32();
    if (t.mat) {
      if (rank != 2) throw DataError(origin + ": tensor \"" + name + "\" must have rank 2");
      const auto rows = static_cast<Eigen::Index>(in.u64());
      const auto cols = static_cast<Eigen::Index>(in.u64());
      if (rows != t.mat->rows() || cols != t.mat->cols()) {
        throw DataError(origin + ": tensor \"" + name + "\" has unexpected shape");
      }
      for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) (*t.mat)(i, j) = in.f64();
    } else {
      if (rank != 1) throw DataError(origin + ": tensor \"" + name + "\" must have rank 1");
      const auto n = static_cast<Eigen::Index>(in.u64());
      if (n != t.vec->size()) {
        throw DataError(origin + ": tensor \"" + name + "\" has unexpected shape");
      }
      for (Eigen::Index i = 0; i < n; ++i) (*t.vec)(i) = in.f64();
    }
  }
  if (!in.at_end()) throw DataError(origin + ": trailing bytes after tensors");
  return params;
}

inline void save_checkpoint(const ScorerParams& params,
                            const std::filesystem::path& path) {
  atomic_write_file(path, serialize_params(params));
}

inline ScorerParams load_checkpoint(const std::filesystem::path& path) {
  return deserialize_params(read_file(path), path.string());
}

inline std::string params_checksum(const ScorerParams& params) {
  return sha256_hex(serialize_params(params));
}

}  // namespace skyrank
