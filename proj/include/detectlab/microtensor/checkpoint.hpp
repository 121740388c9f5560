#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "detectlab/binary_io.hpp"
#include "detectlab/microtensor/graph.hpp"

namespace detectlab::microtensor {

// DLABCKPT layout (little-endian):
//   "DLABCKPT" | version u32 | count u32 |
//   count x { name_len u32 | name (UTF-8) | rank u32 | dims u64[rank] | f32[prod(dims)] }
inline constexpr char kCheckpointMagic[8] = {'D', 'L', 'A', 'B', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

using Checkpoint = std::vector<NamedTensor>;

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  binio::Writer w;
  w.put_bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ckpt.size()));
  for (const auto& nt : ckpt) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(nt.name.size()));
    w.put_bytes(nt.name.data(), nt.name.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(nt.tensor.rank()));
    for (std::size_t d : nt.tensor.shape()) w.put<std::uint64_t>(d);
    w.put_bytes(nt.tensor.data(), nt.tensor.size() * sizeof(float));
  }
  return std::move(w.bytes());
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  binio::Reader r(bytes);
  const std::uint8_t* magic = r.take(8, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) throw ParseError("not a DLABCKPT file", 0);
  const std::size_t version_at = r.offset();
  if (r.get<std::uint32_t>("version") != kCheckpointVersion) throw ParseError("unsupported checkpoint version", version_at);
  const std::uint32_t count = r.get<std::uint32_t>("tensor count");
  Checkpoint out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = r.get<std::uint32_t>("name length");
    const auto* name = r.take(len, "name");
    const std::size_t rank_at = r.offset();
    const std::uint32_t rank = r.get<std::uint32_t>("rank");
    if (rank > 8) throw ParseError("implausible tensor rank", rank_at);
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>("dim")));
    const std::size_t n = shape_size(shape);
    if (n > r.remaining() / sizeof(float)) throw ParseError("tensor payload exceeds file", r.offset());
    std::vector<float> data(n);
    std::memcpy(data.data(), r.take(n * sizeof(float), "payload"), n * sizeof(float));
    out.push_back({std::string(reinterpret_cast<const char*>(name), len), Tensor<float>(shape, std::move(data))});
  }
  return out;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  binio::write_file(path, encode_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(binio::read_file(path)); }

inline const Tensor<float>* find_tensor(const Checkpoint& ckpt, const std::string& name) {
  for (const auto& nt : ckpt)
    if (nt.name == name) return &nt.tensor;
  return nullptr;
}

// Parameters under their own names, EMA shadows under "ema/<name>".
inline Checkpoint graph_state(const ParamGraph<float>& graph) {
  Checkpoint out;
  for (const auto& p : graph.params()) out.push_back({p.name, p.value});
  if (graph.has_ema())
    for (std::size_t i = 0; i < graph.params().size(); ++i)
      out.push_back({"ema/" + graph.params()[i].name, graph.ema()[i]});
  return out;
}

inline void load_graph_state(ParamGraph<float>& graph, const Checkpoint& ckpt) {
  bool any_ema = false;
  for (const auto& p : graph.params()) any_ema = any_ema || find_tensor(ckpt, "ema/" + p.name);
  if (any_ema && !graph.has_ema()) graph.enable_ema();
  for (std::size_t i = 0; i < graph.params().size(); ++i) {
    auto& p = graph.params()[i];
    const Tensor<float>* t = find_tensor(ckpt, p.name);
    if (!t) throw ParseError("checkpoint lacks parameter " + p.name, 0);
    if (t->shape() != p.value.shape())
      throw ShapeError("checkpoint shape " + shape_string(t->shape()) + " for " + p.name + ", graph expects " +
                       shape_string(p.value.shape()));
    p.value = *t;
    if (graph.has_ema()) {
      const Tensor<float>* e = find_tensor(ckpt, "ema/" + p.name);
      graph.ema()[i] = e ? *e : *t;
    }
  }
}

}  // namespace detectlab::microtensor
