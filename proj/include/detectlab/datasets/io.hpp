#pragma once

#include <nlohmann/json.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>

#include "detectlab/binary_io.hpp"
#include "detectlab/datasets/image_dataset.hpp"
#include "detectlab/png_codec.hpp"

namespace detectlab::datasets {

enum class Format { PngDir, Idx, RawDlab };

inline Format parse_format(const std::string& s) {
  if (s == "png-dir") return Format::PngDir;
  if (s == "idx") return Format::Idx;
  if (s == "raw-dlab") return Format::RawDlab;
  throw RangeError("unknown dataset format '" + s + "' (expected png-dir, idx or raw-dlab)");
}

inline constexpr char kRawMagic[8] = {'D', 'L', 'A', 'B', 'I', 'M', 'G', 'S'};
inline constexpr std::uint32_t kRawVersion = 1;

// raw-dlab: magic, version u32, N u64, C u8, H u32, W u32, num_classes u32,
// N labels u16, then N*C*H*W bytes. Little-endian.
inline std::vector<std::uint8_t> encode_raw_dlab(const ImageDataset& ds) {
  ds.validate();
  if (ds.num_classes > 65536) throw RangeError("raw-dlab: labels must fit in u16");
  binio::Writer w;
  w.put_bytes(kRawMagic, sizeof kRawMagic);
  w.put<std::uint32_t>(kRawVersion);
  w.put<std::uint64_t>(ds.size());
  w.put<std::uint8_t>(static_cast<std::uint8_t>(ds.channels));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.height));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.width));
  w.put<std::uint32_t>(ds.num_classes);
  for (auto l : ds.labels) w.put<std::uint16_t>(static_cast<std::uint16_t>(l));
  w.put_bytes(ds.pixels.data(), ds.pixels.size());
  return std::move(w.bytes());
}

inline ImageDataset decode_raw_dlab(const std::vector<std::uint8_t>& bytes, const std::string& name = "raw") {
  binio::Reader r(bytes);
  const auto* magic = r.take(sizeof kRawMagic, "magic");
  if (!std::equal(magic, magic + sizeof kRawMagic, kRawMagic)) throw ParseError("raw-dlab: bad magic", 0);
  const auto version = r.get<std::uint32_t>("version");
  if (version != kRawVersion) throw ParseError("raw-dlab: unsupported version " + std::to_string(version), 8);
  ImageDataset ds;
  ds.name = name;
  const std::size_t n_off = r.offset();
  const auto n = r.get<std::uint64_t>("N");
  const std::size_t c_off = r.offset();
  ds.channels = r.get<std::uint8_t>("C");
  ds.height = r.get<std::uint32_t>("H");
  ds.width = r.get<std::uint32_t>("W");
  const std::size_t k_off = r.offset();
  ds.num_classes = r.get<std::uint32_t>("num_classes");
  if (n == 0) throw ParseError("raw-dlab: N must be at least 1", n_off);
  if (ds.channels != 1 && ds.channels != 3) throw ParseError("raw-dlab: C must be 1 or 3", c_off);
  if (ds.height == 0 || ds.width == 0) throw ParseError("raw-dlab: zero image extent", c_off + 1);
  if (ds.num_classes == 0) throw ParseError("raw-dlab: num_classes must be at least 1", k_off);
  if (n > r.remaining() / 2) throw ParseError("raw-dlab: truncated label block", r.offset());
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t off = r.offset();
    ds.labels[i] = r.get<std::uint16_t>("label");
    if (ds.labels[i] >= ds.num_classes)
      throw ParseError("raw-dlab: label " + std::to_string(ds.labels[i]) + " out of range", off);
  }
  const std::size_t payload = n * ds.image_size();
  if (ds.image_size() != 0 && n > std::numeric_limits<std::size_t>::max() / ds.image_size())
    throw ParseError("raw-dlab: payload size overflows", r.offset());
  const auto* px = r.take(payload, "pixels");
  ds.pixels.assign(px, px + payload);
  if (r.remaining() != 0) throw ParseError("raw-dlab: trailing bytes after payload", r.offset());
  return ds;
}

inline void export_raw_dlab(const ImageDataset& ds, const std::string& path) {
  binio::write_file(path, encode_raw_dlab(ds));
}

// IDX ubyte images (magic 0x00000803, N x H x W); optional IDX labels
// (0x00000801). The label file must agree on N.
inline ImageDataset decode_idx(const std::vector<std::uint8_t>& images, const std::vector<std::uint8_t>* labels,
                               const std::string& name = "idx") {
  binio::Reader r(images);
  const auto magic = r.get_be32("magic");
  if (magic != 0x00000803u) throw ParseError("idx: expected image magic 0x00000803", 0);
  const auto n = r.get_be32("N");
  const auto h = r.get_be32("rows");
  const auto w = r.get_be32("cols");
  if (n == 0) throw ParseError("idx: zero images", 4);
  if (h == 0 || w == 0) throw ParseError("idx: zero image extent", 8);
  ImageDataset ds;
  ds.name = name;
  ds.channels = 1;
  ds.height = h;
  ds.width = w;
  const std::size_t payload = static_cast<std::size_t>(n) * h * w;
  const auto* px = r.take(payload, "pixels");
  ds.pixels.assign(px, px + payload);
  if (r.remaining() != 0) throw ParseError("idx: trailing bytes after pixels", r.offset());
  ds.labels.assign(n, 0);
  if (labels) {
    binio::Reader lr(*labels);
    if (lr.get_be32("label magic") != 0x00000801u) throw ParseError("idx labels: expected magic 0x00000801", 0);
    if (lr.get_be32("label count") != n) throw ParseError("idx labels: count disagrees with images", 4);
    std::uint32_t max_label = 0;
    for (std::uint32_t i = 0; i < n; ++i) {
      ds.labels[i] = lr.get<std::uint8_t>("label");
      max_label = std::max(max_label, ds.labels[i]);
    }
    if (lr.remaining() != 0) throw ParseError("idx labels: trailing bytes", lr.offset());
    ds.num_classes = max_label + 1;
  }
  return ds;
}

// Companion label file: "...images-idx3-ubyte" -> "...labels-idx1-ubyte",
// falling back to "...images..." -> "...labels...".
inline std::filesystem::path idx_label_path(const std::filesystem::path& images) {
  std::string s = images.filename().string();
  for (auto [from, to] : {std::pair{"images-idx3", "labels-idx1"}, std::pair{"images.idx3", "labels.idx1"},
                          std::pair{"images", "labels"}, std::pair{"idx3", "idx1"}}) {
    auto pos = s.find(from);
    if (pos == std::string::npos) continue;
    std::string t = s;
    t.replace(pos, std::strlen(from), to);
    auto candidate = images.parent_path() / t;
    if (std::filesystem::exists(candidate)) return candidate;
  }
  return {};
}

// png-dir: manifest.json is one object {filename: label}. Images appear in
// sorted filename order.
inline ImageDataset ingest_png_dir(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  const auto text = binio::read_file(manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("png-dir manifest: ") + e.what(), e.byte);
  }
  if (!manifest.is_object() || manifest.empty()) throw ParseError("png-dir manifest: expected a non-empty object", 0);
  ImageDataset ds;
  ds.name = dir.filename().string();
  std::uint32_t max_label = 0;
  bool first = true;
  for (const auto& [file, label] : manifest.items()) {
    if (!label.is_number_integer() || label.get<long long>() < 0 || label.get<long long>() > 65535)
      throw ParseError("png-dir manifest: label for '" + file + "' out of range", 0);
    const auto img = png::decode_file((dir / file).string());
    if (first) {
      ds.channels = img.channels;
      ds.height = img.height;
      ds.width = img.width;
      first = false;
    } else if (img.channels != ds.channels || img.height != ds.height || img.width != ds.width) {
      throw ParseError("png-dir: '" + file + "' has mixed dimensions", 0);
    }
    // Interleaved HWC -> planar CHW.
    const std::size_t plane = img.height * img.width;
    const std::size_t base = ds.pixels.size();
    ds.pixels.resize(base + plane * img.channels);
    for (std::size_t p = 0; p < plane; ++p)
      for (std::size_t c = 0; c < img.channels; ++c) ds.pixels[base + c * plane + p] = img.pixels[p * img.channels + c];
    const auto l = label.get<std::uint32_t>();
    ds.labels.push_back(l);
    max_label = std::max(max_label, l);
  }
  ds.num_classes = max_label + 1;
  return ds;
}

inline ImageDataset ingest(const std::filesystem::path& path, Format format) {
  if (!std::filesystem::exists(path)) throw Error("ingest: no such path " + path.string());
  ImageDataset ds;
  switch (format) {
    case Format::PngDir:
      ds = ingest_png_dir(path);
      break;
    case Format::Idx: {
      const auto images = binio::read_file(path.string());
      const auto label_path = idx_label_path(path);
      if (label_path.empty()) {
        ds = decode_idx(images, nullptr, path.stem().string());
      } else {
        const auto labels = binio::read_file(label_path.string());
        ds = decode_idx(images, &labels, path.stem().string());
      }
      break;
    }
    case Format::RawDlab:
      ds = decode_raw_dlab(binio::read_file(path.string()), path.stem().string());
      break;
  }
  ds.provenance = Provenance::Real;
  return ds;
}

}  // namespace detectlab::datasets
