#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "detectlab/error.hpp"

namespace detectlab::datasets {

enum class Provenance { Real, Generated, Procedural };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::Real: return "real";
    case Provenance::Generated: return "generated";
    case Provenance::Procedural: return "procedural";
  }
  return "?";
}

// Labeled u8 images stored [N, C, H, W].
struct ImageDataset {
  std::string name;
  Provenance provenance = Provenance::Real;
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::uint32_t num_classes = 1;
  std::vector<std::uint8_t> pixels;
  std::vector<std::uint32_t> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return channels * height * width; }

  std::span<const std::uint8_t> image(std::size_t i) const {
    return {pixels.data() + i * image_size(), image_size()};
  }
  std::span<std::uint8_t> image(std::size_t i) { return {pixels.data() + i * image_size(), image_size()}; }

  void push_back(std::span<const std::uint8_t> img, std::uint32_t label) {
    if (img.size() != image_size()) throw ShapeError("push_back: image has wrong size");
    pixels.insert(pixels.end(), img.begin(), img.end());
    labels.push_back(label);
  }

  void validate() const {
    if (labels.empty()) throw ShapeError("dataset '" + name + "' is empty");
    if (channels != 1 && channels != 3) throw ShapeError("dataset '" + name + "' must have 1 or 3 channels");
    if (height == 0 || width == 0) throw ShapeError("dataset '" + name + "' has zero extent");
    if (pixels.size() != labels.size() * image_size()) throw ShapeError("dataset '" + name + "' pixel count mismatch");
    if (num_classes == 0) throw RangeError("dataset '" + name + "' has zero classes");
    for (auto l : labels)
      if (l >= num_classes) throw RangeError("dataset '" + name + "' has label " + std::to_string(l) + " >= num_classes");
  }

  // Same shape and classes, no images.
  ImageDataset empty_like() const {
    ImageDataset out;
    out.name = name;
    out.provenance = provenance;
    out.channels = channels;
    out.height = height;
    out.width = width;
    out.num_classes = num_classes;
    return out;
  }

  bool operator==(const ImageDataset&) const = default;
};

struct SplitSpec {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;

  bool operator==(const SplitSpec&) const = default;
};

inline ImageDataset select(const ImageDataset& ds, std::span<const std::size_t> indices) {
  ImageDataset out = ds.empty_like();
  out.pixels.reserve(indices.size() * ds.image_size());
  out.labels.reserve(indices.size());
  for (auto i : indices) {
    if (i >= ds.size()) throw RangeError("select: index " + std::to_string(i) + " out of range");
    out.push_back(ds.image(i), ds.labels[i]);
  }
  return out;
}

// Concatenates datasets of identical geometry.
inline ImageDataset concat(const std::vector<const ImageDataset*>& parts) {
  if (parts.empty()) throw ShapeError("concat: no datasets");
  ImageDataset out = parts.front()->empty_like();
  for (const auto* p : parts) {
    if (p->channels != out.channels || p->height != out.height || p->width != out.width)
      throw ShapeError("concat: geometry mismatch");
    out.num_classes = std::max(out.num_classes, p->num_classes);
    out.pixels.insert(out.pixels.end(), p->pixels.begin(), p->pixels.end());
    out.labels.insert(out.labels.end(), p->labels.begin(), p->labels.end());
  }
  return out;
}

}  // namespace detectlab::datasets
