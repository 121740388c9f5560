#pragma once

#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "detectlab/binary_io.hpp"
#include "detectlab/datasets/io.hpp"
#include "detectlab/datasets/procedural.hpp"
#include "detectlab/error.hpp"

namespace detectlab::lab {

// Format from the path: directories are png-dir, files are sniffed by magic.
inline datasets::Format detect_format(const std::filesystem::path& path) {
  if (std::filesystem::is_directory(path)) return datasets::Format::PngDir;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  char head[8] = {};
  in.read(head, 8);
  if (in.gcount() == 8 && std::equal(head, head + 8, datasets::kRawMagic)) return datasets::Format::RawDlab;
  if (in.gcount() >= 4 && head[0] == 0 && head[1] == 0 && head[2] == 0x08) return datasets::Format::Idx;
  throw ParseError("cannot detect dataset format of " + path.string() + " (expected raw-dlab, idx or a png-dir)", 0);
}

// A dataset argument: an existing path, or a procedural spec
// "family[:resolution[:count[:seed]]]" such as "stripes:32:2000:0".
inline datasets::ImageDataset resolve_input(const std::string& arg, std::optional<datasets::Format> format = {}) {
  if (std::filesystem::exists(arg)) {
    auto ds = datasets::ingest(arg, format ? *format : detect_format(arg));
    if (ds.name.empty()) ds.name = std::filesystem::path(arg).filename().string();
    return ds;
  }
  std::vector<std::string> parts;
  std::stringstream ss(arg);
  for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
  if (parts.empty() || parts.size() > 4) throw RangeError("input '" + arg + "' is neither a path nor a procedural spec");
  datasets::Family family;
  try {
    family = datasets::parse_family(parts[0]);
  } catch (const RangeError&) {
    throw RangeError("input '" + arg + "' is neither an existing path nor a procedural spec family[:res[:count[:seed]]]");
  }
  auto num = [&](std::size_t i, std::uint64_t dflt) -> std::uint64_t {
    if (i >= parts.size()) return dflt;
    try {
      std::size_t pos = 0;
      const auto v = std::stoull(parts[i], &pos);
      if (pos != parts[i].size()) throw std::invalid_argument(parts[i]);
      return v;
    } catch (const std::exception&) {
      throw RangeError("input '" + arg + "': bad number '" + parts[i] + "'");
    }
  };
  auto spec = datasets::ProceduralSpec::of(family, num(1, 32), num(2, 2000), num(3, 0));
  auto ds = datasets::generate_procedural(spec);
  ds.name = spec.name();
  return ds;
}

}  // namespace detectlab::lab
