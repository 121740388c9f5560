#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "detectlab/complexity/complexity.hpp"
#include "detectlab/csv.hpp"
#include "detectlab/datasets/io.hpp"
#include "detectlab/datasets/procedural.hpp"
#include "detectlab/datasets/transforms.hpp"
#include "detectlab/detectors/zoo.hpp"
#include "detectlab/error.hpp"

namespace detectlab::lab {

// One [dataset.<name>] section.
struct DatasetEntry {
  std::string name;
  bool procedural = true;
  // procedural
  datasets::Family family = datasets::Family::Constant;
  std::size_t count = 2000;
  std::uint32_t classes = 2;
  std::size_t channels = 1;
  // ingested
  std::string path;
  datasets::Format format = datasets::Format::RawDlab;
  // "none", "hflip" or "hvflip-all"
  std::string augment = "none";

  bool operator==(const DatasetEntry&) const = default;
};

struct GeneratorSettings {
  std::size_t timesteps = 200;
  std::size_t steps = 2000;
  std::size_t batch = 32;
  double lr = 2e-3;
  double ema_decay = 0.995;
  std::size_t base_channels = 32;
  std::size_t levels = 3;
  std::size_t time_dim = 64;
  bool attention = true;
  // Generated train split size; 0 matches the real train split.
  std::size_t train_cap = 0;

  bool operator==(const GeneratorSettings&) const = default;
};

struct DetectorSettings {
  std::size_t iterations = 3000;
  std::size_t batch = 64;
  double lr = 2e-4;
  double weight_decay = 1e-2;

  bool operator==(const DetectorSettings&) const = default;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::string output = "out";
  std::uint64_t global_seed = 0;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::vector<std::size_t> resolutions = {32};
  std::vector<detectors::Family> families = {detectors::Family::PixelBase, detectors::Family::PixelBig};
  std::vector<complexity::Backend> backends = {complexity::Backend::PngConcat};
  // Real-vs-real control: the "generated" side is a fresh draw of the dataset.
  bool real_vs_real = false;
  GeneratorSettings generator;
  DetectorSettings detector;
  std::vector<DatasetEntry> datasets;

  bool operator==(const ExperimentConfig&) const = default;

  void validate() const {
    if (seeds.empty()) throw RangeError("config: seeds must be nonempty");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
      throw RangeError("config: seeds must be distinct");
    if (resolutions.empty()) throw RangeError("config: resolutions must be nonempty");
    for (auto r : resolutions)
      if (r < 4 || r % 4 != 0) throw RangeError("config: resolution " + std::to_string(r) + " must be a multiple of 4");
    if (families.empty()) throw RangeError("config: detector families must be nonempty");
    if (datasets.empty()) throw RangeError("config: no [dataset.*] sections");
    std::set<std::string> names;
    for (const auto& d : datasets) {
      if (d.name.empty()) throw RangeError("config: dataset with empty name");
      if (!names.insert(d.name).second) throw RangeError("config: duplicate dataset '" + d.name + "'");
      if (d.procedural) {
        if (d.count < 16) throw RangeError("config: dataset '" + d.name + "' needs count >= 16");
        if (d.classes == 0) throw RangeError("config: dataset '" + d.name + "' needs classes >= 1");
        if (d.channels != 1 && d.channels != 3) throw RangeError("config: dataset '" + d.name + "' channels must be 1 or 3");
      } else if (!std::filesystem::exists(d.path)) {
        throw RangeError("config: dataset '" + d.name + "' path does not exist: " + d.path);
      }
      if (d.augment != "none") datasets::parse_augment_mode(d.augment);
    }
    if (generator.steps == 0 || generator.batch == 0 || generator.timesteps < 2)
      throw RangeError("config: generator steps/batch must be >= 1 and timesteps >= 2");
    if (detector.iterations == 0 || detector.batch == 0) throw RangeError("config: detector iterations/batch must be >= 1");
  }
};

namespace detail {

template <class T, class F>
std::string join(const std::vector<T>& xs, F&& f) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + f(xs[i]);
  return out;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::string num(double v) { return csv::number(v); }

}  // namespace detail

inline std::string to_ini(const ExperimentConfig& c) {
  using boost::property_tree::ptree;
  ptree t;
  auto u = [](auto v) { return std::to_string(v); };
  t.put("experiment.name", c.name);
  t.put("experiment.output", c.output);
  t.put("experiment.global_seed", u(c.global_seed));
  t.put("experiment.seeds", detail::join(c.seeds, u));
  t.put("experiment.resolutions", detail::join(c.resolutions, u));
  t.put("experiment.families", detail::join(c.families, [](auto f) { return std::string(detectors::to_string(f)); }));
  t.put("experiment.backends", detail::join(c.backends, [](auto b) { return std::string(complexity::to_string(b)); }));
  t.put("experiment.real_vs_real", c.real_vs_real ? "true" : "false");
  const auto& g = c.generator;
  t.put("generator.timesteps", u(g.timesteps));
  t.put("generator.steps", u(g.steps));
  t.put("generator.batch", u(g.batch));
  t.put("generator.lr", detail::num(g.lr));
  t.put("generator.ema_decay", detail::num(g.ema_decay));
  t.put("generator.base_channels", u(g.base_channels));
  t.put("generator.levels", u(g.levels));
  t.put("generator.time_dim", u(g.time_dim));
  t.put("generator.attention", g.attention ? "true" : "false");
  t.put("generator.train_cap", u(g.train_cap));
  const auto& d = c.detector;
  t.put("detector.iterations", u(d.iterations));
  t.put("detector.batch", u(d.batch));
  t.put("detector.lr", detail::num(d.lr));
  t.put("detector.weight_decay", detail::num(d.weight_decay));
  for (const auto& ds : c.datasets) {
    ptree s;
    if (ds.procedural) {
      s.put("kind", "procedural");
      s.put("family", datasets::to_string(ds.family));
      s.put("count", u(ds.count));
      s.put("classes", u(ds.classes));
      s.put("channels", u(ds.channels));
    } else {
      s.put("kind", "ingest");
      s.put("path", ds.path);
      s.put("format", ds.format == datasets::Format::Idx      ? "idx"
                      : ds.format == datasets::Format::PngDir ? "png-dir"
                                                              : "raw-dlab");
    }
    s.put("augment", ds.augment);
    t.push_back({"dataset." + ds.name, s});
  }
  std::ostringstream out;
  boost::property_tree::write_ini(out, t);
  return out.str();
}

inline ExperimentConfig parse_ini(const std::string& text) {
  using boost::property_tree::ptree;
  ptree t;
  std::istringstream in(text);
  try {
    boost::property_tree::read_ini(in, t);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ParseError("config: " + e.message() + " on line " + std::to_string(e.line()), e.line());
  }
  static const std::set<std::string> kSections = {"experiment", "generator", "detector"};
  auto key_error = [](const std::string& where, const std::string& key) {
    return RangeError("config: unknown key '" + key + "' in [" + where + "]");
  };
  auto to_u = [](const std::string& key, const std::string& v) -> std::uint64_t {
    try {
      std::size_t pos = 0;
      const auto n = std::stoull(v, &pos);
      if (pos != v.size() || v.front() == '-') throw std::invalid_argument(v);
      return n;
    } catch (const std::exception&) {
      throw RangeError("config: " + key + " expects a non-negative integer, got '" + v + "'");
    }
  };
  auto to_d = [](const std::string& key, const std::string& v) {
    try {
      return csv::to_double(v, key.c_str());
    } catch (const ParseError&) {
      throw RangeError("config: " + key + " expects a number, got '" + v + "'");
    }
  };
  auto to_b = [](const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw RangeError("config: " + key + " expects true/false, got '" + v + "'");
  };

  ExperimentConfig c;
  c.datasets.clear();
  for (const auto& [section, body] : t) {
    if (!body.data().empty()) throw RangeError("config: key '" + section + "' outside any section");
    const bool is_dataset = section.rfind("dataset.", 0) == 0;
    if (!is_dataset && !kSections.count(section)) throw RangeError("config: unknown section [" + section + "]");
    if (is_dataset) {
      DatasetEntry d;
      d.name = section.substr(8);
      std::string kind = body.get<std::string>("kind", "procedural");
      if (kind != "procedural" && kind != "ingest")
        throw RangeError("config: [" + section + "] kind must be procedural or ingest, got '" + kind + "'");
      d.procedural = kind == "procedural";
      for (const auto& [k, v] : body) {
        const std::string& s = v.data();
        if (k == "kind") continue;
        if (k == "augment") d.augment = s;
        else if (d.procedural && k == "family") d.family = datasets::parse_family(s);
        else if (d.procedural && k == "count") d.count = to_u(k, s);
        else if (d.procedural && k == "classes") d.classes = static_cast<std::uint32_t>(to_u(k, s));
        else if (d.procedural && k == "channels") d.channels = to_u(k, s);
        else if (!d.procedural && k == "path") d.path = s;
        else if (!d.procedural && k == "format") d.format = datasets::parse_format(s);
        else throw key_error(section, k);
      }
      c.datasets.push_back(d);
      continue;
    }
    for (const auto& [k, v] : body) {
      const std::string& s = v.data();
      const std::string key = section + "." + k;
      if (section == "experiment") {
        if (k == "name") c.name = s;
        else if (k == "output") c.output = s;
        else if (k == "global_seed") c.global_seed = to_u(key, s);
        else if (k == "seeds") {
          c.seeds.clear();
          for (const auto& x : detail::split_list(s)) c.seeds.push_back(to_u(key, x));
        } else if (k == "resolutions") {
          c.resolutions.clear();
          for (const auto& x : detail::split_list(s)) c.resolutions.push_back(to_u(key, x));
        } else if (k == "families") {
          c.families.clear();
          for (const auto& x : detail::split_list(s)) c.families.push_back(detectors::parse_family(x));
        } else if (k == "backends") {
          c.backends.clear();
          for (const auto& x : detail::split_list(s)) c.backends.push_back(complexity::parse_backend(x));
        } else if (k == "real_vs_real") c.real_vs_real = to_b(key, s);
        else throw key_error(section, k);
      } else if (section == "generator") {
        auto& g = c.generator;
        if (k == "timesteps") g.timesteps = to_u(key, s);
        else if (k == "steps") g.steps = to_u(key, s);
        else if (k == "batch") g.batch = to_u(key, s);
        else if (k == "lr") g.lr = to_d(key, s);
        else if (k == "ema_decay") g.ema_decay = to_d(key, s);
        else if (k == "base_channels") g.base_channels = to_u(key, s);
        else if (k == "levels") g.levels = to_u(key, s);
        else if (k == "time_dim") g.time_dim = to_u(key, s);
        else if (k == "attention") g.attention = to_b(key, s);
        else if (k == "train_cap") g.train_cap = to_u(key, s);
        else throw key_error(section, k);
      } else {
        auto& d = c.detector;
        if (k == "iterations") d.iterations = to_u(key, s);
        else if (k == "batch") d.batch = to_u(key, s);
        else if (k == "lr") d.lr = to_d(key, s);
        else if (k == "weight_decay") d.weight_decay = to_d(key, s);
        else throw key_error(section, k);
      }
    }
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  auto c = parse_ini(ss.str());
  c.validate();
  return c;
}

inline void save_config(const std::string& path, const ExperimentConfig& c) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write config " + path);
  out << to_ini(c);
}

}  // namespace detectlab::lab
