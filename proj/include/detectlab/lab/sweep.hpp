#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "detectlab/complexity/complexity.hpp"
#include "detectlab/datasets/io.hpp"
#include "detectlab/datasets/procedural.hpp"
#include "detectlab/datasets/transforms.hpp"
#include "detectlab/detectors/harness.hpp"
#include "detectlab/diffusion/ddpm.hpp"
#include "detectlab/lab/config.hpp"
#include "detectlab/lab/records.hpp"
#include "detectlab/metrics/features.hpp"
#include "detectlab/parallel.hpp"

namespace detectlab::lab {

using LogFn = std::function<void(const std::string&)>;

// FNV-1a; stable across platforms, used to derive per-dataset seeds.
inline std::uint64_t stable_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t cell_seed(const ExperimentConfig& cfg, const std::string& dataset, std::size_t resolution) {
  return mix_seed(mix_seed(cfg.global_seed, stable_hash(dataset)), resolution);
}

// The dataset as rendered or ingested at `resolution`, augmented.
inline datasets::ImageDataset load_dataset(const ExperimentConfig& cfg, const DatasetEntry& d, std::size_t resolution,
                                           std::uint64_t draw = 0) {
  datasets::ImageDataset ds;
  if (d.procedural) {
    auto spec = datasets::ProceduralSpec::of(d.family, resolution, d.count, mix_seed(cell_seed(cfg, d.name, 0), draw));
    spec.num_classes = d.classes;
    spec.channels = d.channels;
    ds = datasets::generate_procedural(spec);
  } else {
    if (draw != 0) throw RangeError("dataset '" + d.name + "': real-vs-real needs a procedural dataset");
    ds = datasets::ingest(d.path, d.format);
    if (ds.height != resolution || ds.width != resolution) ds = datasets::preprocess(ds, resolution, resolution);
  }
  if (d.augment != "none") ds = datasets::augment(ds, datasets::parse_augment_mode(d.augment));
  ds.name = d.name;
  return ds;
}

struct SplitSet {
  datasets::ImageDataset train, val, test;
};

inline SplitSet split_dataset(const datasets::ImageDataset& ds, std::uint64_t seed) {
  const auto s = datasets::split(ds, seed);
  return {datasets::select(ds, s.train), datasets::select(ds, s.val), datasets::select(ds, s.test)};
}

inline diffusion::GeneratorConfig generator_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  diffusion::GeneratorConfig g;
  const auto& s = cfg.generator;
  g.timesteps = s.timesteps;
  g.steps = s.steps;
  g.batch = s.batch;
  g.lr = s.lr;
  g.ema_decay = s.ema_decay;
  g.denoiser.base_channels = s.base_channels;
  g.denoiser.levels = s.levels;
  g.denoiser.time_dim = s.time_dim;
  g.denoiser.attention = s.attention;
  g.seed = seed;
  return g;
}

// Everything the detector cells of one (dataset, resolution) pair share.
struct PreparedPair {
  std::string dataset;
  std::size_t resolution = 0;
  std::size_t channels = 1;
  complexity::ComplexityReport complexity;
  double ratio = 0.0;  // png-concat
  SplitSet real, fake;
  double frechet = 0.0;
};

struct SweepPaths {
  std::filesystem::path root;
  std::filesystem::path records() const { return root / "records.csv"; }
  std::filesystem::path failures() const { return root / "failures.csv"; }
  std::filesystem::path timings() const { return root / "timings.csv"; }
  std::filesystem::path complexity() const { return root / "complexity.csv"; }
  std::filesystem::path generator(const std::string& ds, std::size_t res) const {
    return root / "generators" / (ds + "-" + std::to_string(res) + ".ckpt");
  }
  std::filesystem::path generated(const std::string& ds, std::size_t res, const char* split) const {
    return root / "generated" / (ds + "-" + std::to_string(res) + "-" + split + ".dlab");
  }
};

inline void save_raw_atomic(const std::filesystem::path& path, const datasets::ImageDataset& ds) {
  const auto bytes = datasets::encode_raw_dlab(ds);
  write_atomic(path.string(), std::string(bytes.begin(), bytes.end()));
}

// Loads the cached generator for (dataset, resolution), training and caching it first if needed.
inline diffusion::TrainedGenerator ensure_generator(const ExperimentConfig& cfg, const std::string& dataset,
                                                   std::size_t resolution, const datasets::ImageDataset& real_train,
                                                   const SweepPaths& paths, const LogFn& log) {
  const auto ckpt = paths.generator(dataset, resolution);
  const std::string tag = dataset + "@" + std::to_string(resolution);
  if (std::filesystem::exists(ckpt)) {
    if (log) log(tag + ": reusing generator " + ckpt.string());
    return diffusion::load_generator(ckpt.string());
  }
  if (log) log(tag + ": training generator");
  auto gen = diffusion::train_generator(real_train, generator_config(cfg, mix_seed(cell_seed(cfg, dataset, resolution), 3)));
  std::filesystem::create_directories(ckpt.parent_path());
  const auto bytes = microtensor::encode_checkpoint(diffusion::generator_checkpoint(gen));
  write_atomic(ckpt.string(), std::string(bytes.begin(), bytes.end()));
  return gen;
}

// Data prep, complexity, generator (cached) and matched generated splits.
inline PreparedPair prepare_pair(const ExperimentConfig& cfg, const DatasetEntry& d, std::size_t resolution,
                                 const SweepPaths& paths, std::size_t threads, const LogFn& log) {
  PreparedPair p;
  p.dataset = d.name;
  p.resolution = resolution;
  const auto ds = load_dataset(cfg, d, resolution);
  p.channels = ds.channels;
  auto backends = cfg.backends;
  if (std::find(backends.begin(), backends.end(), complexity::Backend::PngConcat) == backends.end())
    backends.insert(backends.begin(), complexity::Backend::PngConcat);
  p.complexity = complexity::measure(ds, backends);
  p.complexity.dataset = d.name + "@" + std::to_string(resolution);
  p.ratio = p.complexity.at(complexity::Backend::PngConcat).ratio;
  const std::uint64_t seed = cell_seed(cfg, d.name, resolution);
  p.real = split_dataset(ds, mix_seed(seed, 1));
  if (cfg.real_vs_real) {
    p.fake = split_dataset(load_dataset(cfg, d, resolution, 1), mix_seed(seed, 1));
    for (auto* s : {&p.fake.train, &p.fake.val, &p.fake.test}) {
      s->provenance = datasets::Provenance::Generated;
      s->name += "-fresh";
    }
    if (cfg.generator.train_cap && cfg.generator.train_cap < p.fake.train.size())
      p.fake.train = datasets::subsample(p.fake.train, cfg.generator.train_cap, mix_seed(seed, 2));
  } else {
    const auto gt = paths.generated(d.name, resolution, "train"), gv = paths.generated(d.name, resolution, "val"),
               ge = paths.generated(d.name, resolution, "test");
    if (std::filesystem::exists(gt) && std::filesystem::exists(gv) && std::filesystem::exists(ge)) {
      p.fake = {datasets::ingest(gt, datasets::Format::RawDlab), datasets::ingest(gv, datasets::Format::RawDlab),
                datasets::ingest(ge, datasets::Format::RawDlab)};
      if (log) log(d.name + "@" + std::to_string(resolution) + ": reusing generated splits");
    } else {
      const auto gen = ensure_generator(cfg, d.name, resolution, p.real.train, paths, log);
      if (log) log(d.name + "@" + std::to_string(resolution) + ": sampling");
      const std::size_t cap = cfg.generator.train_cap ? cfg.generator.train_cap : p.real.train.size();
      auto em = diffusion::emit_generated(p.real.train, p.real.val, p.real.test, gen.sampler(), gen.schedule, cap,
                                         mix_seed(seed, 4), 32, threads);
      p.fake = {std::move(em.train), std::move(em.val), std::move(em.test)};
      std::filesystem::create_directories(gt.parent_path());
      save_raw_atomic(gt, p.fake.train);
      save_raw_atomic(gv, p.fake.val);
      save_raw_atomic(ge, p.fake.test);
    }
  }
  p.frechet = metrics::image_frechet(p.real.test, p.fake.test, threads);
  return p;
}

inline ExperimentRecord run_cell(const ExperimentConfig& cfg, const PreparedPair& p, detectors::Family family,
                                 std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  detectors::DetectorTrainConfig dc;
  dc.iterations = cfg.detector.iterations;
  dc.batch = cfg.detector.batch;
  dc.lr = cfg.detector.lr;
  dc.weight_decay = cfg.detector.weight_decay;
  dc.seed = mix_seed(cell_seed(cfg, p.dataset, p.resolution), 0x1000 + seed);
  const auto det = detectors::train_detector({family, p.channels, p.resolution},
                                             {&p.real.train, &p.real.val, &p.fake.train, &p.fake.val}, dc);
  const auto ev = detectors::evaluate(det, p.real.test, p.fake.test);
  ExperimentRecord r;
  r.dataset = p.dataset;
  r.channels = p.channels;
  r.complexity = p.ratio;
  r.resolution = p.resolution;
  r.family = detectors::to_string(family);
  r.seed = seed;
  r.test_accuracy = ev.accuracy;
  r.best_val_loss = det.best_val_loss;
  r.frechet = p.frechet;
  r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

struct CellFailure {
  ExperimentRecord::Key key;
  std::string stage;
  std::string message;
};

struct SweepResult {
  std::vector<ExperimentRecord> records;  // canonical order, including resumed ones
  std::vector<CellFailure> failures;
  std::size_t ran = 0;
  std::size_t skipped = 0;
};

// Resumable sweep over datasets x resolutions x families x seeds. Finished
// cells are appended to records.csv as they complete; at the end the file is
// rewritten in canonical order and summary/table/SVG are regenerated.
inline SweepResult run_sweep(const ExperimentConfig& cfg, const LogFn& log = {}, std::size_t threads = 0) {
  cfg.validate();
  if (threads == 0) threads = configured_threads();
  const SweepPaths paths{cfg.output};
  std::filesystem::create_directories(paths.root);
  save_config((paths.root / "config.ini").string(), cfg);

  SweepResult result;
  std::map<ExperimentRecord::Key, ExperimentRecord> done;
  if (std::filesystem::exists(paths.records()))
    for (auto& r : load_records(paths.records().string(), true)) done[r.key()] = r;
  {
    std::vector<ExperimentRecord> existing;
    for (const auto& [k, r] : done) existing.push_back(r);
    write_atomic(paths.records().string(), format_records(existing));
  }

  std::mutex writer;
  auto append = [&](const ExperimentRecord& r) {
    std::lock_guard lock(writer);
    std::ofstream out(paths.records(), std::ios::binary | std::ios::app);
    out << csv::format_row(to_row(r));
    out.flush();
    const bool fresh = !std::filesystem::exists(paths.timings());
    std::ofstream t(paths.timings(), std::ios::binary | std::ios::app);
    if (fresh) t << csv::format_row({"dataset", "resolution", "family", "seed", "seconds"});
    t << csv::format_row({r.dataset, std::to_string(r.resolution), r.family, std::to_string(r.seed),
                          csv::number(r.wall_time, 3)});
    done[r.key()] = r;
  };
  auto fail = [&](const ExperimentRecord::Key& key, const std::string& stage, const std::string& msg) {
    std::lock_guard lock(writer);
    result.failures.push_back({key, stage, msg});
    if (log) log("FAILED " + std::get<0>(key) + "@" + std::to_string(std::get<1>(key)) + " " + std::get<2>(key) +
                 " seed " + std::to_string(std::get<3>(key)) + " [" + stage + "]: " + msg);
  };

  std::vector<complexity::ComplexityReport> complexity_reports;
  for (const auto& d : cfg.datasets) {
    for (auto res : cfg.resolutions) {
      std::vector<std::pair<detectors::Family, std::uint64_t>> pending;
      for (auto f : cfg.families)
        for (auto s : cfg.seeds) {
          if (done.count({d.name, res, detectors::to_string(f), s}))
            ++result.skipped;
          else
            pending.emplace_back(f, s);
        }
      if (pending.empty()) {
        try {
          auto rep = complexity::measure(load_dataset(cfg, d, res), cfg.backends);
          rep.dataset = d.name + "@" + std::to_string(res);
          complexity_reports.push_back(rep);
        } catch (const std::exception&) {
        }
        continue;
      }
      PreparedPair pair;
      try {
        pair = prepare_pair(cfg, d, res, paths, threads, log);
        complexity_reports.push_back(pair.complexity);
      } catch (const std::exception& e) {
        for (const auto& [f, s] : pending) fail({d.name, res, detectors::to_string(f), s}, "prepare", e.what());
        continue;
      }
      if (log)
        log(d.name + "@" + std::to_string(res) + ": complexity " + csv::number(pair.ratio, 4) + ", frechet " +
            csv::number(pair.frechet, 3) + ", " + std::to_string(pending.size()) + " detector runs");
      parallel_for(pending.size(), threads, [&](std::size_t, std::size_t j) {
        const auto [f, s] = pending[j];
        const ExperimentRecord::Key key{d.name, res, detectors::to_string(f), s};
        try {
          const auto r = run_cell(cfg, pair, f, s);
          append(r);
          if (log)
            log(d.name + "@" + std::to_string(res) + " " + r.family + " seed " + std::to_string(s) + ": accuracy " +
                csv::number(r.test_accuracy, 4) + " (" + csv::number(r.wall_time, 1) + " s)");
        } catch (const std::exception& e) {
          fail(key, "detector", e.what());
        }
      });
      result.ran += pending.size();
    }
  }

  for (const auto& [k, r] : done) result.records.push_back(r);
  sort_records(result.records);
  write_atomic(paths.records().string(), format_records(result.records));
  std::sort(result.failures.begin(), result.failures.end(), [](const auto& a, const auto& b) { return a.key < b.key; });
  std::string ftext = csv::format_row({"dataset", "resolution", "family", "seed", "stage", "message"});
  for (const auto& f : result.failures)
    ftext += csv::format_row({std::get<0>(f.key), std::to_string(std::get<1>(f.key)), std::get<2>(f.key),
                              std::to_string(std::get<3>(f.key)), f.stage, f.message});
  write_atomic(paths.failures().string(), ftext);
  if (!complexity_reports.empty()) {
    std::string ctext;
    for (const auto& row : complexity::report_rows(complexity_reports)) ctext += csv::format_row(row);
    write_atomic(paths.complexity().string(), ctext);
  }
  if (!result.records.empty()) report(paths.records().string(), paths.root.string());
  return result;
}

struct ResolutionSweepResult {
  SweepResult sweep;
  std::vector<ResolutionTrend> trends;
};

inline ResolutionSweepResult run_resolution_sweep(const ExperimentConfig& cfg, const LogFn& log = {},
                                                  std::size_t threads = 0) {
  if (std::set<std::size_t>(cfg.resolutions.begin(), cfg.resolutions.end()).size() < 2)
    throw RangeError("resolution sweep needs >= 2 resolutions");
  ResolutionSweepResult out;
  out.sweep = run_sweep(cfg, log, threads);
  out.trends = resolution_trends(out.sweep.records);
  const SweepPaths paths{cfg.output};
  write_atomic((paths.root / "resolution.csv").string(), format_trends(out.trends));
  write_atomic((paths.root / "monotonicity.csv").string(), format_monotonicity(out.trends));
  return out;
}

}  // namespace detectlab::lab
