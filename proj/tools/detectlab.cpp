#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "detectlab/bayes/bayes.hpp"
#include "detectlab/complexity/complexity.hpp"
#include "detectlab/datasets/io.hpp"
#include "detectlab/datasets/transforms.hpp"
#include "detectlab/detectors/harness.hpp"
#include "detectlab/diffusion/ddpm.hpp"
#include "detectlab/lab/config.hpp"
#include "detectlab/lab/inputs.hpp"
#include "detectlab/lab/records.hpp"
#include "detectlab/lab/sweep.hpp"
#include "detectlab/png_codec.hpp"

using namespace detectlab;

namespace {

void log_line(const std::string& msg) {
  using clock = std::chrono::system_clock;
  const auto t = clock::to_time_t(clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%H:%M:%S", std::localtime(&t));
  std::cerr << "[" << buf << "] " << msg << std::endl;
}

void emit_csv(const std::vector<csv::Row>& rows, const std::string& out) {
  if (out.empty() || out == "-") {
    for (const auto& r : rows) std::cout << csv::format_row(r);
  } else {
    csv::write_file(out, rows);
  }
}

// "0.6,0.4", or a file holding the numbers separated by commas or newlines.
std::vector<double> read_numbers(const std::string& arg) {
  std::string text = arg;
  if (std::filesystem::exists(arg)) text = lab::read_text(arg);
  std::vector<double> out;
  for (const auto& row : csv::parse(text))
    for (const auto& f : row) {
      if (f.empty()) continue;
      out.push_back(csv::to_double(f, "probability"));
    }
  return out;
}

std::optional<datasets::Format> format_opt(const std::string& s) {
  if (s.empty() || s == "auto") return std::nullopt;
  return datasets::parse_format(s);
}

int cmd_complexity(const std::vector<std::string>& inputs, const std::string& format, const std::string& backends,
                   const std::string& out) {
  std::vector<complexity::Backend> bs;
  for (const auto& b : lab::detail::split_list(backends)) bs.push_back(complexity::parse_backend(b));
  if (bs.empty()) throw RangeError("--backends is empty");
  std::vector<complexity::ComplexityReport> reps;
  for (const auto& in : inputs) {
    const auto ds = lab::resolve_input(in, format_opt(format));
    for (auto b : bs)
      if (!complexity::backend_available(b)) log_line(std::string("skipping backend ") + complexity::to_string(b) + " (not built)");
    reps.push_back(complexity::measure(ds, bs));
  }
  emit_csv(complexity::report_rows(reps), out);
  if (reps.size() >= 3) {
    try {
      const auto rc = complexity::rank_consistency(reps);
      std::cerr << "spearman rank consistency (min off-diagonal): " << csv::number(rc.min_off_diagonal(), 4) << "\n";
    } catch (const Error& e) {
      std::cerr << "rank consistency unavailable: " << e.what() << "\n";
    }
  }
  return 0;
}

int cmd_bayes(const std::string& p_arg, const std::string& q_arg, double prior) {
  const bayes::DetectionProblem pr{bayes::DiscreteDistribution(read_numbers(p_arg)),
                                   bayes::DiscreteDistribution(read_numbers(q_arg)), prior};
  std::cout << "bayes_accuracy," << csv::number(bayes::bayes_accuracy(pr), 12) << "\n";
  std::cout << "total_variation," << csv::number(bayes::total_variation(pr.p, pr.q), 12) << "\n";
  std::cout << "outcome,p,q,posterior_real,posterior_fake,decision\n";
  for (std::size_t x = 0; x < pr.p.mass.size(); ++x) {
    const double m = pr.prior_real * pr.p[x] + pr.prior_fake() * pr.q[x];
    std::cout << x << "," << csv::number(pr.p[x]) << "," << csv::number(pr.q[x]) << ",";
    if (m == 0.0) {
      std::cout << ",,none\n";
      continue;
    }
    const double post = bayes::posterior_real(pr, x);
    std::cout << csv::number(post, 12) << "," << csv::number(1.0 - post, 12) << ","
              << (pr.prior_real * pr.p[x] >= pr.prior_fake() * pr.q[x] ? "real" : "fake") << "\n";
  }
  return 0;
}

int cmd_train_generator(const std::string& config_path, const std::string& dataset, std::size_t resolution,
                        const std::string& out, std::uint64_t seed) {
  const auto cfg = lab::load_config(config_path);
  const lab::DatasetEntry* entry = &cfg.datasets.front();
  if (!dataset.empty()) {
    auto it = std::find_if(cfg.datasets.begin(), cfg.datasets.end(), [&](const auto& d) { return d.name == dataset; });
    if (it == cfg.datasets.end()) throw RangeError("no [dataset." + dataset + "] in " + config_path);
    entry = &*it;
  }
  if (resolution == 0) resolution = cfg.resolutions.front();
  const auto ds = lab::load_dataset(cfg, *entry, resolution);
  const auto split = lab::split_dataset(ds, mix_seed(lab::cell_seed(cfg, entry->name, resolution), 1));
  const auto gcfg = lab::generator_config(cfg, seed);
  log_line("training generator on " + entry->name + "@" + std::to_string(resolution) + " (" +
           std::to_string(split.train.size()) + " images, " + std::to_string(gcfg.steps) + " steps)");
  const std::size_t every = std::max<std::size_t>(1, gcfg.steps / 20);
  const auto gen = diffusion::train_generator(split.train, gcfg, [&](std::size_t step, double loss) {
    if ((step + 1) % every == 0 || step == 0) log_line("step " + std::to_string(step + 1) + " loss " + csv::number(loss, 5));
  });
  diffusion::save_generator(out, gen);
  log_line("wrote " + out);
  return 0;
}

int cmd_sample(const std::string& ckpt, std::size_t n, const std::string& out, std::uint64_t seed, int label,
               const std::string& png_dir) {
  if (n == 0) throw RangeError("--n must be >= 1");
  const auto gen = diffusion::load_generator(ckpt);
  std::vector<std::uint32_t> labels(n);
  for (std::size_t i = 0; i < n; ++i)
    labels[i] = label >= 0 ? static_cast<std::uint32_t>(label) : static_cast<std::uint32_t>(i % gen.spec.num_classes);
  for (auto l : labels)
    if (l >= gen.spec.num_classes) throw RangeError("--label " + std::to_string(l) + " >= num_classes " +
                                                    std::to_string(gen.spec.num_classes));
  auto ds = diffusion::generate_images(gen.sampler(), gen.schedule, labels, seed, 32, configured_threads());
  ds.name = std::filesystem::path(out).stem().string();
  datasets::export_raw_dlab(ds, out);
  if (!png_dir.empty()) {
    std::filesystem::create_directories(png_dir);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      png::Image img{ds.width, ds.height, ds.channels, {}};
      img.pixels.resize(ds.image_size());
      const auto src = ds.image(i);
      for (std::size_t y = 0; y < ds.height; ++y)
        for (std::size_t x = 0; x < ds.width; ++x)
          for (std::size_t c = 0; c < ds.channels; ++c)
            img.pixels[(y * ds.width + x) * ds.channels + c] = src[(c * ds.height + y) * ds.width + x];
      char name[32];
      std::snprintf(name, sizeof name, "%06zu.png", i);
      const auto bytes = png::encode(img);
      std::ofstream(std::filesystem::path(png_dir) / name, std::ios::binary)
          .write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    }
  }
  log_line("wrote " + std::to_string(n) + " samples to " + out);
  return 0;
}

int cmd_train_discriminator(const std::string& family, const std::string& real_arg, const std::string& fake_arg,
                            const std::string& format, std::uint64_t seed, std::size_t iterations, std::size_t batch,
                            const std::string& metrics_out, const std::string& ckpt_out) {
  const auto fam = detectors::parse_family(family);
  const auto real = lab::resolve_input(real_arg, format_opt(format));
  const auto fake = lab::resolve_input(fake_arg, format_opt(format));
  if (real.channels != fake.channels || real.height != fake.height || real.width != fake.width)
    throw ShapeError("real and fake datasets differ in geometry");
  const auto rs = lab::split_dataset(real, mix_seed(seed, 0x5eed));
  const auto fs = lab::split_dataset(fake, mix_seed(seed, 0xf5eed));
  detectors::DetectorTrainConfig cfg;
  cfg.iterations = iterations;
  cfg.batch = batch;
  cfg.seed = seed;
  log_line("training " + family + " on " + std::to_string(rs.train.size()) + " real / " +
           std::to_string(fs.train.size()) + " fake images");
  const auto det = detectors::train_detector({fam, real.channels, real.height}, {&rs.train, &rs.val, &fs.train, &fs.val}, cfg);
  const auto ev = detectors::evaluate(det, rs.test, fs.test);
  log_line("best epoch " + std::to_string(det.best_epoch) + ", val loss " + csv::number(det.best_val_loss, 5) +
           ", test accuracy " + csv::number(ev.accuracy, 4));
  emit_csv({detectors::kMetricsHeader, detectors::metrics_row(det, real.name, seed, ev)}, metrics_out);
  if (!ckpt_out.empty()) microtensor::save_checkpoint(ckpt_out, detectors::detector_checkpoint(det));
  return 0;
}

int cmd_sweep(const std::string& config_path, bool resolution) {
  const auto cfg = lab::load_config(config_path);
  if (resolution) {
    const auto r = lab::run_resolution_sweep(cfg, log_line);
    for (const auto& t : r.trends)
      std::cout << t.dataset << " " << t.family << ": accuracy " << csv::number(t.mean_accuracy.front(), 4) << " @"
                << t.resolutions.front() << " -> " << csv::number(t.mean_accuracy.back(), 4) << " @"
                << t.resolutions.back() << (t.accuracy_monotone ? " (monotone)" : " (not monotone)") << "\n";
    return r.sweep.failures.empty() ? 0 : 3;
  }
  const auto r = lab::run_sweep(cfg, log_line);
  std::cout << r.ran << " cells run, " << r.skipped << " resumed, " << r.failures.size() << " failed; "
            << r.records.size() << " records in " << (std::filesystem::path(cfg.output) / "records.csv").string()
            << "\n";
  return r.failures.empty() ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"detectlab: detectability of generated images versus dataset complexity"};
  app.require_subcommand(1);

  auto* cx = app.add_subcommand("complexity", "compression-ratio complexity of datasets");
  std::vector<std::string> cx_inputs;
  std::string cx_format = "auto", cx_backends = "png,deflate,bzip2-like,zstd-like", cx_out;
  cx->add_option("--input,-i", cx_inputs, "dataset path or procedural spec family[:res[:count[:seed]]]")->required();
  cx->add_option("--format", cx_format, "auto, png-dir, idx or raw-dlab");
  cx->add_option("--backends", cx_backends, "comma-separated backends");
  cx->add_option("--out,-o", cx_out, "CSV output (default stdout)");

  auto* by = app.add_subcommand("bayes", "Bayes-optimal detection accuracy for two discrete distributions");
  std::string p_arg, q_arg;
  double prior = 0.5;
  by->add_option("--p", p_arg, "real distribution, comma-separated or a file")->required();
  by->add_option("--q", q_arg, "generated distribution, comma-separated or a file")->required();
  by->add_option("--prior", prior, "prior probability of real");

  auto* tg = app.add_subcommand("train-generator", "train a DDPM generator from a config file");
  std::string tg_config, tg_dataset, tg_out = "generator.ckpt";
  std::size_t tg_res = 0;
  std::uint64_t tg_seed = 0;
  tg->add_option("--config,-c", tg_config, "experiment config (INI)")->required()->check(CLI::ExistingFile);
  tg->add_option("--dataset", tg_dataset, "dataset section name (default: first)");
  tg->add_option("--resolution", tg_res, "resolution (default: first listed)");
  tg->add_option("--seed", tg_seed, "training seed");
  tg->add_option("--out,-o", tg_out, "checkpoint output");

  auto* sm = app.add_subcommand("sample", "sample images from a generator checkpoint");
  std::string sm_ckpt, sm_out = "samples.dlab", sm_png;
  std::size_t sm_n = 16;
  std::uint64_t sm_seed = 0;
  int sm_label = -1;
  sm->add_option("--ckpt", sm_ckpt, "generator checkpoint")->required()->check(CLI::ExistingFile);
  sm->add_option("--n", sm_n, "number of images");
  sm->add_option("--out,-o", sm_out, "raw-dlab output");
  sm->add_option("--seed", sm_seed, "sampling seed");
  sm->add_option("--label", sm_label, "class label for every image (default: round-robin)");
  sm->add_option("--png-dir", sm_png, "also write one PNG per image here");

  auto* td = app.add_subcommand("train-discriminator", "train and evaluate a real-vs-generated detector");
  std::string td_family = "pixel-base", td_real, td_fake, td_format = "auto", td_metrics, td_ckpt;
  std::uint64_t td_seed = 0;
  std::size_t td_iters = 3000, td_batch = 64;
  td->add_option("--family", td_family, "pixel-base, pixel-big, fourier-base, fourier-big, probe-frozen, probe-finetuned");
  td->add_option("--real", td_real, "real dataset (path or procedural spec)")->required();
  td->add_option("--fake", td_fake, "generated dataset (path or procedural spec)")->required();
  td->add_option("--format", td_format, "auto, png-dir, idx or raw-dlab");
  td->add_option("--seed", td_seed, "seed");
  td->add_option("--iterations", td_iters, "training iterations");
  td->add_option("--batch", td_batch, "batch size");
  td->add_option("--metrics", td_metrics, "metrics CSV output (default stdout)");
  td->add_option("--out,-o", td_ckpt, "detector checkpoint output");

  auto* sw = app.add_subcommand("sweep", "run a resumable experiment sweep");
  std::string sw_config;
  sw->add_option("--config,-c", sw_config, "experiment config (INI)")->required()->check(CLI::ExistingFile);

  auto* rs = app.add_subcommand("resolution-sweep", "sweep resolutions and report accuracy trends");
  std::string rs_config;
  rs->add_option("--config,-c", rs_config, "experiment config (INI)")->required()->check(CLI::ExistingFile);

  auto* rp = app.add_subcommand("report", "summary CSV, table and SVG scatter from a records CSV");
  std::string rp_records, rp_out = ".";
  rp->add_option("--records,-r", rp_records, "records CSV")->required()->check(CLI::ExistingFile);
  rp->add_option("--out,-o", rp_out, "output directory");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*cx) return cmd_complexity(cx_inputs, cx_format, cx_backends, cx_out);
    if (*by) return cmd_bayes(p_arg, q_arg, prior);
    if (*tg) return cmd_train_generator(tg_config, tg_dataset, tg_res, tg_out, tg_seed);
    if (*sm) return cmd_sample(sm_ckpt, sm_n, sm_out, sm_seed, sm_label, sm_png);
    if (*td)
      return cmd_train_discriminator(td_family, td_real, td_fake, td_format, td_seed, td_iters, td_batch, td_metrics,
                                     td_ckpt);
    if (*sw) return cmd_sweep(sw_config, false);
    if (*rs) return cmd_sweep(rs_config, true);
    if (*rp) {
      const auto p = lab::report(rp_records, rp_out);
      std::cout << p.summary << "\n" << p.table << "\n" << p.svg << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "detectlab: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
