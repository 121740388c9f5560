// Acceptance runner: one PASS/FAIL line per criterion.
//   acceptance [--criterion N]... [--work DIR]

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "detectlab/bayes/bayes.hpp"
#include "detectlab/complexity/complexity.hpp"
#include "detectlab/datasets/procedural.hpp"
#include "detectlab/datasets/transforms.hpp"
#include "detectlab/detectors/zoo.hpp"
#include "detectlab/diffusion/ddpm.hpp"
#include "detectlab/lab/sweep.hpp"
#include "detectlab/metrics/features.hpp"
#include "detectlab/metrics/frechet.hpp"
#include "detectlab/random.hpp"
#include "support/fixtures.hpp"
#include "support/layer_cases.hpp"

using namespace detectlab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Context {
  fs::path work;
};

std::string fmt(double v, int d = 4) { return csv::number(v, d); }

void log(const std::string& msg) { std::cerr << "  " << msg << std::endl; }

bayes::DiscreteDistribution random_dist(std::size_t k, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> w(k);
  for (auto& v : w) v = u(rng) < 0.2 ? 0.0 : u(rng);
  if (std::all_of(w.begin(), w.end(), [](double v) { return v == 0.0; })) w[0] = 1.0;
  return bayes::DiscreteDistribution::from_weights(w);
}

// Desk-scale ladder sweep shared by criteria 8, 9 and 12.
lab::ExperimentConfig ladder_config(const Context& ctx) {
  lab::ExperimentConfig c;
  c.name = "ladder";
  c.output = (ctx.work / "ladder").string();
  c.seeds = {0, 1, 2, 3, 4};
  c.resolutions = {32};
  c.families = {detectors::Family::PixelBase, detectors::Family::PixelBig};
  c.generator.timesteps = 100;
  c.generator.steps = 1500;
  c.generator.base_channels = 8;
  c.generator.train_cap = 500;
  c.detector.iterations = 1000;
  for (auto f : datasets::kAllFamilies) {
    lab::DatasetEntry d;
    d.name = datasets::to_string(f);
    d.family = f;
    d.count = 2000;
    c.datasets.push_back(d);
  }
  return c;
}

const lab::DatasetEntry& entry(const lab::ExperimentConfig& c, const std::string& name) {
  for (const auto& d : c.datasets)
    if (d.name == name) return d;
  throw RangeError("no dataset " + name);
}

Outcome c1(Context&) {
  Rng rng = make_rng(2024);
  std::uniform_int_distribution<std::size_t> ks(1, 12);
  std::uniform_real_distribution<double> prior(0.01, 0.99);
  double worst = 0.0;
  bool equal_exact = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = ks(rng);
    const bayes::DetectionProblem pr{random_dist(k, rng), random_dist(k, rng), prior(rng)};
    worst = std::max(worst, std::abs(bayes::bayes_accuracy(pr) - bayes::brute_force_accuracy(pr)));
    const bayes::DetectionProblem same{pr.p, pr.p, pr.prior_real};
    equal_exact = equal_exact && bayes::bayes_accuracy(same) == std::max(pr.prior_real, pr.prior_fake());
  }
  return {worst <= 1e-12 && equal_exact,
          "max |closed form - brute force| = " + csv::number(worst) + ", q=p exact: " + (equal_exact ? "yes" : "no")};
}

Outcome c2(Context& ctx) {
  lab::ExperimentConfig c;
  c.name = "real-vs-real";
  c.output = (ctx.work / "real_vs_real").string();
  c.real_vs_real = true;
  c.seeds = {0, 1, 2, 3, 4};
  c.families = {detectors::Family::PixelBase};
  lab::DatasetEntry d;
  d.name = "shapes";
  d.family = datasets::Family::Shapes;
  c.datasets = {d};
  const auto r = lab::run_sweep(c, log);
  if (r.records.size() != 5) return {false, std::to_string(r.records.size()) + " of 5 runs finished"};
  double mean = 0.0;
  std::string each;
  for (const auto& rec : r.records) {
    mean += rec.test_accuracy / 5.0;
    each += (each.empty() ? "" : " ") + fmt(rec.test_accuracy, 3);
  }
  return {mean >= 0.45 && mean <= 0.55, "mean accuracy " + fmt(mean) + " over seeds [" + each + "], target [0.45, 0.55]"};
}

Outcome c3(Context&) {
  Rng rng = make_rng(3);
  std::uniform_int_distribution<std::size_t> ks(1, 16);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = ks(rng);
    const auto p = random_dist(k, rng), q = random_dist(k, rng);
    worst = std::max(worst, std::abs(bayes::bayes_accuracy({p, q, 0.5}) - (0.5 + 0.5 * bayes::total_variation(p, q))));
  }
  return {worst <= 1e-12, "max |Acc* - (1/2 + TV/2)| = " + csv::number(worst)};
}

Outcome c4(Context&) {
  double worst = 0.0;
  std::string where = "-";
  std::size_t checks = 0;
  for (const auto& lc : testing::layer_cases()) {
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
      const auto r = testing::run_trial(lc, seed, 1e-6);
      ++checks;
      if (r.max_rel_err > worst) {
        worst = r.max_rel_err;
        where = lc.name + " seed " + std::to_string(seed) + " " + r.worst;
      }
    }
  }
  return {worst < 1e-6, std::to_string(checks) + " layer trials, max rel err " + csv::number(worst) + " (" + where + ")"};
}

Outcome c5(Context&) {
  bool ok = true;
  std::string detail;
  for (auto f : {detectors::Family::PixelBase, detectors::Family::FourierBase, detectors::Family::PixelBig,
                 detectors::Family::FourierBig})
    for (std::size_t ch : {1, 3}) {
      const auto n = detectors::detector_graph({f, ch, 32}).count_params();
      const bool big = f == detectors::Family::PixelBig || f == detectors::Family::FourierBig;
      const bool in = big ? (n >= 470'000 && n <= 570'000) : (n >= 35'000 && n <= 45'000);
      ok = ok && in;
      detail += (detail.empty() ? "" : ", ") + detectors::to_string(f) + "/C" + std::to_string(ch) + "=" +
                std::to_string(n);
    }
  return {ok, detail};
}

const std::vector<complexity::Backend> kLadderBackends = {complexity::Backend::PngConcat, complexity::Backend::Deflate,
                                                         complexity::Backend::Bzip2, complexity::Backend::Zstd};

Outcome c6(Context&) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<complexity::ComplexityReport> reps;
  for (auto f : datasets::kAllFamilies)
    reps.push_back(complexity::measure(
        datasets::generate_procedural(datasets::ProceduralSpec::of(f, 32, 2000, 17)), kLadderBackends));
  std::vector<double> r;
  for (const auto& rep : reps) r.push_back(rep.at(complexity::Backend::PngConcat).ratio);
  double min_gap = 1.0;
  for (std::size_t i = 0; i + 1 < r.size(); ++i) min_gap = std::min(min_gap, r[i + 1] - r[i]);
  const double rho = complexity::rank_consistency(reps).min_off_diagonal();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::string ratios;
  for (double v : r) ratios += (ratios.empty() ? "" : " < ") + fmt(v);
  const bool all_backends = reps.front().results.size() == kLadderBackends.size();
  return {min_gap >= 0.05 && r.front() < 0.02 && r.back() > 0.95 && rho >= 0.8 && secs < 120.0 && all_backends,
          "png-concat " + ratios + ", min gap " + fmt(min_gap) + ", min Spearman " + fmt(rho) + " over " +
              std::to_string(reps.front().results.size()) + " backends, " + fmt(secs, 1) + " s"};
}

Outcome c7(Context&) {
  double worst = 0.0;
  std::string where;
  for (auto f : datasets::kAllFamilies) {
    const auto ds = datasets::generate_procedural(datasets::ProceduralSpec::of(f, 32, 2000, 4));
    const auto half = datasets::subsample(ds, 1000, 12);
    for (auto b : kLadderBackends) {
      if (!complexity::backend_available(b)) return {false, std::string("backend ") + complexity::to_string(b) + " missing"};
      const double d = std::abs(complexity::complexity(ds, b) - complexity::complexity(half, b));
      if (d >= worst) {
        worst = d;
        where = std::string(datasets::to_string(f)) + "/" + complexity::to_string(b);
      }
    }
  }
  return {worst < 0.03, "max ratio change " + fmt(worst) + " (" + where + ")"};
}

Outcome c8(Context& ctx) {
  const auto r = lab::run_sweep(ladder_config(ctx), log);
  std::map<std::string, std::vector<double>> acc;
  for (const auto& rec : r.records) acc[rec.dataset].push_back(rec.test_accuracy);
  auto mean = [&](const std::string& ds) {
    const auto& v = acc[ds];
    if (v.size() != 10) throw StateError(ds + ": " + std::to_string(v.size()) + " of 10 runs finished");
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  const double lo = mean("constant"), hi = mean("noise");
  std::string detail = "constant " + fmt(lo);
  bool pass = false;
  for (const char* mid : {"stripes", "shapes", "texture"}) {
    const double m = mean(mid);
    detail += ", " + std::string(mid) + " " + fmt(m);
    pass = pass || (m >= lo + 0.05 && m >= hi + 0.05);
  }
  detail += ", noise " + fmt(hi) + " (mean accuracy over pixel-base and pixel-big x 5 seeds)";
  return {pass, detail};
}

Outcome c9(Context& ctx) {
  auto cfg = ladder_config(ctx);
  cfg.datasets = {entry(cfg, "stripes")};
  cfg.resolutions = {8, 16, 32};
  cfg.families = {detectors::Family::PixelBig};
  const auto r = lab::run_resolution_sweep(cfg, log);
  const lab::ResolutionTrend* t = nullptr;
  for (const auto& tr : r.trends)
    if (tr.dataset == "stripes" && tr.family == "pixel-big") t = &tr;
  if (!t || t->resolutions != std::vector<std::size_t>{8, 16, 32}) return {false, "missing stripes pixel-big trend"};
  std::string detail = "pixel-big accuracy " + fmt(t->mean_accuracy[0]) + " @8, " + fmt(t->mean_accuracy[1]) +
                       " @16, " + fmt(t->mean_accuracy[2]) + " @32; Frechet by generator seed:";
  // Generator seeds 1 and 2 use fresh global seeds; seed 0 is the sweep above.
  std::size_t nondecreasing = 0;
  for (std::uint64_t g = 0; g < 3; ++g) {
    std::vector<double> fd;
    if (g == 0) {
      fd = t->frechet;
    } else {
      auto alt = cfg;
      alt.global_seed = g;
      alt.output = (ctx.work / ("resolution_seed" + std::to_string(g))).string();
      alt.generator.train_cap = 1;  // only the test split enters the Frechet distance
      const lab::SweepPaths paths{alt.output};
      for (auto res : alt.resolutions)
        fd.push_back(lab::prepare_pair(alt, alt.datasets[0], res, paths, configured_threads(), log).frechet);
    }
    const bool up = fd[1] >= fd[0] && fd[2] >= fd[1];
    nondecreasing += up;
    detail += " [" + fmt(fd[0], 2) + ", " + fmt(fd[1], 2) + ", " + fmt(fd[2], 2) + "]" + (up ? "" : "*");
  }
  const bool acc_ok = t->mean_accuracy[2] >= t->mean_accuracy[0];
  detail += "; non-decreasing on " + std::to_string(nondecreasing) + " of 3";
  return {acc_ok && nondecreasing >= 2, detail};
}

Outcome c10(Context&) {
  using metrics::GaussianFit;
  auto fit1 = [](double mu, double var) {
    GaussianFit f;
    f.mean = Eigen::VectorXd::Constant(1, mu);
    f.cov = Eigen::MatrixXd::Constant(1, 1, var);
    f.count = 10;
    return f;
  };
  double closed = 0.0;
  closed = std::max(closed, std::abs(metrics::frechet_distance(fit1(0, 1), fit1(1, 1)) - 1.0));
  closed = std::max(closed, std::abs(metrics::frechet_distance(fit1(2, 1), fit1(2, 9)) - 4.0));
  closed = std::max(closed, std::abs(metrics::frechet_distance(fit1(-1, 4), fit1(2, 1)) - (9.0 + 1.0)));
  Rng rng = make_rng(10);
  std::normal_distribution<double> g;
  auto psd = [&](int d) {
    Eigen::MatrixXd a(d, d);
    for (int i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
    return Eigen::MatrixXd(a * a.transpose() / d);
  };
  auto fit = [&](int d) {
    GaussianFit f;
    f.mean = Eigen::VectorXd(d);
    for (int i = 0; i < d; ++i) f.mean[i] = g(rng);
    f.cov = psd(d);
    f.count = 1000;
    return f;
  };
  double self = 0.0, asym = 0.0, sqrt_err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = fit(64), b = fit(64);
    self = std::max(self, std::abs(metrics::frechet_distance(a, a)));
    asym = std::max(asym, std::abs(metrics::frechet_distance(a, b) - metrics::frechet_distance(b, a)));
    const auto r = metrics::sqrt_psd(a.cov);
    sqrt_err = std::max(sqrt_err, (r * r - a.cov).norm() / a.cov.norm());
  }
  return {closed <= 1e-9 && self <= 1e-9 && asym <= 1e-9 && sqrt_err < 1e-8,
          "1-D error " + csv::number(closed) + ", max self-distance " + csv::number(self) + ", max asymmetry " +
              csv::number(asym) + ", sqrt rel err " + csv::number(sqrt_err)};
}

Outcome c11(Context& ctx) {
  auto cfg = [&](const std::string& dir) {
    lab::ExperimentConfig c;
    c.name = "determinism";
    c.output = (ctx.work / dir).string();
    c.seeds = {0, 1};
    c.resolutions = {8};
    c.families = {detectors::Family::PixelBase, detectors::Family::FourierBase};
    c.generator.timesteps = 20;
    c.generator.steps = 100;
    c.generator.base_channels = 8;
    c.detector.iterations = 100;
    for (auto f : {datasets::Family::Stripes, datasets::Family::Texture}) {
      lab::DatasetEntry d;
      d.name = datasets::to_string(f);
      d.family = f;
      d.count = 256;
      c.datasets.push_back(d);
    }
    return c;
  };
  for (const char* dir : {"determinism_a", "determinism_b"}) fs::remove_all(ctx.work / dir);
  const auto a = lab::run_sweep(cfg("determinism_a"), {}, 1);
  const auto b = lab::run_sweep(cfg("determinism_b"), {}, 4);
  const auto ta = lab::read_text((ctx.work / "determinism_a" / "records.csv").string());
  const auto tb = lab::read_text((ctx.work / "determinism_b" / "records.csv").string());
  const bool same = ta == tb && a.failures.empty() && b.failures.empty() && a.records.size() == 8;
  return {same, std::to_string(a.records.size()) + " records; clean runs (1 and 4 workers) " +
                    (ta == tb ? "byte-identical" : "DIFFER")};
}

Outcome c12(Context& ctx) {
  // Part 1: conditional DDPM on the two-point dataset.
  const auto ds = testing::two_point(8, 256);
  diffusion::GeneratorConfig gc;
  gc.denoiser.base_channels = 8;
  gc.denoiser.time_dim = 16;
  gc.timesteps = 50;
  gc.steps = 1500;
  gc.seed = 8;
  const auto two = diffusion::train_generator(ds, gc);
  std::vector<std::uint32_t> labels(200);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 2;
  const auto out = diffusion::generate_images(two.sampler(), two.schedule, labels, 99, 50, configured_threads());
  const double hit = testing::nearer_own_target(out, ds);

  // Part 2: the ladder's stripes generator against an untrained copy.
  const auto cfg = ladder_config(ctx);
  const auto& d = entry(cfg, "stripes");
  const lab::SweepPaths paths{cfg.output};
  const auto real = lab::load_dataset(cfg, d, 32);
  const auto split = lab::split_dataset(real, mix_seed(lab::cell_seed(cfg, d.name, 32), 1));
  const auto trained = lab::ensure_generator(cfg, d.name, 32, split.train, paths, log);
  const diffusion::Graph untrained(diffusion::build_denoiser(trained.spec), 12345);
  const auto& test_labels = split.test.labels;
  const auto gen_t = diffusion::generate_images(trained.sampler(), trained.schedule, test_labels, 7, 32, configured_threads());
  const auto gen_u = diffusion::generate_images(untrained, trained.schedule, test_labels, 7, 32, configured_threads());
  const double fd_t = metrics::image_frechet(split.test, gen_t), fd_u = metrics::image_frechet(split.test, gen_u);
  const double ratio = fd_u / fd_t;
  return {hit >= 0.9 && ratio >= 5.0, "two-point nearer own target " + fmt(100 * hit, 1) +
                                          "%; stripes Frechet untrained " + fmt(fd_u, 2) + " / trained " +
                                          fmt(fd_t, 2) + " = " + fmt(ratio, 2)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::function<Outcome(Context&)>> criteria = {c1, c2, c3, c4, c5, c6, c7, c8, c9, c10, c11, c12};
  Context ctx{fs::current_path() / "acceptance_work"};
  std::vector<int> chosen;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if ((a == "--criterion" || a == "-c") && i + 1 < argc) {
      chosen.push_back(std::stoi(argv[++i]));
    } else if (a == "--work" && i + 1 < argc) {
      ctx.work = argv[++i];
    } else {
      std::cerr << "usage: acceptance [--criterion N]... [--work DIR]\n";
      return 2;
    }
  }
  if (chosen.empty())
    for (int i = 1; i <= 12; ++i) chosen.push_back(i);
  fs::create_directories(ctx.work);
  int failures = 0;
  for (int n : chosen) {
    if (n < 1 || n > 12) {
      std::cerr << "no criterion " << n << "\n";
      return 2;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[static_cast<std::size_t>(n - 1)](ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    static const std::map<int, double> kLimits = {{1, 10.0}, {2, 900.0}, {6, 120.0}, {8, 4 * 3600.0}};
    if (auto it = kLimits.find(n); it != kLimits.end() && secs > it->second) {
      o.pass = false;
      o.detail += "; exceeded the " + fmt(it->second, 0) + " s limit";
    }
    std::printf("%s criterion %d: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", n, o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
