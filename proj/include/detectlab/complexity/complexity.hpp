#pragma once

#include <string>
#include <vector>

#include "detectlab/complexity/compressors.hpp"
#include "detectlab/csv.hpp"
#include "detectlab/datasets/image_dataset.hpp"
#include "detectlab/metrics/stats.hpp"
#include "detectlab/png_codec.hpp"

namespace detectlab::complexity {

enum class Backend { PngConcat, Deflate, Bzip2, Zstd, RawStore, PngFolder };

inline const char* to_string(Backend b) {
  switch (b) {
    case Backend::PngConcat: return "png-concat";
    case Backend::Deflate: return "deflate";
    case Backend::Bzip2: return "bzip2-like";
    case Backend::Zstd: return "zstd-like";
    case Backend::RawStore: return "raw-store";
    case Backend::PngFolder: return "png-folder";
  }
  return "?";
}

// Accepts canonical names plus the short aliases png, bzip2, zstd, raw.
inline Backend parse_backend(const std::string& s) {
  if (s == "png-concat" || s == "png") return Backend::PngConcat;
  if (s == "deflate") return Backend::Deflate;
  if (s == "bzip2-like" || s == "bzip2") return Backend::Bzip2;
  if (s == "zstd-like" || s == "zstd") return Backend::Zstd;
  if (s == "raw-store" || s == "raw") return Backend::RawStore;
  if (s == "png-folder") return Backend::PngFolder;
  throw RangeError("unsupported complexity backend '" + s + "'");
}

inline bool backend_available(Backend b) {
  return (b != Backend::Bzip2 && b != Backend::Zstd) || have_stream_codecs();
}

inline std::string encoder_settings(Backend b) {
  switch (b) {
    case Backend::PngConcat:
    case Backend::PngFolder: return png::kEncoderSettings;
    case Backend::Deflate: return "zlib level " + std::to_string(kDeflateLevel);
    case Backend::Bzip2: return "bzip2 block size " + std::to_string(kBzip2BlockSize);
    case Backend::Zstd: return "zstd level " + std::to_string(kZstdLevel);
    case Backend::RawStore: return "identity";
  }
  return "";
}

inline std::size_t raw_size(const datasets::ImageDataset& ds) { return ds.size() * ds.image_size(); }

namespace detail {

// Planar CHW row y of image i, interleaved into `row`.
inline void interleave_row(const datasets::ImageDataset& ds, std::size_t i, std::size_t y, std::uint8_t* row) {
  const auto img = ds.image(i);
  const std::size_t plane = ds.height * ds.width;
  for (std::size_t x = 0; x < ds.width; ++x)
    for (std::size_t c = 0; c < ds.channels; ++c) row[x * ds.channels + c] = img[c * plane + y * ds.width + x];
}

}  // namespace detail

// All images tiled vertically, in dataset order, into one W x (N*H) PNG.
inline std::size_t concat_png_size(const datasets::ImageDataset& ds) {
  if (ds.pixels.size() != ds.size() * ds.image_size()) throw ShapeError("concat_png_size: dimension mismatch");
  if (ds.size() == 0) throw ShapeError("concat_png_size: empty dataset");
  std::vector<std::uint8_t> row(ds.width * ds.channels);
  return png::encode_rows(ds.width, ds.size() * ds.height, ds.channels,
                          [&](std::size_t y) {
                            detail::interleave_row(ds, y / ds.height, y % ds.height, row.data());
                            return row.data();
                          })
      .size();
}

// Sum of per-image PNG sizes.
inline std::size_t png_folder_size(const datasets::ImageDataset& ds) {
  std::vector<std::uint8_t> row(ds.width * ds.channels);
  std::size_t total = 0;
  for (std::size_t i = 0; i < ds.size(); ++i)
    total += png::encode_rows(ds.width, ds.height, ds.channels, [&](std::size_t y) {
               detail::interleave_row(ds, i, y, row.data());
               return row.data();
             }).size();
  return total;
}

inline std::size_t compressed_size(const datasets::ImageDataset& ds, Backend backend) {
  switch (backend) {
    case Backend::PngConcat: return concat_png_size(ds);
    case Backend::PngFolder: return png_folder_size(ds);
    case Backend::Deflate: return deflate_size(ds.pixels);
    case Backend::Bzip2: return bzip2_size(ds.pixels);
    case Backend::Zstd: return zstd_size(ds.pixels);
    case Backend::RawStore: return raw_size(ds);
  }
  throw RangeError("unsupported complexity backend");
}

// C(D) = S_comp / S_orig. Not clamped: incompressible data plus headers can exceed 1.
inline double complexity(const datasets::ImageDataset& ds, Backend backend) {
  if (!backend_available(backend)) throw RangeError(std::string("backend ") + to_string(backend) + " not built");
  return static_cast<double>(compressed_size(ds, backend)) / static_cast<double>(raw_size(ds));
}

struct BackendResult {
  Backend backend;
  std::size_t s_comp = 0;
  double ratio = 0.0;
};

struct ComplexityReport {
  std::string dataset;
  std::size_t s_orig = 0;
  std::vector<BackendResult> results;

  const BackendResult& at(Backend b) const {
    for (const auto& r : results)
      if (r.backend == b) return r;
    throw RangeError(std::string("report has no ") + to_string(b) + " column");
  }
  bool has(Backend b) const {
    for (const auto& r : results)
      if (r.backend == b) return true;
    return false;
  }
};

// Backends missing from this build are skipped rather than failing.
inline ComplexityReport measure(const datasets::ImageDataset& ds, const std::vector<Backend>& backends) {
  ComplexityReport rep;
  rep.dataset = ds.name;
  rep.s_orig = raw_size(ds);
  for (auto b : backends) {
    if (!backend_available(b)) continue;
    const auto s = compressed_size(ds, b);
    rep.results.push_back({b, s, static_cast<double>(s) / static_cast<double>(rep.s_orig)});
  }
  return rep;
}

inline const csv::Row kReportHeader = {"dataset", "backend", "s_orig", "s_comp", "ratio"};

inline std::vector<csv::Row> report_rows(const std::vector<ComplexityReport>& reports) {
  std::vector<csv::Row> rows{kReportHeader};
  for (const auto& rep : reports)
    for (const auto& r : rep.results)
      rows.push_back({rep.dataset, to_string(r.backend), std::to_string(rep.s_orig), std::to_string(r.s_comp),
                      csv::number(r.ratio, 6)});
  return rows;
}

struct RankConsistency {
  std::vector<Backend> backends;
  std::vector<std::vector<double>> rho;  // backends x backends

  double min_off_diagonal() const {
    double m = 1.0;
    for (std::size_t i = 0; i < rho.size(); ++i)
      for (std::size_t j = 0; j < rho.size(); ++j)
        if (i != j) m = std::min(m, rho[i][j]);
    return m;
  }
};

// Pairwise Spearman correlation of per-backend ratios across datasets.
// Uses the backends present in every report.
inline RankConsistency rank_consistency(const std::vector<ComplexityReport>& reports) {
  if (reports.size() < 3) throw RangeError("rank_consistency: need at least 3 datasets");
  RankConsistency out;
  for (const auto& r : reports.front().results) {
    bool everywhere = true;
    for (const auto& rep : reports) everywhere = everywhere && rep.has(r.backend);
    if (everywhere) out.backends.push_back(r.backend);
  }
  if (out.backends.size() < 2) throw RangeError("rank_consistency: need at least 2 backends");
  std::vector<std::vector<double>> cols;
  for (auto b : out.backends) {
    std::vector<double> col;
    for (const auto& rep : reports) col.push_back(rep.at(b).ratio);
    cols.push_back(std::move(col));
  }
  const std::size_t k = out.backends.size();
  out.rho.assign(k, std::vector<double>(k, 1.0));
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) out.rho[i][j] = out.rho[j][i] = metrics::spearman(cols[i], cols[j]);
  return out;
}

}  // namespace detectlab::complexity
