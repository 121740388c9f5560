#pragma once

#include <zlib.h>

#ifdef DETECTLAB_HAVE_IOSTREAMS
#include <boost/iostreams/copy.hpp>
#include <boost/iostreams/device/array.hpp>
#include <boost/iostreams/device/back_inserter.hpp>
#include <boost/iostreams/filter/bzip2.hpp>
#include <boost/iostreams/filter/zstd.hpp>
#include <boost/iostreams/filtering_stream.hpp>
#endif

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "detectlab/error.hpp"

namespace detectlab::complexity {

inline constexpr int kDeflateLevel = 9;
inline constexpr int kBzip2BlockSize = 9;
inline constexpr int kZstdLevel = 3;

// zlib stream (RFC 1950) at level 9.
inline std::size_t deflate_size(std::span<const std::uint8_t> data) {
  uLongf bound = compressBound(static_cast<uLong>(data.size()));
  std::vector<Bytef> out(bound);
  if (compress2(out.data(), &bound, data.data(), static_cast<uLong>(data.size()), kDeflateLevel) != Z_OK)
    throw Error("deflate: compression failed");
  return bound;
}

inline constexpr bool have_stream_codecs() {
#ifdef DETECTLAB_HAVE_IOSTREAMS
  return true;
#else
  return false;
#endif
}

#ifdef DETECTLAB_HAVE_IOSTREAMS
namespace detail {

template <class Filter>
std::size_t filtered_size(std::span<const std::uint8_t> data, Filter filter) {
  namespace io = boost::iostreams;
  std::vector<char> out;
  io::filtering_ostream os;
  os.push(filter);
  os.push(io::back_inserter(out));
  os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  os.reset();
  return out.size();
}

}  // namespace detail

inline std::size_t bzip2_size(std::span<const std::uint8_t> data) {
  return detail::filtered_size(data, boost::iostreams::bzip2_compressor(boost::iostreams::bzip2_params(kBzip2BlockSize)));
}

inline std::size_t zstd_size(std::span<const std::uint8_t> data) {
  return detail::filtered_size(data, boost::iostreams::zstd_compressor(boost::iostreams::zstd_params(kZstdLevel)));
}
#else
inline std::size_t bzip2_size(std::span<const std::uint8_t>) { throw Error("bzip2 backend not built"); }
inline std::size_t zstd_size(std::span<const std::uint8_t>) { throw Error("zstd backend not built"); }
#endif

}  // namespace detectlab::complexity
