#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "detectlab/datasets/io.hpp"
#include "detectlab/datasets/procedural.hpp"
#include "detectlab/datasets/transforms.hpp"

using namespace detectlab;
using namespace detectlab::datasets;
namespace fs = std::filesystem;

namespace {

ImageDataset ramp(std::size_t n, std::size_t c, std::size_t h, std::size_t w, std::uint32_t classes = 3) {
  ImageDataset ds;
  ds.name = "ramp";
  ds.channels = c;
  ds.height = h;
  ds.width = w;
  ds.num_classes = classes;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < c * h * w; ++p) ds.pixels.push_back(static_cast<std::uint8_t>((i * 31 + p * 7) % 256));
    ds.labels.push_back(static_cast<std::uint32_t>(i % classes));
  }
  return ds;
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("detectlab_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::multiset<std::vector<std::uint8_t>> image_multiset(const ImageDataset& ds) {
  std::multiset<std::vector<std::uint8_t>> s;
  for (std::size_t i = 0; i < ds.size(); ++i) s.emplace(ds.image(i).begin(), ds.image(i).end());
  return s;
}

}  // namespace

TEST(Ingest, IdxThreeImages) {
  std::vector<std::uint8_t> bytes;
  put_be32(bytes, 0x00000803);
  put_be32(bytes, 3);
  put_be32(bytes, 28);
  put_be32(bytes, 28);
  for (int i = 0; i < 3 * 28 * 28; ++i) bytes.push_back(static_cast<std::uint8_t>(i));
  const auto ds = decode_idx(bytes, nullptr);
  EXPECT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.height, 28u);
  EXPECT_EQ(ds.width, 28u);
  EXPECT_EQ(ds.channels, 1u);
  EXPECT_EQ(ds.pixels[5], 5);
}

TEST(Ingest, IdxWithLabelFileFromDisk) {
  const auto dir = scratch("idx");
  std::vector<std::uint8_t> img, lab;
  put_be32(img, 0x00000803);
  put_be32(img, 2);
  put_be32(img, 2);
  put_be32(img, 2);
  for (int i = 0; i < 8; ++i) img.push_back(static_cast<std::uint8_t>(i * 10));
  put_be32(lab, 0x00000801);
  put_be32(lab, 2);
  lab.push_back(4);
  lab.push_back(1);
  binio::write_file((dir / "train-images-idx3-ubyte").string(), img);
  binio::write_file((dir / "train-labels-idx1-ubyte").string(), lab);
  const auto ds = ingest(dir / "train-images-idx3-ubyte", Format::Idx);
  EXPECT_EQ(ds.labels, (std::vector<std::uint32_t>{4, 1}));
  EXPECT_EQ(ds.num_classes, 5u);
}

TEST(Ingest, IdxBadMagicReportsOffset) {
  std::vector<std::uint8_t> bytes;
  put_be32(bytes, 0x00000802);
  put_be32(bytes, 1);
  try {
    decode_idx(bytes, nullptr);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
}

TEST(Ingest, IdxTruncatedPayload) {
  std::vector<std::uint8_t> bytes;
  put_be32(bytes, 0x00000803);
  put_be32(bytes, 2);
  put_be32(bytes, 4);
  put_be32(bytes, 4);
  bytes.resize(bytes.size() + 20);
  try {
    decode_idx(bytes, nullptr);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 16u);
  }
}

TEST(Ingest, PngDirTwoImages) {
  const auto dir = scratch("pngdir");
  for (int i = 0; i < 2; ++i) {
    png::Image im{4, 3, 1, std::vector<std::uint8_t>(12, static_cast<std::uint8_t>(100 + i))};
    binio::write_file((dir / ("img" + std::to_string(i) + ".png")).string(), png::encode(im));
  }
  std::ofstream(dir / "manifest.json") << R"({"img0.png": 0, "img1.png": 1})";
  const auto ds = ingest(dir, Format::PngDir);
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.labels, (std::vector<std::uint32_t>{0, 1}));
  EXPECT_EQ(ds.height, 3u);
  EXPECT_EQ(ds.width, 4u);
  EXPECT_EQ(ds.image(1)[0], 101);
}

TEST(Ingest, PngDirRgbStaysRgbAndPlanar) {
  const auto dir = scratch("pngrgb");
  png::Image im{2, 1, 3, {1, 2, 3, 4, 5, 6}};
  binio::write_file((dir / "a.png").string(), png::encode(im));
  std::ofstream(dir / "manifest.json") << R"({"a.png": 0})";
  const auto ds = ingest(dir, Format::PngDir);
  EXPECT_EQ(ds.channels, 3u);
  EXPECT_EQ(ds.pixels, (std::vector<std::uint8_t>{1, 4, 2, 5, 3, 6}));
}

TEST(Ingest, PngDirMixedDimensionsRejected) {
  const auto dir = scratch("pngmixed");
  binio::write_file((dir / "a.png").string(), png::encode({2, 2, 1, std::vector<std::uint8_t>(4)}));
  binio::write_file((dir / "b.png").string(), png::encode({3, 2, 1, std::vector<std::uint8_t>(6)}));
  std::ofstream(dir / "manifest.json") << R"({"a.png": 0, "b.png": 0})";
  EXPECT_THROW(ingest(dir, Format::PngDir), ParseError);
}

TEST(Ingest, PngDirNegativeLabelRejected) {
  const auto dir = scratch("pngneg");
  binio::write_file((dir / "a.png").string(), png::encode({2, 2, 1, std::vector<std::uint8_t>(4)}));
  std::ofstream(dir / "manifest.json") << R"({"a.png": -1})";
  EXPECT_THROW(ingest(dir, Format::PngDir), ParseError);
}

TEST(Ingest, RawDlabRoundTripIsByteIdentical) {
  const auto dir = scratch("raw");
  const auto bytes = encode_raw_dlab(ramp(5, 3, 4, 6));
  binio::write_file((dir / "x.dlab").string(), bytes);
  const auto ds = ingest(dir / "x.dlab", Format::RawDlab);
  EXPECT_EQ(encode_raw_dlab(ds), bytes);
  export_raw_dlab(ds, (dir / "y.dlab").string());
  EXPECT_EQ(binio::read_file((dir / "y.dlab").string()), bytes);
}

TEST(Ingest, RawDlabLabelOutOfRangeHasOffset) {
  auto bytes = encode_raw_dlab(ramp(2, 1, 2, 2, 3));
  // Header is 8+4+8+1+4+4+4 = 33 bytes; second label at 35.
  bytes[35] = 7;
  try {
    decode_raw_dlab(bytes);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 35u);
  }
}

TEST(Ingest, RawDlabMalformedHeaders) {
  auto good = encode_raw_dlab(ramp(2, 1, 2, 2));
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_raw_dlab(bad_magic), ParseError);
  auto bad_channels = good;
  bad_channels[20] = 2;
  EXPECT_THROW(decode_raw_dlab(bad_channels), ParseError);
  auto truncated = good;
  truncated.pop_back();
  EXPECT_THROW(decode_raw_dlab(truncated), ParseError);
  auto trailing = good;
  trailing.push_back(0);
  EXPECT_THROW(decode_raw_dlab(trailing), ParseError);
}

TEST(Preprocess, PadsMnistTo32WithBlackBorder) {
  ImageDataset ds = ramp(2, 1, 28, 28);
  for (auto& p : ds.pixels) p = 200;
  const auto out = preprocess(ds, 32, 32);
  ASSERT_EQ(out.height, 32u);
  ASSERT_EQ(out.width, 32u);
  const auto img = out.image(0);
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x) {
      const bool border = y < 2 || y >= 30 || x < 2 || x >= 30;
      EXPECT_EQ(img[y * 32 + x], border ? 0 : 200) << y << "," << x;
    }
}

TEST(Preprocess, SameSizeIsIdentity) {
  const auto ds = ramp(3, 3, 32, 32);
  EXPECT_EQ(preprocess(ds, 32, 32), ds);
}

TEST(Preprocess, BilinearKeepsConstantImagesConstant) {
  ImageDataset ds = ramp(2, 1, 128, 128);
  for (std::size_t i = 0; i < ds.pixels.size(); ++i) ds.pixels[i] = i < 128 * 128 ? 37 : 250;
  const auto out = preprocess(ds, 64, 64);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) ASSERT_EQ(out.pixels[i], i < 64 * 64 ? 37 : 250);
}

TEST(Preprocess, LargeGapResizesInsteadOfPadding) {
  ImageDataset ds = ramp(1, 1, 16, 16);
  for (auto& p : ds.pixels) p = 90;
  const auto out = preprocess(ds, 32, 32);
  for (auto p : out.pixels) EXPECT_EQ(p, 90);
}

TEST(Preprocess, IdempotentForSameTarget) {
  const auto ds = ramp(4, 3, 20, 24);
  const auto once = preprocess(ds, 16, 16);
  EXPECT_EQ(preprocess(once, 16, 16), once);
}

TEST(Preprocess, DownscaleAveragesPairs) {
  ImageDataset ds = ramp(1, 1, 1, 4);
  ds.pixels = {0, 100, 200, 250};
  const auto out = preprocess(ds, 1, 2);
  EXPECT_EQ(out.pixels, (std::vector<std::uint8_t>{50, 225}));
}

TEST(Resize, NeverPads) {
  ImageDataset ds = ramp(2, 1, 28, 28);
  for (auto& p : ds.pixels) p = 200;
  const auto out = resize(ds, 32, 32);
  ASSERT_EQ(out.height, 32u);
  for (auto p : out.pixels) EXPECT_EQ(p, 200);
  EXPECT_EQ(out.labels, ds.labels);
  EXPECT_EQ(resize(ds, 28, 28), ds);
  EXPECT_THROW(resize(ds, 0, 4), RangeError);
}

TEST(ResizeNearest, IntegerUpscaleReplicates) {
  ImageDataset ds = ramp(1, 1, 2, 2);
  ds.pixels = {1, 2, 3, 4};
  const auto out = resize_nearest(ds, 4, 4);
  EXPECT_EQ(out.pixels, (std::vector<std::uint8_t>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4}));
  EXPECT_EQ(resize_nearest(out, 2, 2), ds);
  EXPECT_THROW(resize_nearest(ds, 4, 0), RangeError);
}

TEST(Augment, Cardinalities) {
  const auto ds = ramp(100, 1, 4, 4);
  EXPECT_EQ(augment(ds, AugmentMode::HFlip).size(), 200u);
  EXPECT_EQ(augment(ds, AugmentMode::HVFlipAll).size(), 400u);
  const auto aug = augment(ds, AugmentMode::HVFlipAll);
  for (std::size_t i = 0; i < aug.size(); ++i) EXPECT_EQ(aug.labels[i], ds.labels[i % 100]);
}

TEST(Augment, DoubleHorizontalFlipIsIdentity) {
  const auto ds = ramp(7, 3, 5, 6);
  const auto once = augment(ds, AugmentMode::HFlip);
  const auto flipped = select(once, std::vector<std::size_t>{7, 8, 9, 10, 11, 12, 13});
  const auto twice = augment(flipped, AugmentMode::HFlip);
  const auto back = select(twice, std::vector<std::size_t>{7, 8, 9, 10, 11, 12, 13});
  EXPECT_EQ(back.pixels, ds.pixels);
}

TEST(Augment, HvFlipAllClosedUnderFlips) {
  const auto ds = ramp(6, 3, 5, 7);
  const auto aug = augment(ds, AugmentMode::HVFlipAll);
  const auto base = image_multiset(aug);
  for (auto [h, v] : {std::pair{true, false}, std::pair{false, true}, std::pair{true, true}}) {
    ImageDataset flipped = aug.empty_like();
    std::vector<std::uint8_t> buf(aug.image_size());
    for (std::size_t i = 0; i < aug.size(); ++i) {
      flip_image(aug.image(i), buf, aug.channels, aug.height, aug.width, h, v);
      flipped.push_back(buf, aug.labels[i]);
    }
    EXPECT_EQ(image_multiset(flipped), base);
  }
}

TEST(Split, Sizes) {
  auto sizes = [](std::size_t n) {
    ImageDataset ds;
    ds.labels.assign(n, 0);
    const auto s = split(ds, 1);
    return std::tuple{s.train.size(), s.val.size(), s.test.size()};
  };
  EXPECT_EQ(sizes(80000), (std::tuple{std::size_t{60000}, std::size_t{10000}, std::size_t{10000}}));
  EXPECT_EQ(sizes(40000), (std::tuple{std::size_t{30000}, std::size_t{5000}, std::size_t{5000}}));
  EXPECT_EQ(sizes(70000), (std::tuple{std::size_t{52500}, std::size_t{8750}, std::size_t{8750}}));
  EXPECT_EQ(sizes(16), (std::tuple{std::size_t{12}, std::size_t{2}, std::size_t{2}}));
}

TEST(Split, MnistOfficialTestSplit) {
  ImageDataset ds;
  ds.labels.assign(70000, 0);
  std::vector<std::size_t> test(10000);
  std::iota(test.begin(), test.end(), std::size_t{60000});
  const auto s = split_with_test(ds, test, 3);
  EXPECT_EQ(s.train.size(), 50000u);
  EXPECT_EQ(s.val.size(), 10000u);
  EXPECT_EQ(s.test, test);
  EXPECT_TRUE(std::all_of(s.val.begin(), s.val.end(), [](auto i) { return i < 60000; }));
}

TEST(Split, TooSmallRejected) {
  ImageDataset ds;
  ds.labels.assign(15, 0);
  EXPECT_THROW(split(ds, 0), RangeError);
}

TEST(Split, DisjointCoverDeterministicSeedSensitive) {
  for (std::size_t n : {16u, 17u, 100u, 1001u}) {
    ImageDataset ds;
    ds.labels.assign(n, 0);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto s = split(ds, seed);
      std::vector<std::size_t> all;
      for (const auto* part : {&s.train, &s.val, &s.test}) all.insert(all.end(), part->begin(), part->end());
      std::sort(all.begin(), all.end());
      ASSERT_EQ(all.size(), n);
      for (std::size_t i = 0; i < n; ++i) ASSERT_EQ(all[i], i);
      EXPECT_EQ(split(ds, seed), s);
      EXPECT_NE(split(ds, seed + 100), s);
    }
  }
}

TEST(Subsample, FullIsPermutationAndOneIsMember) {
  const auto ds = ramp(50, 1, 3, 3, 5);
  const auto all = subsample(ds, 50, 4);
  EXPECT_EQ(image_multiset(all), image_multiset(ds));
  const auto one = subsample(ds, 1, 9);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(image_multiset(ds).count(std::vector<std::uint8_t>(one.image(0).begin(), one.image(0).end())), 1u);
  EXPECT_EQ(subsample(ds, 20, 3), subsample(ds, 20, 3));
}

TEST(Subsample, OutOfRange) {
  const auto ds = ramp(5, 1, 2, 2);
  EXPECT_THROW(subsample(ds, 0, 1), RangeError);
  EXPECT_THROW(subsample(ds, 6, 1), RangeError);
}

TEST(Procedural, ConstantTwoClassesHasTwoPatterns) {
  auto spec = ProceduralSpec::of(Family::Constant, 16, 300, 11);
  spec.num_classes = 2;
  spec.level_jitter = 0;
  const auto ds = generate_procedural(spec);
  std::set<std::vector<std::uint8_t>> patterns;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto img = ds.image(i);
    patterns.emplace(img.begin(), img.end());
    EXPECT_TRUE(std::all_of(img.begin(), img.end(), [&](auto v) { return v == img[0]; }));
  }
  EXPECT_EQ(patterns.size(), 2u);
}

TEST(Procedural, DeterministicAndValid) {
  for (auto f : kAllFamilies) {
    for (std::size_t c : {1u, 3u}) {
      auto spec = ProceduralSpec::of(f, 16, 64, 5);
      spec.channels = c;
      spec.num_classes = 4;
      const auto a = generate_procedural(spec);
      EXPECT_EQ(a, generate_procedural(spec)) << to_string(f);
      EXPECT_NO_THROW(a.validate());
      spec.seed = 6;
      EXPECT_NE(a.pixels, generate_procedural(spec).pixels) << to_string(f);
    }
  }
}

TEST(Procedural, NoiseLabelsCoverClasses) {
  auto spec = ProceduralSpec::of(Family::Noise, 8, 400, 2);
  spec.num_classes = 4;
  const auto ds = generate_procedural(spec);
  std::map<std::uint32_t, int> counts;
  for (auto l : ds.labels) ++counts[l];
  EXPECT_EQ(counts.size(), 4u);
}

TEST(Procedural, PrefixStable) {
  auto small = ProceduralSpec::of(Family::Shapes, 16, 10, 3);
  auto big = small;
  big.count = 40;
  const auto a = generate_procedural(small);
  const auto b = generate_procedural(big);
  EXPECT_TRUE(std::equal(a.pixels.begin(), a.pixels.end(), b.pixels.begin()));
}
