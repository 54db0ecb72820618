#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "lmnet/dataset.hpp"
#include "oracles.hpp"

using namespace lmnet;
namespace fs = std::filesystem;

namespace {

ImagePair random_pair(std::size_t h, std::size_t w, std::mt19937_64& rng, double p_fg = 0.3) {
  return {oracle::random_tensor<float>({1, 3, h, w}, rng, 0, 1), oracle::random_binary<float>({1, 1, h, w}, rng, p_fg)};
}

ImagePair mask_only(Tensor<float> mask) {
  return {Tensor<float>({1, 3, mask.h(), mask.w()}), std::move(mask)};
}

void write_pair(const fs::path& root, const std::string& split, const std::string& stem, const Image8& img,
                const Image8& mask) {
  fs::create_directories(root / split / "images");
  fs::create_directories(root / split / "masks");
  write_image(root / split / "images" / (stem + ".png"), img);
  write_image(root / split / "masks" / (stem + ".png"), mask);
}

Image8 gray(std::size_t h, std::size_t w, std::uint8_t fill) { return {w, h, 1, std::vector<std::uint8_t>(h * w, fill)}; }

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

}  // namespace

TEST(Tiling, FullSceneIntoNineTiles) {
  std::mt19937_64 rng(1);
  const ImagePair src = random_pair(1500, 1500, rng);
  const auto tiles = tile_image(src, 500);
  ASSERT_EQ(tiles.size(), 9u);
  for (const auto& t : tiles) {
    EXPECT_EQ(t.image.shape(), (Shape{1, 3, 500, 500}));
    EXPECT_EQ(t.mask.shape(), (Shape{1, 1, 500, 500}));
  }
  EXPECT_EQ(tiles[0].image.at(0, 0, 0, 0), src.image.at(0, 0, 0, 0));
  const ImagePair back = reassemble_tiles(tiles, 3, 3);
  EXPECT_EQ(back.image, src.image);
  EXPECT_EQ(back.mask, src.mask);
}

TEST(Tiling, MatchesPixelOracle) {
  std::mt19937_64 rng(2);
  for (auto [h, w, t] : {std::tuple{12, 8, 4}, std::tuple{6, 9, 3}, std::tuple{5, 5, 5}}) {
    const auto src = oracle::random_tensor<double>({1, 2, std::size_t(h), std::size_t(w)}, rng);
    const auto tiles = tile_tensor(src, t);
    ASSERT_EQ(tiles.size(), std::size_t(h / t * (w / t)));
    for (std::size_t i = 0; i < tiles.size(); ++i) {
      for (std::size_t c = 0; c < 2; ++c) {
        for (int y = 0; y < t; ++y) {
          for (int x = 0; x < t; ++x) ASSERT_EQ(tiles[i].at(0, c, y, x), oracle::tile_pixel(src, t, i, c, y, x));
        }
      }
    }
    EXPECT_EQ(reassemble_tensor<double>(tiles, h / t, w / t), src);
  }
}

TEST(Tiling, ErrorsNameTheDimension) {
  try {
    tile_tensor(Tensor<float>({1, 1, 1000, 1499}), 500);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("width 1499"), std::string::npos);
  }
  try {
    tile_tensor(Tensor<float>({1, 1, 1499, 1000}), 500);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("height 1499"), std::string::npos);
  }
  EXPECT_THROW(tile_tensor(Tensor<float>({1, 1, 4, 4}), 0), ShapeError);
}

TEST(Filter, BoundariesAreClosed) {
  Tensor<float> empty({1, 1, 10, 10});
  Tensor<float> one_pct({1, 1, 10, 10});
  one_pct[0] = 1.0f;
  Tensor<float> ninety({1, 1, 10, 10});
  for (std::size_t i = 0; i < 90; ++i) ninety[i] = 1.0f;
  Tensor<float> full({1, 1, 10, 10}, 1.0f);
  const std::vector<ImagePair> tiles = {mask_only(empty), mask_only(one_pct), mask_only(ninety), mask_only(full)};
  const FilterResult r = filter_tiles(tiles);
  EXPECT_EQ(r.kept, (std::vector<std::size_t>{1, 2}));
  ASSERT_EQ(r.rejected.size(), 2u);
  EXPECT_EQ(r.rejected[0].index, 0u);
  EXPECT_EQ(r.rejected[0].fraction, 0.0);
  EXPECT_EQ(r.rejected[1].index, 3u);
  EXPECT_EQ(r.rejected[1].fraction, 1.0);
  EXPECT_THROW(filter_tiles(tiles, 0.5, 0.5), std::invalid_argument);
  EXPECT_THROW(filter_tiles(tiles, -0.1, 0.5), std::invalid_argument);
}

TEST(Filter, MatchesCountingOracle) {
  std::mt19937_64 rng(3);
  std::vector<ImagePair> tiles;
  for (int i = 0; i < 60; ++i) tiles.push_back(mask_only(oracle::random_binary<float>({1, 1, 8, 8}, rng, i / 60.0)));
  const double lo = 0.2, hi = 0.7;
  const FilterResult r = filter_tiles(tiles, lo, hi);
  std::vector<std::size_t> expected;
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    std::size_t ones = 0;
    for (float v : tiles[i].mask.data()) ones += v == 1.0f;
    const double f = ones / 64.0;
    if (f >= lo && f <= hi) expected.push_back(i);
  }
  EXPECT_EQ(r.kept, expected);
  EXPECT_EQ(r.kept.size() + r.rejected.size(), tiles.size());
}

TEST(Resize, IdentityAndConstants) {
  std::mt19937_64 rng(4);
  const ImagePair src = random_pair(192, 192, rng);
  const ImagePair same = resize_pair(src, 192, 192);
  EXPECT_EQ(same.mask, src.mask);
  EXPECT_EQ(same.image, src.image);

  ImagePair flat{Tensor<float>({1, 3, 500, 500}, 0.37f), Tensor<float>({1, 1, 500, 500}, 1.0f)};
  const ImagePair small = resize_pair(flat, 192, 192);
  for (float v : small.image.data()) ASSERT_NEAR(v, 0.37f, 1e-6);
  for (float v : small.mask.data()) ASSERT_EQ(v, 1.0f);
  EXPECT_THROW(resize_pair(flat, 600, 192), ShapeError);
}

TEST(Resize, CheckerboardMaskStaysBinaryAndBalanced) {
  for (std::size_t cell : {1u, 5u, 20u}) {
    Tensor<float> mask({1, 1, 500, 500});
    std::size_t ones = 0;
    for (std::size_t y = 0; y < 500; ++y) {
      for (std::size_t x = 0; x < 500; ++x) {
        const bool on = ((y / cell) + (x / cell)) % 2 == 0;
        mask.at(0, 0, y, x) = on ? 1.0f : 0.0f;
        ones += on;
      }
    }
    const ImagePair out = resize_pair(mask_only(mask), 192, 192);
    std::size_t out_ones = 0;
    for (float v : out.mask.data()) {
      ASSERT_TRUE(v == 0.0f || v == 1.0f);
      out_ones += v == 1.0f;
    }
    const double src_f = ones / 250000.0;
    const double out_f = out_ones / (192.0 * 192.0);
    EXPECT_NEAR(out_f, src_f, 0.05) << "cell " << cell;
  }
}

TEST(Resize, BilinearMatchesHandComputedAverage) {
  // 4x4 -> 2x2 with pixel-centre sampling averages each 2x2 block.
  Tensor<float> img({1, 3, 4, 4});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i % 16) / 16.0f;
  const ImagePair out = resize_pair({img, Tensor<float>({1, 1, 4, 4})}, 2, 2);
  EXPECT_NEAR(out.image.at(0, 0, 0, 0), (0 + 1 + 4 + 5) / 64.0f, 1e-6);
  EXPECT_NEAR(out.image.at(0, 0, 1, 1), (10 + 11 + 14 + 15) / 64.0f, 1e-6);
}

TEST(Binarize, ThresholdRule) {
  const float thr = 128.0f / 255.0f;
  Tensor<float> raw({1, 1, 1, 4}, std::vector<float>{0.0f, 1.0f, thr, 127.0f / 255.0f});
  EXPECT_EQ(binarize_mask(raw).data()[0], 0.0f);
  const auto b = binarize_mask(raw);
  EXPECT_EQ(std::vector<float>(b.data().begin(), b.data().end()), (std::vector<float>{0, 1, 1, 0}));

  std::mt19937_64 rng(5);
  Tensor<float> bytes({1, 1, 16, 16});
  for (float& v : bytes.data()) v = static_cast<float>(rng() % 256) / 255.0f;
  const auto out = binarize_mask(bytes);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    ASSERT_EQ(out[i], bytes[i] * 255.0f >= 127.5f ? 1.0f : 0.0f);
  }
}

TEST(ImageIo, PngAndNetpbmRoundTrip) {
  oracle::TempDir dir("img");
  std::mt19937_64 rng(6);
  Image8 rgb{7, 5, 3, {}};
  for (int i = 0; i < 7 * 5 * 3; ++i) rgb.pixels.push_back(static_cast<std::uint8_t>(rng()));
  Image8 g{7, 5, 1, {}};
  for (int i = 0; i < 7 * 5; ++i) g.pixels.push_back(static_cast<std::uint8_t>(rng()));
  for (const char* ext : {".png", ".ppm"}) {
    write_image(dir.path() / (std::string("rgb") + ext), rgb);
    EXPECT_EQ(read_image(dir.path() / (std::string("rgb") + ext)).pixels, rgb.pixels) << ext;
  }
  for (const char* ext : {".png", ".pgm"}) {
    write_image(dir.path() / (std::string("g") + ext), g);
    const Image8 back = read_image(dir.path() / (std::string("g") + ext));
    EXPECT_EQ(back.channels, 1u);
    EXPECT_EQ(back.pixels, g.pixels) << ext;
  }
  EXPECT_THROW(read_image(dir.path() / "absent.png"), ImageError);
  EXPECT_THROW(write_image(dir.path() / "x.bmp", g), ImageError);
  EXPECT_TRUE(is_image_file("a/b.PNG"));
  EXPECT_FALSE(is_image_file("a/b.txt"));

  const Tensor<float> t = image_to_tensor(g);
  EXPECT_EQ(t.shape(), (Shape{1, 3, 5, 7}));
  EXPECT_EQ(t.at(0, 2, 1, 1), g.pixels[8] / 255.0f);
  EXPECT_EQ(tensor_to_image(t).pixels[3 * 8 + 1], g.pixels[8]);
}

TEST(Index, BuildWriteReadRoundTrip) {
  oracle::TempDir dir("index");
  const auto samples = synth_generate(4, 16, 9);
  write_synthetic_split(std::span(samples).subspan(0, 3), dir.path(), Split::Train);
  write_synthetic_split(std::span(samples).subspan(3, 1), dir.path(), Split::Test);
  const DatasetIndex idx = build_index(dir.path());
  EXPECT_EQ(idx.count(Split::Train), 3u);
  EXPECT_EQ(idx.count(Split::Val), 0u);
  EXPECT_EQ(idx.count(Split::Test), 1u);

  write_index(idx, dir.path() / "index.tsv");
  const std::string text = slurp(dir.path() / "index.tsv");
  EXPECT_NE(text.find("train/images/synth_0.png\ttrain/masks/synth_0.png\ttrain\n"), std::string::npos);
  const DatasetIndex back = read_index(dir.path() / "index.tsv");
  ASSERT_EQ(back.records.size(), idx.records.size());
  for (std::size_t i = 0; i < idx.records.size(); ++i) {
    EXPECT_TRUE(fs::equivalent(back.records[i].image, idx.records[i].image));
    EXPECT_EQ(back.records[i].split, idx.records[i].split);
  }
  const auto train = load_split(back, Split::Train);
  ASSERT_EQ(train.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(train[i].mask, samples[i].pair.mask);
}

TEST(Index, OrphansAreListed) {
  oracle::TempDir dir("orphans");
  write_pair(dir.path(), "train", "a", gray(8, 8, 10), gray(8, 8, 255));
  write_image(dir.path() / "train" / "images" / "lonely.png", gray(8, 8, 1));
  write_image(dir.path() / "train" / "masks" / "stray.png", gray(8, 8, 1));
  try {
    build_index(dir.path());
    FAIL();
  } catch (const DatasetError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("lonely.png"), std::string::npos);
    EXPECT_NE(msg.find("stray.png"), std::string::npos);
  }
}

TEST(Index, ReadRejectsBadRecords) {
  oracle::TempDir dir("badindex");
  write_pair(dir.path(), "train", "a", gray(8, 8, 10), gray(8, 8, 255));
  auto check = [&](const std::string& body, const std::string& needle) {
    std::ofstream(dir.path() / "index.tsv", std::ios::trunc) << body;
    try {
      read_index(dir.path() / "index.tsv");
      FAIL() << body;
    } catch (const DatasetError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  const std::string good = "train/images/a.png\ttrain/masks/a.png\ttrain\n";
  check(good + good, "duplicate");
  check("train/images/b.png\ttrain/masks/a.png\ttrain\n", "does not exist");
  check(good + "only-two\tcolumns\n", ":2");
  check("train/images/a.png\ttrain/masks/a.png\tholdout\n", "unknown split");
}

TEST(Batches, FullSizedBatchCountAndCoverage) {
  const auto batches = epoch_batches(600, 200, 7, 0);
  ASSERT_EQ(batches.size(), 3u);
  std::multiset<std::size_t> members;
  for (const auto& b : batches) members.insert(b.begin(), b.end());
  EXPECT_EQ(members.size(), 600u);
  EXPECT_EQ(std::set<std::size_t>(members.begin(), members.end()).size(), 600u);
  EXPECT_EQ(*members.rbegin(), 599u);

  EXPECT_EQ(epoch_order(600, 7, 0), epoch_order(600, 7, 0));
  EXPECT_NE(epoch_order(600, 7, 0), epoch_order(600, 7, 1));
  EXPECT_NE(epoch_order(600, 7, 0), epoch_order(600, 8, 0));

  const auto short_tail = epoch_batches(63, 20, 1, 0);
  ASSERT_EQ(short_tail.size(), 4u);
  EXPECT_EQ(short_tail.back().size(), 3u);
  EXPECT_THROW(epoch_batches(10, 0, 1, 0), std::invalid_argument);
}

TEST(Batches, IteratorStacksMembers) {
  const auto samples = synth_generate(5, 8, 2);
  std::vector<ImagePair> pairs;
  for (const auto& s : samples) pairs.push_back(s.pair);
  BatchIterator it(pairs, 2, 3, 0);
  EXPECT_EQ(it.batch_count(), 3u);
  const auto order = epoch_order(5, 3, 0);
  Batch b;
  std::size_t seen = 0;
  while (it.next(b)) {
    for (std::size_t k = 0; k < b.images.n(); ++k, ++seen) {
      EXPECT_EQ(slice_batch(b.images, k, 1), pairs[order[seen]].image);
      EXPECT_EQ(slice_batch(b.masks, k, 1), pairs[order[seen]].mask);
    }
  }
  EXPECT_EQ(seen, 5u);
}

TEST(Synthetic, GeneratorProperties) {
  const auto a = synth_generate(100, 64, 17);
  const auto b = synth_generate(100, 64, 17);
  ASSERT_EQ(a.size(), 100u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& s = a[i];
    ASSERT_EQ(s.pair.image, b[i].pair.image);
    ASSERT_EQ(s.pair.mask, b[i].pair.mask);
    ASSERT_GE(s.rects.size(), 1u);
    ASSERT_LE(s.rects.size(), 5u);
    EXPECT_NO_THROW(check_pair(s.pair));
    const double f = foreground_fraction(s.pair.mask);
    EXPECT_GT(f, 0.0);
    EXPECT_LT(f, 0.5);

    Tensor<float> expected({1, 1, 64, 64});
    for (const Rect& r : s.rects) {
      for (std::size_t y = r.y0; y < r.y1; ++y) {
        for (std::size_t x = r.x0; x < r.x1; ++x) expected.at(0, 0, y, x) = 1.0f;
      }
    }
    ASSERT_EQ(s.pair.mask, expected);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t p = 0; p < 64 * 64; ++p) {
        const float v = s.pair.image.plane(0, c)[p];
        if (expected[p] == 1.0f) {
          ASSERT_GE(v, 0.7f);
        } else {
          ASSERT_LE(v, 0.4f);
        }
      }
    }
  }
  EXPECT_NE(synth_generate(1, 64, 18)[0].pair.image, a[0].pair.image);
  EXPECT_THROW(synth_generate(1, 20, 1), ShapeError);
}

TEST(Prepare, EndToEnd) {
  oracle::TempDir dir("prepare");
  const fs::path in = dir.path() / "raw";
  const fs::path out = dir.path() / "prepared";
  // 30x20 scene, 10-pixel tiles: left column all foreground, middle half, right empty.
  Image8 img = gray(20, 30, 0);
  Image8 mask = gray(20, 30, 0);
  for (std::size_t y = 0; y < 20; ++y) {
    for (std::size_t x = 0; x < 30; ++x) {
      img.pixels[y * 30 + x] = static_cast<std::uint8_t>(x * 8);
      if (x < 10 || (x < 20 && y % 10 < 5)) mask.pixels[y * 30 + x] = 255;
    }
  }
  write_pair(in, "train", "scene", img, mask);
  write_pair(in, "test", "other", img, mask);

  PrepareConfig c;
  c.input_dir = in;
  c.output_dir = out;
  c.tile_size = 10;
  c.target_size = 8;
  const PrepareSummary s = prepare_dataset(c);
  EXPECT_EQ(s.sources[0], 1u);
  EXPECT_EQ(s.sources[2], 1u);
  EXPECT_EQ(s.kept[0], 2u);
  EXPECT_EQ(s.rejected[0], 4u);

  EXPECT_TRUE(fs::exists(out / "train" / "images" / "scene_r0c1.png"));
  EXPECT_TRUE(fs::exists(out / "train" / "masks" / "scene_r1c1.png"));
  EXPECT_FALSE(fs::exists(out / "train" / "images" / "scene_r0c0.png"));
  const Image8 tile = read_image(out / "train" / "images" / "scene_r0c1.png");
  EXPECT_EQ(tile.width, 8u);
  EXPECT_EQ(tile.height, 8u);

  const DatasetIndex idx = read_index(out / "index.tsv");
  EXPECT_EQ(idx.count(Split::Train), 2u);
  EXPECT_EQ(idx.count(Split::Test), 2u);
  for (const auto& p : load_split(idx, Split::Test)) EXPECT_NO_THROW(check_pair(p));

  const std::string rejected = slurp(out / "rejected.tsv");
  EXPECT_NE(rejected.find("train/images/scene_r0c0.png\ttrain/masks/scene_r0c0.png\ttrain\t1\n"), std::string::npos);
  EXPECT_NE(rejected.find("test/images/other_r1c2.png\ttest/masks/other_r1c2.png\ttest\t0\n"), std::string::npos);

  EXPECT_THROW(prepare_dataset(c), DatasetError);
  c.overwrite = true;
  c.min_fg = 0.0;
  c.max_fg = 1.0;
  const PrepareSummary again = prepare_dataset(c);
  EXPECT_EQ(again.kept[0], 6u);
  EXPECT_EQ(read_index(out / "index.tsv").count(Split::Train), 6u);
}

TEST(Prepare, ValidatesBeforeWriting) {
  oracle::TempDir dir("prepare_bad");
  const fs::path in = dir.path() / "raw";
  const fs::path out = dir.path() / "prepared";
  PrepareConfig c;
  c.input_dir = in;
  c.output_dir = out;
  c.tile_size = 10;
  c.target_size = 8;
  EXPECT_THROW(prepare_dataset(c), DatasetError);
  fs::create_directories(in / "train" / "images");
  fs::create_directories(in / "train" / "masks");
  EXPECT_THROW(prepare_dataset(c), DatasetError);

  write_pair(in, "train", "good", gray(20, 20, 0), gray(20, 20, 255));
  write_pair(in, "train", "odd", gray(15, 20, 0), gray(15, 20, 255));
  try {
    prepare_dataset(c);
    FAIL();
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("odd.png"), std::string::npos);
  }
  EXPECT_FALSE(fs::exists(out));

  c.target_size = 12;
  c.min_fg = 0.9;
  c.max_fg = 0.1;
  EXPECT_THROW(prepare_dataset(c), ConfigError);
}

TEST(Splits, Names) {
  for (Split s : kAllSplits) EXPECT_EQ(parse_split(split_name(s)), s);
  EXPECT_THROW(parse_split("dev"), ConfigError);
}
