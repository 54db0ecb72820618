#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lmnet/config_text.hpp"
#include "lmnet/image_io.hpp"
#include "lmnet/tensor.hpp"

namespace lmnet {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// image (1,3,h,w) in [0,1]; mask (1,1,h,w) in {0,1}.
struct ImagePair {
  Tensor<float> image;
  Tensor<float> mask;
};

/// Throws ShapeError / DatasetError unless shapes agree and the mask is binary.
void check_pair(const ImagePair& pair);

inline constexpr double kDefaultMaskThreshold = 128.0 / 255.0;
inline constexpr double kDefaultMinForeground = 0.01;
inline constexpr double kDefaultMaxForeground = 0.90;

/// Splits every (n, c) plane into a row-major grid of tile x tile blocks.
/// Result i covers grid cell (i / cols, i % cols).
template <typename T>
std::vector<Tensor<T>> tile_tensor(const Tensor<T>& src, std::size_t tile) {
  if (tile == 0) throw ShapeError("tile size must be positive");
  if (src.h() % tile != 0) {
    throw ShapeError("height " + std::to_string(src.h()) + " is not divisible by tile size " + std::to_string(tile));
  }
  if (src.w() % tile != 0) {
    throw ShapeError("width " + std::to_string(src.w()) + " is not divisible by tile size " + std::to_string(tile));
  }
  const std::size_t rows = src.h() / tile;
  const std::size_t cols = src.w() / tile;
  std::vector<Tensor<T>> out;
  out.reserve(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      Tensor<T> t({src.n(), src.c(), tile, tile});
      for (std::size_t b = 0; b < src.n(); ++b) {
        for (std::size_t ch = 0; ch < src.c(); ++ch) {
          for (std::size_t y = 0; y < tile; ++y) {
            const T* row = &src.at(b, ch, r * tile + y, c * tile);
            std::copy(row, row + tile, &t.at(b, ch, y, 0));
          }
        }
      }
      out.push_back(std::move(t));
    }
  }
  return out;
}

/// Inverse of tile_tensor for a rows x cols grid.
template <typename T>
Tensor<T> reassemble_tensor(std::span<const Tensor<T>> tiles, std::size_t rows, std::size_t cols) {
  if (tiles.size() != rows * cols || tiles.empty()) {
    throw ShapeError("expected " + std::to_string(rows * cols) + " tiles, got " + std::to_string(tiles.size()));
  }
  const Shape ts = tiles.front().shape();
  Tensor<T> out({ts.n, ts.c, ts.h * rows, ts.w * cols});
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    if (tiles[i].shape() != ts) {
      throw ShapeError("tile " + std::to_string(i) + " has shape " + tiles[i].shape().str() + ", expected " + ts.str());
    }
    const std::size_t r = i / cols;
    const std::size_t c = i % cols;
    for (std::size_t b = 0; b < ts.n; ++b) {
      for (std::size_t ch = 0; ch < ts.c; ++ch) {
        for (std::size_t y = 0; y < ts.h; ++y) {
          const T* row = &tiles[i].at(b, ch, y, 0);
          std::copy(row, row + ts.w, &out.at(b, ch, r * ts.h + y, c * ts.w));
        }
      }
    }
  }
  return out;
}

std::vector<ImagePair> tile_image(const ImagePair& pair, std::size_t tile);
ImagePair reassemble_tiles(std::span<const ImagePair> tiles, std::size_t rows, std::size_t cols);

double foreground_fraction(const Tensor<float>& mask);

struct TileRejection {
  std::size_t index = 0;
  double fraction = 0.0;
};

struct FilterResult {
  std::vector<std::size_t> kept;
  std::vector<TileRejection> rejected;
};

/// Keeps tile i iff its mask foreground fraction lies in [min_fg, max_fg].
FilterResult filter_tiles(std::span<const ImagePair> tiles, double min_fg = kDefaultMinForeground,
                          double max_fg = kDefaultMaxForeground);

/// Bilinear (pixel-centre sampling) for the image, nearest neighbour plus
/// re-binarization at 0.5 for the mask. Downscaling or identity only.
ImagePair resize_pair(const ImagePair& pair, std::size_t height, std::size_t width);

/// 1 where value >= threshold, else 0.
Tensor<float> binarize_mask(const Tensor<float>& raw, double threshold = kDefaultMaskThreshold);

/// Decodes an image/mask file pair into an ImagePair (mask binarized at 128).
ImagePair load_pair(const std::filesystem::path& image, const std::filesystem::path& mask);

enum class Split { Train, Val, Test };
inline constexpr std::array<Split, 3> kAllSplits = {Split::Train, Split::Val, Split::Test};
std::string_view split_name(Split s);
Split parse_split(std::string_view name);

struct IndexRecord {
  std::filesystem::path image;  // absolute
  std::filesystem::path mask;   // absolute
  Split split = Split::Train;
};

struct DatasetIndex {
  std::vector<IndexRecord> records;

  std::size_t count(Split s) const;
  std::vector<IndexRecord> of(Split s) const;
};

/// Scans `<dir>/<split>/{images,masks}` and pairs files by stem. Fails listing
/// every image without a mask and every mask without an image.
DatasetIndex build_index(const std::filesystem::path& prepared_dir);

/// Tab-separated `image<TAB>mask<TAB>split`, paths relative to the index file.
void write_index(const DatasetIndex& index, const std::filesystem::path& file);
/// Validates that referenced files exist and that image paths are unique.
DatasetIndex read_index(const std::filesystem::path& file);

std::vector<ImagePair> load_split(const DatasetIndex& index, Split split);

/// Permutation of [0, count) fully determined by (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::uint64_t epoch);
/// epoch_order chunked into batches of `batch`; the last may be short.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, std::size_t batch, std::uint64_t seed,
                                                    std::uint64_t epoch);

struct Batch {
  Tensor<float> images;
  Tensor<float> masks;
};

Batch make_batch(std::span<const ImagePair> pairs, std::span<const std::size_t> members);

/// Yields the shuffled batches of one epoch.
class BatchIterator {
 public:
  BatchIterator(std::span<const ImagePair> pairs, std::size_t batch, std::uint64_t seed, std::uint64_t epoch);

  bool next(Batch& out);
  std::size_t batch_count() const { return batches_.size(); }

 private:
  std::span<const ImagePair> pairs_;
  std::vector<std::vector<std::size_t>> batches_;
  std::size_t pos_ = 0;
};

struct Rect {
  std::size_t y0 = 0;  // inclusive
  std::size_t x0 = 0;
  std::size_t y1 = 0;  // exclusive
  std::size_t x1 = 0;
};

struct SynthSample {
  ImagePair pair;
  std::vector<Rect> rects;
};

/// Noise background in [0, 0.4] with 1-5 axis-aligned rectangles of
/// brightness [0.7, 1] whose union is the mask. Deterministic in seed.
std::vector<SynthSample> synth_generate(std::size_t n, std::size_t size, std::uint64_t seed);

/// Writes samples as `<dir>/<split>/{images,masks}/<prefix><i>.png` and
/// returns the matching index records.
std::vector<IndexRecord> write_synthetic_split(std::span<const SynthSample> samples, const std::filesystem::path& dir,
                                               Split split, const std::string& prefix = "synth_");

struct PrepareConfig {
  std::filesystem::path input_dir;
  std::filesystem::path output_dir;
  std::size_t tile_size = 500;
  std::size_t target_size = 192;
  double min_fg = kDefaultMinForeground;
  double max_fg = kDefaultMaxForeground;
  bool overwrite = false;

  std::vector<std::string> violations() const;
};

struct PrepareSummary {
  std::array<std::size_t, 3> sources{};
  std::array<std::size_t, 3> kept{};
  std::array<std::size_t, 3> rejected{};
};

/// Raw layout `<in>/<split>/{images,masks}` (at least one split). Every source
/// is validated before anything is written. Produces
/// `<out>/<split>/{images,masks}/<stem>_r<R>c<C>.png`, `index.tsv` and
/// `rejected.tsv`.
PrepareSummary prepare_dataset(const PrepareConfig& config);

}  // namespace lmnet
