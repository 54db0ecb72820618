#include "lmnet/dataset.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "lmnet/config_text.hpp"

namespace lmnet {

namespace fs = std::filesystem;

namespace {

using ShuffleRng = std::mt19937_64;

ShuffleRng seeded(std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(b),
                    static_cast<std::uint32_t>(b >> 32)};
  return ShuffleRng(seq);
}

// Unbiased draw from [0, bound) by rejection; stable across standard libraries.
std::uint64_t below(ShuffleRng& rng, std::uint64_t bound) {
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
  std::uint64_t v = rng();
  while (v >= limit) v = rng();
  return v % bound;
}

double uniform_in(ShuffleRng& rng, double lo, double hi) {
  return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
}

std::vector<fs::path> image_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct SourcePair {
  fs::path image;
  fs::path mask;
};

// Pairs `<dir>/images/*` with `<dir>/masks/*` by stem; throws listing orphans.
std::vector<SourcePair> pair_directory(const fs::path& dir) {
  const fs::path images = dir / "images";
  const fs::path masks = dir / "masks";
  if (!fs::is_directory(images)) throw DatasetError("missing directory '" + images.string() + "'");
  if (!fs::is_directory(masks)) throw DatasetError("missing directory '" + masks.string() + "'");

  std::map<std::string, fs::path> by_stem;
  for (const fs::path& m : image_files(masks)) {
    if (!by_stem.emplace(m.stem().string(), m).second) {
      throw DatasetError("two masks share the stem '" + m.stem().string() + "' in '" + masks.string() + "'");
    }
  }
  std::vector<SourcePair> out;
  std::vector<std::string> orphans;
  std::set<std::string> seen;
  for (const fs::path& img : image_files(images)) {
    const std::string stem = img.stem().string();
    if (!seen.insert(stem).second) {
      throw DatasetError("two images share the stem '" + stem + "' in '" + images.string() + "'");
    }
    auto it = by_stem.find(stem);
    if (it == by_stem.end()) {
      orphans.push_back("image without mask: " + img.string());
    } else {
      out.push_back({img, it->second});
    }
  }
  for (const auto& [stem, m] : by_stem) {
    if (!seen.count(stem)) orphans.push_back("mask without image: " + m.string());
  }
  if (!orphans.empty()) {
    std::string msg = std::to_string(orphans.size()) + " unpaired file(s) under '" + dir.string() + "':";
    for (const auto& o : orphans) msg += "\n  " + o;
    throw DatasetError(msg);
  }
  return out;
}

std::string relative_to(const fs::path& target, const fs::path& base_dir) {
  return fs::absolute(target).lexically_normal().lexically_relative(fs::absolute(base_dir).lexically_normal())
      .generic_string();
}

Image8 mask_to_image(const Tensor<float>& mask) {
  Image8 img{mask.w(), mask.h(), 1, std::vector<std::uint8_t>(mask.size())};
  for (std::size_t i = 0; i < mask.size(); ++i) img.pixels[i] = mask[i] >= 0.5f ? 255 : 0;
  return img;
}

}  // namespace

void check_pair(const ImagePair& pair) {
  const Shape& is = pair.image.shape();
  const Shape& ms = pair.mask.shape();
  if (is.n != 1 || is.c != 3 || ms.n != 1 || ms.c != 1 || is.h != ms.h || is.w != ms.w) {
    throw ShapeError("image " + is.str() + " and mask " + ms.str() + " do not form a pair");
  }
  for (float v : pair.mask.data()) {
    if (v != 0.0f && v != 1.0f) throw DatasetError("mask value " + std::to_string(v) + " is not binary");
  }
}

std::vector<ImagePair> tile_image(const ImagePair& pair, std::size_t tile) {
  check_pair(pair);
  auto images = tile_tensor(pair.image, tile);
  auto masks = tile_tensor(pair.mask, tile);
  std::vector<ImagePair> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) out.push_back({std::move(images[i]), std::move(masks[i])});
  return out;
}

ImagePair reassemble_tiles(std::span<const ImagePair> tiles, std::size_t rows, std::size_t cols) {
  std::vector<Tensor<float>> images;
  std::vector<Tensor<float>> masks;
  for (const ImagePair& t : tiles) {
    images.push_back(t.image);
    masks.push_back(t.mask);
  }
  return {reassemble_tensor<float>(images, rows, cols), reassemble_tensor<float>(masks, rows, cols)};
}

double foreground_fraction(const Tensor<float>& mask) {
  if (mask.empty()) return 0.0;
  std::size_t fg = 0;
  for (float v : mask.data()) fg += v >= 0.5f ? 1 : 0;
  return static_cast<double>(fg) / static_cast<double>(mask.size());
}

FilterResult filter_tiles(std::span<const ImagePair> tiles, double min_fg, double max_fg) {
  if (!(min_fg >= 0.0 && min_fg < max_fg && max_fg <= 1.0)) {
    throw std::invalid_argument("foreground bounds must satisfy 0 <= min_fg < max_fg <= 1, got min_fg=" +
                                std::to_string(min_fg) + " max_fg=" + std::to_string(max_fg));
  }
  FilterResult r;
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const double f = foreground_fraction(tiles[i].mask);
    if (f >= min_fg && f <= max_fg) {
      r.kept.push_back(i);
    } else {
      r.rejected.push_back({i, f});
    }
  }
  return r;
}

ImagePair resize_pair(const ImagePair& pair, std::size_t height, std::size_t width) {
  check_pair(pair);
  const std::size_t in_h = pair.image.h();
  const std::size_t in_w = pair.image.w();
  if (height == 0 || width == 0) throw ShapeError("resize target must be non-empty");
  if (height > in_h || width > in_w) {
    throw ShapeError("cannot upscale " + std::to_string(in_h) + "x" + std::to_string(in_w) + " to " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
  const double sy = static_cast<double>(in_h) / static_cast<double>(height);
  const double sx = static_cast<double>(in_w) / static_cast<double>(width);

  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [](std::size_t out, std::size_t in, double scale) {
    std::vector<Tap> t(out);
    for (std::size_t i = 0; i < out; ++i) {
      double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const auto lo = static_cast<std::size_t>(std::floor(src));
      t[i] = {lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
    }
    return t;
  };
  const auto ty = taps(height, in_h, sy);
  const auto tx = taps(width, in_w, sx);

  ImagePair out{Tensor<float>({1, 3, height, width}), Tensor<float>({1, 1, height, width})};
  for (std::size_t ch = 0; ch < 3; ++ch) {
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const double v00 = pair.image.at(0, ch, ty[y].lo, tx[x].lo);
        const double v01 = pair.image.at(0, ch, ty[y].lo, tx[x].hi);
        const double v10 = pair.image.at(0, ch, ty[y].hi, tx[x].lo);
        const double v11 = pair.image.at(0, ch, ty[y].hi, tx[x].hi);
        const double top = v00 + tx[x].frac * (v01 - v00);
        const double bottom = v10 + tx[x].frac * (v11 - v10);
        out.image.at(0, ch, y, x) = static_cast<float>(top + ty[y].frac * (bottom - top));
      }
    }
  }
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t src_y = std::min((2 * y + 1) * in_h / (2 * height), in_h - 1);
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t src_x = std::min((2 * x + 1) * in_w / (2 * width), in_w - 1);
      out.mask.at(0, 0, y, x) = pair.mask.at(0, 0, src_y, src_x) >= 0.5f ? 1.0f : 0.0f;
    }
  }
  return out;
}

Tensor<float> binarize_mask(const Tensor<float>& raw, double threshold) {
  Tensor<float> out(raw.shape());
  const auto t = static_cast<float>(threshold);
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw[i] >= t ? 1.0f : 0.0f;
  return out;
}

ImagePair load_pair(const fs::path& image, const fs::path& mask) {
  const Image8 img = read_image(image);
  const Image8 msk = read_image(mask);
  if (img.width != msk.width || img.height != msk.height) {
    throw DatasetError("image '" + image.string() + "' is " + std::to_string(img.width) + "x" +
                       std::to_string(img.height) + " but mask '" + mask.string() + "' is " +
                       std::to_string(msk.width) + "x" + std::to_string(msk.height));
  }
  return {image_to_tensor(img), binarize_mask(first_channel_to_tensor(msk))};
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  for (Split s : kAllSplits) {
    if (split_name(s) == name) return s;
  }
  throw ConfigError("unknown split '" + std::string(name) + "' (expected train, val or test)");
}

std::size_t DatasetIndex::count(Split s) const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [s](const IndexRecord& r) { return r.split == s; }));
}

std::vector<IndexRecord> DatasetIndex::of(Split s) const {
  std::vector<IndexRecord> out;
  std::copy_if(records.begin(), records.end(), std::back_inserter(out),
               [s](const IndexRecord& r) { return r.split == s; });
  return out;
}

DatasetIndex build_index(const fs::path& prepared_dir) {
  if (!fs::is_directory(prepared_dir)) {
    throw DatasetError("dataset directory '" + prepared_dir.string() + "' does not exist");
  }
  DatasetIndex index;
  for (Split s : kAllSplits) {
    const fs::path dir = prepared_dir / split_name(s);
    if (!fs::exists(dir)) continue;
    for (const SourcePair& p : pair_directory(dir)) {
      index.records.push_back({fs::absolute(p.image), fs::absolute(p.mask), s});
    }
  }
  return index;
}

void write_index(const DatasetIndex& index, const fs::path& file) {
  const fs::path base = fs::absolute(file).parent_path();
  std::ostringstream out;
  for (const IndexRecord& r : index.records) {
    out << relative_to(r.image, base) << '\t' << relative_to(r.mask, base) << '\t' << split_name(r.split) << '\n';
  }
  std::ofstream f(file, std::ios::binary | std::ios::trunc);
  f << out.str();
  if (!f) throw DatasetError("cannot write index '" + file.string() + "'");
}

DatasetIndex read_index(const fs::path& file) {
  std::ifstream f(file, std::ios::binary);
  if (!f) throw DatasetError("cannot open index '" + file.string() + "'");
  const fs::path base = fs::absolute(file).parent_path();
  DatasetIndex index;
  std::set<fs::path> images;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto where = file.string() + ":" + std::to_string(lineno);
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos) {
      throw DatasetError(where + ": expected image<TAB>mask<TAB>split");
    }
    IndexRecord r;
    r.image = (base / line.substr(0, t1)).lexically_normal();
    r.mask = (base / line.substr(t1 + 1, t2 - t1 - 1)).lexically_normal();
    try {
      r.split = parse_split(line.substr(t2 + 1));
    } catch (const ConfigError& e) {
      throw DatasetError(where + ": " + e.what());
    }
    for (const fs::path& p : {r.image, r.mask}) {
      if (!fs::is_regular_file(p)) throw DatasetError(where + ": file '" + p.string() + "' does not exist");
    }
    if (!images.insert(r.image).second) {
      throw DatasetError(where + ": duplicate image '" + r.image.string() + "'");
    }
    index.records.push_back(std::move(r));
  }
  return index;
}

std::vector<ImagePair> load_split(const DatasetIndex& index, Split split) {
  std::vector<ImagePair> out;
  for (const IndexRecord& r : index.records) {
    if (r.split != split) continue;
    out.push_back(load_pair(r.image, r.mask));
    const Shape& first = out.front().image.shape();
    if (out.back().image.shape() != first) {
      throw DatasetError("image '" + r.image.string() + "' has shape " + out.back().image.shape().str() +
                         ", other images in split '" + std::string(split_name(split)) + "' have " + first.str());
    }
  }
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  ShuffleRng rng = seeded(seed, epoch);
  for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[below(rng, i)]);
  return order;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, std::size_t batch, std::uint64_t seed,
                                                    std::uint64_t epoch) {
  if (batch == 0) throw std::invalid_argument("batch size must be positive");
  const auto order = epoch_order(count, seed, epoch);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < count; i += batch) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(count, i + batch)));
  }
  return out;
}

Batch make_batch(std::span<const ImagePair> pairs, std::span<const std::size_t> members) {
  std::vector<const Tensor<float>*> images;
  std::vector<const Tensor<float>*> masks;
  for (std::size_t i : members) {
    if (i >= pairs.size()) throw std::out_of_range("batch member " + std::to_string(i) + " out of range");
    images.push_back(&pairs[i].image);
    masks.push_back(&pairs[i].mask);
  }
  return {stack_batch<float>(images), stack_batch<float>(masks)};
}

BatchIterator::BatchIterator(std::span<const ImagePair> pairs, std::size_t batch, std::uint64_t seed,
                             std::uint64_t epoch)
    : pairs_(pairs), batches_(epoch_batches(pairs.size(), batch, seed, epoch)) {}

bool BatchIterator::next(Batch& out) {
  if (pos_ >= batches_.size()) return false;
  out = make_batch(pairs_, batches_[pos_++]);
  return true;
}

std::vector<SynthSample> synth_generate(std::size_t n, std::size_t size, std::uint64_t seed) {
  if (size == 0 || size % 8 != 0) {
    throw ShapeError("synthetic image size must be a positive multiple of 8, got " + std::to_string(size));
  }
  const std::size_t min_side = std::max<std::size_t>(1, size / 10);
  const std::size_t max_side = std::max(min_side, size / 4);
  std::vector<SynthSample> out;
  out.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    ShuffleRng rng = seeded(seed, s);
    SynthSample sample;
    sample.pair.image = Tensor<float>({1, 3, size, size});
    sample.pair.mask = Tensor<float>({1, 1, size, size});
    for (float& v : sample.pair.image.data()) v = static_cast<float>(uniform_in(rng, 0.0, 0.4));
    const std::size_t count = 1 + below(rng, 5);
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t h = min_side + below(rng, max_side - min_side + 1);
      const std::size_t w = min_side + below(rng, max_side - min_side + 1);
      const std::size_t y0 = below(rng, size - h + 1);
      const std::size_t x0 = below(rng, size - w + 1);
      sample.rects.push_back({y0, x0, y0 + h, x0 + w});
    }
    for (const Rect& r : sample.rects) {
      for (std::size_t y = r.y0; y < r.y1; ++y) {
        for (std::size_t x = r.x0; x < r.x1; ++x) {
          sample.pair.mask.at(0, 0, y, x) = 1.0f;
          for (std::size_t ch = 0; ch < 3; ++ch) {
            sample.pair.image.at(0, ch, y, x) = static_cast<float>(uniform_in(rng, 0.7, 1.0));
          }
        }
      }
    }
    out.push_back(std::move(sample));
  }
  return out;
}

std::vector<IndexRecord> write_synthetic_split(std::span<const SynthSample> samples, const fs::path& dir, Split split,
                                               const std::string& prefix) {
  const fs::path images = dir / split_name(split) / "images";
  const fs::path masks = dir / split_name(split) / "masks";
  fs::create_directories(images);
  fs::create_directories(masks);
  std::vector<IndexRecord> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string name = prefix + std::to_string(i) + ".png";
    write_image(images / name, tensor_to_image(samples[i].pair.image));
    write_image(masks / name, mask_to_image(samples[i].pair.mask));
    out.push_back({fs::absolute(images / name), fs::absolute(masks / name), split});
  }
  return out;
}

std::vector<std::string> PrepareConfig::violations() const {
  std::vector<std::string> out;
  if (tile_size == 0) out.push_back("tile-size must be positive");
  if (target_size == 0 || target_size % 8 != 0) {
    out.push_back("target-size must be a positive multiple of 8, got " + std::to_string(target_size));
  }
  if (tile_size < target_size) {
    out.push_back("tile-size " + std::to_string(tile_size) + " is smaller than target-size " +
                  std::to_string(target_size) + " (upscaling is not supported)");
  }
  if (!(min_fg >= 0.0 && min_fg < max_fg && max_fg <= 1.0)) {
    out.push_back("foreground bounds must satisfy 0 <= min-fg < max-fg <= 1");
  }
  if (input_dir.empty()) out.push_back("input-dir is required");
  if (output_dir.empty()) out.push_back("output-dir is required");
  return out;
}

PrepareSummary prepare_dataset(const PrepareConfig& config) {
  if (const auto v = config.violations(); !v.empty()) {
    std::string msg = "invalid prepare configuration:";
    for (const auto& s : v) msg += "\n  " + s;
    throw ConfigError(msg);
  }
  if (!fs::is_directory(config.input_dir)) {
    throw DatasetError("input directory '" + config.input_dir.string() + "' does not exist");
  }

  std::array<std::vector<SourcePair>, 3> sources;
  bool any_split = false;
  for (Split s : kAllSplits) {
    const fs::path dir = config.input_dir / split_name(s);
    if (!fs::exists(dir)) continue;
    any_split = true;
    sources[static_cast<std::size_t>(s)] = pair_directory(dir);
  }
  if (!any_split) {
    throw DatasetError("input directory '" + config.input_dir.string() +
                       "' has none of the split directories train/, val/, test/");
  }
  std::size_t total = 0;
  for (const auto& list : sources) {
    total += list.size();
    for (const SourcePair& p : list) {
      const Image8 img = read_image(p.image);
      const Image8 msk = read_image(p.mask);
      if (img.width != msk.width || img.height != msk.height) {
        throw DatasetError("mask '" + p.mask.string() + "' does not match the size of image '" + p.image.string() +
                           "'");
      }
      if (img.width % config.tile_size != 0 || img.height % config.tile_size != 0) {
        throw DatasetError("image '" + p.image.string() + "' is " + std::to_string(img.width) + "x" +
                           std::to_string(img.height) + ", not divisible into " +
                           std::to_string(config.tile_size) + "-pixel tiles");
      }
    }
  }
  if (total == 0) throw DatasetError("no image/mask pairs found under '" + config.input_dir.string() + "'");

  const fs::path index_file = config.output_dir / "index.tsv";
  const fs::path reject_file = config.output_dir / "rejected.tsv";
  if (fs::exists(config.output_dir) && !fs::is_empty(config.output_dir)) {
    if (!config.overwrite) {
      throw DatasetError("output directory '" + config.output_dir.string() +
                         "' is not empty; pass --overwrite to replace it");
    }
    for (Split s : kAllSplits) fs::remove_all(config.output_dir / split_name(s));
    fs::remove(index_file);
    fs::remove(reject_file);
  }

  PrepareSummary summary;
  DatasetIndex index;
  std::ostringstream rejected;
  for (Split s : kAllSplits) {
    const auto si = static_cast<std::size_t>(s);
    if (sources[si].empty()) continue;
    const fs::path img_dir = config.output_dir / split_name(s) / "images";
    const fs::path mask_dir = config.output_dir / split_name(s) / "masks";
    fs::create_directories(img_dir);
    fs::create_directories(mask_dir);
    for (const SourcePair& p : sources[si]) {
      ++summary.sources[si];
      const ImagePair pair = load_pair(p.image, p.mask);
      const auto tiles = tile_image(pair, config.tile_size);
      const std::size_t cols = pair.image.w() / config.tile_size;
      const FilterResult fr = filter_tiles(tiles, config.min_fg, config.max_fg);
      auto tile_name = [&](std::size_t i) {
        return p.image.stem().string() + "_r" + std::to_string(i / cols) + "c" + std::to_string(i % cols) + ".png";
      };
      for (std::size_t i : fr.kept) {
        const ImagePair out = resize_pair(tiles[i], config.target_size, config.target_size);
        const std::string name = tile_name(i);
        write_image(img_dir / name, tensor_to_image(out.image));
        write_image(mask_dir / name, mask_to_image(out.mask));
        index.records.push_back({fs::absolute(img_dir / name), fs::absolute(mask_dir / name), s});
        ++summary.kept[si];
      }
      for (const TileRejection& r : fr.rejected) {
        const std::string name = tile_name(r.index);
        const std::string prefix = std::string(split_name(s)) + "/";
        rejected << prefix << "images/" << name << '\t' << prefix << "masks/" << name << '\t' << split_name(s) << '\t'
                 << format_float(r.fraction) << '\n';
        ++summary.rejected[si];
      }
    }
  }
  write_index(index, index_file);
  std::ofstream rf(reject_file, std::ios::binary | std::ios::trunc);
  rf << rejected.str();
  if (!rf) throw DatasetError("cannot write '" + reject_file.string() + "'");
  return summary;
}

}  // namespace lmnet
