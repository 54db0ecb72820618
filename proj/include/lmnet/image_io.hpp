#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "lmnet/tensor.hpp"

namespace lmnet {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Interleaved 8-bit pixels, 1 (gray) or 3 (RGB) channels.
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;
};

/// Decodes .png (any bit depth, converted to 8-bit gray or RGB), .ppm (P6)
/// and .pgm (P5) by extension.
Image8 read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Image8& image);

bool is_image_file(const std::filesystem::path& path);

/// (1, 3, h, w) in [0, 1]; gray sources are replicated across channels.
Tensor<float> image_to_tensor(const Image8& image);
/// (1, 1, h, w) in [0, 1] from the first channel.
Tensor<float> first_channel_to_tensor(const Image8& image);
/// Accepts (1, 1, h, w) or (1, 3, h, w); values are clamped to [0, 1] and
/// rounded to the nearest 8-bit level.
Image8 tensor_to_image(const Tensor<float>& t);

}  // namespace lmnet
