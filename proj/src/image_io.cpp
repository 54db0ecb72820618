#include "lmnet/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>

namespace lmnet {

namespace {

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

Image8 read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw ImageError("cannot decode PNG '" + path.string() + "': " + img.message);
  }
  const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image8 out;
  out.width = img.width;
  out.height = img.height;
  out.channels = color ? 3 : 1;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw ImageError("cannot decode PNG '" + path.string() + "': " + msg);
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Image8& image) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw ImageError("cannot write PNG '" + path.string() + "': " + img.message);
  }
}

// Netpbm header token, skipping whitespace and '#' comments.
std::string pnm_token(std::istream& in) {
  std::string tok;
  int ch = in.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    } else if (!std::isspace(ch)) {
      break;
    }
    ch = in.get();
  }
  while (ch != EOF && !std::isspace(ch)) {
    tok.push_back(static_cast<char>(ch));
    ch = in.get();
  }
  return tok;
}

Image8 read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open '" + path.string() + "'");
  const std::string magic = pnm_token(in);
  if (magic != "P5" && magic != "P6") {
    throw ImageError("'" + path.string() + "' is not a binary PGM/PPM (magic '" + magic + "')");
  }
  Image8 out;
  try {
    out.width = std::stoul(pnm_token(in));
    out.height = std::stoul(pnm_token(in));
    if (std::stoul(pnm_token(in)) != 255) throw ImageError("only maxval 255 is supported");
  } catch (const std::logic_error&) {
    throw ImageError("malformed PGM/PPM header in '" + path.string() + "'");
  }
  out.channels = magic == "P6" ? 3 : 1;
  out.pixels.resize(out.width * out.height * out.channels);
  in.read(reinterpret_cast<char*>(out.pixels.data()), static_cast<std::streamsize>(out.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(out.pixels.size())) {
    throw ImageError("truncated pixel data in '" + path.string() + "'");
  }
  return out;
}

void write_pnm(const std::filesystem::path& path, const Image8& image) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ImageError("cannot open '" + path.string() + "' for writing");
  out << (image.channels == 3 ? "P6" : "P5") << "\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw ImageError("write to '" + path.string() + "' failed");
}

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

bool is_image_file(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  return ext == ".png" || ext == ".ppm" || ext == ".pgm";
}

Image8 read_image(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".ppm" || ext == ".pgm") return read_pnm(path);
  throw ImageError("unsupported image format '" + ext + "' for '" + path.string() +
                   "' (convert to PNG, PPM or PGM first)");
}

void write_image(const std::filesystem::path& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw ImageError("cannot write " + std::to_string(image.channels) + "-channel image");
  }
  const std::string ext = lower_extension(path);
  if (ext == ".png") {
    write_png(path, image);
  } else if (ext == ".ppm" || ext == ".pgm") {
    write_pnm(path, image);
  } else {
    throw ImageError("unsupported output format '" + ext + "' for '" + path.string() + "'");
  }
}

Tensor<float> image_to_tensor(const Image8& image) {
  Tensor<float> t({1, 3, image.height, image.width});
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      const std::uint8_t* px = &image.pixels[(y * image.width + x) * image.channels];
      for (std::size_t ch = 0; ch < 3; ++ch) {
        t.at(0, ch, y, x) = static_cast<float>(px[image.channels == 3 ? ch : 0]) / 255.0f;
      }
    }
  }
  return t;
}

Tensor<float> first_channel_to_tensor(const Image8& image) {
  Tensor<float> t({1, 1, image.height, image.width});
  for (std::size_t i = 0; i < image.width * image.height; ++i) {
    t[i] = static_cast<float>(image.pixels[i * image.channels]) / 255.0f;
  }
  return t;
}

Image8 tensor_to_image(const Tensor<float>& t) {
  if (t.n() != 1 || (t.c() != 1 && t.c() != 3)) {
    throw ShapeError("tensor_to_image needs (1,1,h,w) or (1,3,h,w), got " + t.shape().str());
  }
  Image8 img{t.w(), t.h(), t.c(), std::vector<std::uint8_t>(t.size())};
  for (std::size_t y = 0; y < t.h(); ++y) {
    for (std::size_t x = 0; x < t.w(); ++x) {
      for (std::size_t ch = 0; ch < t.c(); ++ch) {
        img.pixels[(y * t.w() + x) * t.c() + ch] = to_byte(t.at(0, ch, y, x));
      }
    }
  }
  return img;
}

}  // namespace lmnet
