#pragma once
// Float RGB image in HWC layout plus 8-bit PNG round-tripping through libpng.

#include "lmim/common.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

namespace lmim {

inline constexpr int kImageHeight = 32;
inline constexpr int kImageWidth = 128;
inline constexpr int kImageChannels = 3;

struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> pixels;  // HWC, values in [0, 1]

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

  static Image standard(float fill = 0.0f) {
    return Image(kImageHeight, kImageWidth, kImageChannels, fill);
  }

  float& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  float at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }

  bool operator==(const Image& o) const = default;
};

/// Mean per-pixel L2 distance: average over pixels of the channel-vector norm.
inline double mean_pixel_l2(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw DimensionError("mean_pixel_l2: shape mismatch");
  double acc = 0.0;
  const int n = a.height * a.width;
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int c = 0; c < a.channels; ++c) {
      const double d = static_cast<double>(a.pixels[i * a.channels + c]) - b.pixels[i * a.channels + c];
      s += d * d;
    }
    acc += std::sqrt(s);
  }
  return acc / n;
}

inline std::uint8_t to_u8(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

/// Writes an 8-bit RGB PNG. Channels other than 3 are rejected.
inline void write_png(const Image& img, const std::filesystem::path& path) {
  if (img.channels != 3) throw DimensionError("write_png: expected 3 channels");
  std::vector<std::uint8_t> bytes(img.pixels.size());
  std::transform(img.pixels.begin(), img.pixels.end(), bytes.begin(), to_u8);

  png_image pimg;
  std::memset(&pimg, 0, sizeof(pimg));
  pimg.version = PNG_IMAGE_VERSION;
  pimg.width = static_cast<png_uint_32>(img.width);
  pimg.height = static_cast<png_uint_32>(img.height);
  pimg.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&pimg, path.string().c_str(), 0, bytes.data(), 0, nullptr)) {
    const std::string msg = pimg.message;
    png_image_free(&pimg);
    throw IoError(path.string() + ": cannot write PNG (" + msg + ")");
  }
}

inline Image read_png(const std::filesystem::path& path) {
  png_image pimg;
  std::memset(&pimg, 0, sizeof(pimg));
  pimg.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pimg, path.string().c_str())) {
    throw IoError(path.string() + ": cannot read PNG (" + std::string(pimg.message) + ")");
  }
  pimg.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(pimg));
  if (!png_image_finish_read(&pimg, nullptr, bytes.data(), 0, nullptr)) {
    const std::string msg = pimg.message;
    png_image_free(&pimg);
    throw IoError(path.string() + ": cannot decode PNG (" + msg + ")");
  }
  Image img(static_cast<int>(pimg.height), static_cast<int>(pimg.width), 3);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = bytes[i] / 255.0f;
  return img;
}

}  // namespace lmim
