#include "gccvit/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gccvit/errors.hpp"

namespace gccvit {

RgbImage::RgbImage(std::size_t height, std::size_t width, float fill)
    : RgbImage(height, width, std::vector<float>(height * width * 3, fill)) {}

RgbImage::RgbImage(std::size_t height, std::size_t width, std::vector<float> pixels)
    : height_(height), width_(width), pixels_(std::move(pixels)) {
  if (height_ == 0 || width_ == 0) throw DimensionError("image dimensions must be positive");
  if (pixels_.size() != height_ * width_ * 3) {
    throw DimensionError("image " + std::to_string(height_) + "x" + std::to_string(width_) + " expects " +
                         std::to_string(height_ * width_ * 3) + " values, got " + std::to_string(pixels_.size()));
  }
  for (float v : pixels_) {
    if (!(v >= 0.0f && v <= 1.0f)) throw DomainError("pixel value outside [0, 1]: " + std::to_string(v));
  }
}

RgbImage RgbImage::from_bytes(std::size_t height, std::size_t width, std::span<const std::uint8_t> rgb) {
  std::vector<float> px(rgb.size());
  for (std::size_t i = 0; i < rgb.size(); ++i) px[i] = static_cast<float>(rgb[i]) / 255.0f;
  return RgbImage(height, width, std::move(px));
}

void RgbImage::set(std::size_t y, std::size_t x, std::size_t c, float v) {
  pixels_[(y * width_ + x) * 3 + c] = std::clamp(v, 0.0f, 1.0f);
}

RgbImage resize_bilinear(const RgbImage& img, std::size_t height, std::size_t width) {
  if (img.height() == height && img.width() == width) return img;
  RgbImage out(height, width);
  const double sy = static_cast<double>(img.height()) / static_cast<double>(height);
  const double sx = static_cast<double>(img.width()) / static_cast<double>(width);
  const auto max_y = static_cast<double>(img.height() - 1);
  const auto max_x = static_cast<double>(img.width() - 1);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, max_y);
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, img.height() - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, max_x);
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, img.width() - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = img.at(y0, x0, c) * (1.0 - wx) + img.at(y0, x1, c) * wx;
        const double bottom = img.at(y1, x0, c) * (1.0 - wx) + img.at(y1, x1, c) * wx;
        out.set(y, x, c, static_cast<float>(top * (1.0 - wy) + bottom * wy));
      }
    }
  }
  return out;
}

}  // namespace gccvit
