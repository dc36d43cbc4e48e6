#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace gccvit {

/// H×W×3 image, channel order R, G, B, values in [0, 1], interleaved row-major.
class RgbImage {
 public:
  RgbImage() = default;
  RgbImage(std::size_t height, std::size_t width, float fill = 0.0f);
  /// Throws DomainError if any value lies outside [0, 1] and DimensionError on size mismatch.
  RgbImage(std::size_t height, std::size_t width, std::vector<float> pixels);

  /// 8-bit interleaved RGB rescaled by 1/255.
  static RgbImage from_bytes(std::size_t height, std::size_t width, std::span<const std::uint8_t> rgb);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t pixel_count() const { return height_ * width_; }
  bool empty() const { return pixels_.empty(); }

  float at(std::size_t y, std::size_t x, std::size_t c) const { return pixels_[(y * width_ + x) * 3 + c]; }
  /// Writes a value clamped to [0, 1].
  void set(std::size_t y, std::size_t x, std::size_t c, float v);

  std::span<const float> pixels() const { return pixels_; }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<float> pixels_;
};

/// Bilinear resample to size×size (pixel-centre aligned). Returns a copy when already that size.
RgbImage resize_bilinear(const RgbImage& img, std::size_t height, std::size_t width);

}  // namespace gccvit
