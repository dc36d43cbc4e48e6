#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "gccvit/dataset.hpp"
#include "gccvit/image.hpp"

namespace gccvit {

class ImageDecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DecodeInfo {
  bool grayscale = false;
};

/// PNG or JPEG (sniffed from the file signature) to RGB bytes × `rescale`, clamped to [0, 1].
/// Grayscale sources are replicated to three channels and flagged in `info`.
RgbImage decode_image(const std::filesystem::path& path, float rescale = 1.0f / 255.0f, DecodeInfo* info = nullptr);

/// decode_image followed by a bilinear resize to size×size.
RgbImage load_image(const std::filesystem::path& path, std::size_t size, float rescale = 1.0f / 255.0f,
                    DecodeInfo* info = nullptr);

/// 8-bit RGB PNG.
void write_png(const std::filesystem::path& path, const RgbImage& img);

/// True when the file starts with a PNG or JPEG signature.
bool looks_like_image(const std::filesystem::path& path);

struct ScanStats {
  std::size_t skipped_files = 0;
};

/// One subdirectory per class, class index = lexicographic rank of the directory name,
/// items sorted by file name. Pixels are not decoded here.
/// Throws DatasetError for a missing/empty root or a class without images.
Dataset load_dataset(const std::filesystem::path& root, ScanStats* stats = nullptr);

struct DecodeStats {
  std::size_t decoded = 0;
  std::size_t corrupt = 0;
  std::size_t grayscale = 0;
  std::vector<std::string> corrupt_files;
};

/// Decodes (or resizes in-memory) every item to size×size. Corrupt files are skipped and counted.
std::vector<LabeledImage> materialize(const Dataset& ds, std::size_t size, float rescale = 1.0f / 255.0f,
                                      DecodeStats* stats = nullptr);

}  // namespace gccvit
