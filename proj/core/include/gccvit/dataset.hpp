#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "gccvit/image.hpp"

namespace gccvit {

/// One labelled item. Either `path` points at an image file decoded on demand, or `image`
/// already holds the pixels (generated corpora, tests).
struct Sample {
  std::filesystem::path path;
  std::size_t label = 0;
  std::shared_ptr<const RgbImage> image;
};

struct Dataset {
  std::vector<Sample> items;
  std::vector<std::string> class_names;

  std::size_t num_classes() const { return class_names.size(); }
  std::vector<std::size_t> class_counts() const;
  /// Every label < num_classes and every class has at least one item.
  void validate() const;
};

struct LabeledImage {
  RgbImage image;
  std::size_t label = 0;
};

}  // namespace gccvit
