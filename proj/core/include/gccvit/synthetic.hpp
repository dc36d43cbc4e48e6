#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gccvit/dataset.hpp"
#include "gccvit/image.hpp"
#include "gccvit/random.hpp"

namespace gccvit {

/// Mean disk colour and class name of one synthetic class.
struct BlobClass {
  std::string name;
  float r, g, b;
};

/// Three leaf-like classes: brown lesion, green healthy leaf, red spot.
std::vector<BlobClass> default_blob_classes();

struct SyntheticSpec {
  std::size_t per_class = 10;
  std::size_t image_size = 32;
  std::uint64_t seed = 0;
  float noise = 0.06f;  // uniform texture noise amplitude
  std::vector<BlobClass> classes = default_blob_classes();
};

/// A textured disk of the class colour at a random position and radius on a dark neutral
/// background.
RgbImage render_blob(const BlobClass& cls, std::size_t size, float noise, Rng& rng);

/// In-memory dataset, classes in the order given by the spec, items grouped by class.
Dataset make_synthetic_dataset(const SyntheticSpec& spec);

/// Writes `<root>/<class>/<nnn>.png`. Returns the number of images written.
std::size_t write_synthetic_corpus(const std::filesystem::path& root, const SyntheticSpec& spec);

}  // namespace gccvit
