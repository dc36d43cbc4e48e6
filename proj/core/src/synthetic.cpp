#include "gccvit/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <memory>

#include "gccvit/errors.hpp"
#include "gccvit/image_io.hpp"

namespace gccvit {

std::vector<BlobClass> default_blob_classes() {
  return {
      {"brown_blight", 0.42f, 0.28f, 0.10f},
      {"green_healthy", 0.24f, 0.62f, 0.20f},
      {"red_spot", 0.80f, 0.16f, 0.16f},
  };
}

RgbImage render_blob(const BlobClass& cls, std::size_t size, float noise, Rng& rng) {
  const double s = static_cast<double>(size);
  const double radius = uniform(rng, 0.25 * s, 0.40 * s);
  const double cy = uniform(rng, radius * 0.8, s - radius * 0.8);
  const double cx = uniform(rng, radius * 0.8, s - radius * 0.8);
  const float background = 0.22f;
  RgbImage img(size, size);
  const float base[3] = {cls.r, cls.g, cls.b};
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double dy = static_cast<double>(y) + 0.5 - cy;
      const double dx = static_cast<double>(x) + 0.5 - cx;
      const bool inside = dy * dy + dx * dx <= radius * radius;
      // One shared brightness jitter keeps the hue of each pixel close to the class colour.
      const auto shade = static_cast<float>(uniform(rng, -noise, noise));
      for (std::size_t c = 0; c < 3; ++c) {
        const float v = inside ? base[c] + shade + static_cast<float>(uniform(rng, -noise, noise)) * 0.5f
                               : background + shade * 0.5f;
        img.set(y, x, c, v);
      }
    }
  }
  return img;
}

Dataset make_synthetic_dataset(const SyntheticSpec& spec) {
  if (spec.classes.empty() || spec.per_class == 0 || spec.image_size == 0) {
    throw ConfigError("synthetic corpus needs at least one class, one image per class and a non-zero size");
  }
  Rng rng(spec.seed);
  Dataset ds;
  for (std::size_t c = 0; c < spec.classes.size(); ++c) {
    ds.class_names.push_back(spec.classes[c].name);
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      auto img = std::make_shared<const RgbImage>(render_blob(spec.classes[c], spec.image_size, spec.noise, rng));
      ds.items.push_back(Sample{{}, c, std::move(img)});
    }
  }
  return ds;
}

std::size_t write_synthetic_corpus(const std::filesystem::path& root, const SyntheticSpec& spec) {
  const Dataset ds = make_synthetic_dataset(spec);
  std::vector<std::size_t> index(ds.num_classes(), 0);
  for (const auto& item : ds.items) {
    const auto dir = root / ds.class_names[item.label];
    std::filesystem::create_directories(dir);
    char name[32];
    std::snprintf(name, sizeof name, "%03zu.png", index[item.label]++);
    write_png(dir / name, *item.image);
  }
  return ds.items.size();
}

}  // namespace gccvit
