#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "gccvit/image.hpp"
#include "gccvit/tensor.hpp"

namespace gccvit {

struct ChannelPlanes {
  Tensor red;    // H×W
  Tensor green;  // H×W
  Tensor blue;   // H×W
};

ChannelPlanes split_channels(const RgbImage& img);
RgbImage merge_channels(const ChannelPlanes& planes);

/// Green chromatic coordinate g / (r + g + b); 1/3 for a black pixel.
/// Throws DomainError for negative channel values.
float gcc_pixel(float r, float g, float b);

/// Spatial mean of the per-pixel GCC; always within [0, 1].
float gcc_image(const RgbImage& img);

enum class HealthGroup { kHealthy, kDiseased };

/// Healthy when the class name contains "healthy"; nullopt for background classes.
std::optional<HealthGroup> health_group(const std::string& class_name);

/// Box-plot summary of one group. `summary` is empty when the group had no images.
struct GccGroupStats {
  std::string group;
  std::size_t count = 0;
  struct Summary {
    double mean, median, q1, q3, min, max;
  };
  std::optional<Summary> summary;
};

struct GccStats {
  std::vector<GccGroupStats> groups;
  const GccGroupStats* find(const std::string& group) const;
};

enum class GccGrouping { kHealth, kClass, kBoth };

struct LabeledGcc {
  std::size_t class_index;
  double gcc;
};

/// Per-group summaries. Order of `values` does not affect the result.
GccStats gcc_stats(std::span<const LabeledGcc> values, const std::vector<std::string>& class_names,
                   GccGrouping grouping);

/// Summary of a single sample; quartiles by linear interpolation between order statistics.
GccGroupStats summarize_group(std::string group, std::vector<double> values);

/// CSV with header `group,n,mean,median,q1,q3,min,max`; absent statistics are empty cells.
void write_gcc_stats_csv(std::ostream& os, const GccStats& stats);

}  // namespace gccvit
