#include "gccvit/chromatic.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <map>

#include "gccvit/errors.hpp"

namespace gccvit {

ChannelPlanes split_channels(const RgbImage& img) {
  const std::size_t h = img.height(), w = img.width();
  ChannelPlanes planes{Tensor({h, w}), Tensor({h, w}), Tensor({h, w})};
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      planes.red.at(y, x) = img.at(y, x, 0);
      planes.green.at(y, x) = img.at(y, x, 1);
      planes.blue.at(y, x) = img.at(y, x, 2);
    }
  }
  return planes;
}

RgbImage merge_channels(const ChannelPlanes& planes) {
  const auto& shape = planes.red.shape();
  if (shape.size() != 2 || planes.green.shape() != shape || planes.blue.shape() != shape) {
    throw DimensionError("channel planes must be equally sized matrices");
  }
  const std::size_t h = shape[0], w = shape[1];
  std::vector<float> px(h * w * 3);
  for (std::size_t i = 0; i < h * w; ++i) {
    px[i * 3 + 0] = planes.red[i];
    px[i * 3 + 1] = planes.green[i];
    px[i * 3 + 2] = planes.blue[i];
  }
  return RgbImage(h, w, std::move(px));
}

float gcc_pixel(float r, float g, float b) {
  if (r < 0.0f || g < 0.0f || b < 0.0f) throw DomainError("gcc_pixel: channel values must be non-negative");
  const double total = static_cast<double>(r) + g + b;
  if (total == 0.0) return 1.0f / 3.0f;
  return static_cast<float>(g / total);
}

float gcc_image(const RgbImage& img) {
  double acc = 0.0;
  const auto px = img.pixels();
  for (std::size_t i = 0; i < img.pixel_count(); ++i) acc += gcc_pixel(px[i * 3], px[i * 3 + 1], px[i * 3 + 2]);
  const double mean = acc / static_cast<double>(img.pixel_count());
  return static_cast<float>(std::clamp(mean, 0.0, 1.0));
}

std::optional<HealthGroup> health_group(const std::string& class_name) {
  std::string lower(class_name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower.find("background") != std::string::npos) return std::nullopt;
  if (lower.find("healthy") != std::string::npos) return HealthGroup::kHealthy;
  return HealthGroup::kDiseased;
}

const GccGroupStats* GccStats::find(const std::string& group) const {
  for (const auto& g : groups)
    if (g.group == group) return &g;
  return nullptr;
}

namespace {

double quantile_sorted(const std::vector<double>& v, double q) {
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + (v[hi] - v[lo]) * frac;
}

// Pairwise summation over an already-sorted range, so the result depends only on the multiset.
double pairwise_sum(const double* v, std::size_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += v[i];
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(v, half) + pairwise_sum(v + half, n - half);
}

}  // namespace

GccGroupStats summarize_group(std::string group, std::vector<double> values) {
  GccGroupStats out;
  out.group = std::move(group);
  out.count = values.size();
  if (values.empty()) return out;
  std::sort(values.begin(), values.end());
  GccGroupStats::Summary s{};
  s.mean = pairwise_sum(values.data(), values.size()) / static_cast<double>(values.size());
  s.median = quantile_sorted(values, 0.5);
  s.q1 = quantile_sorted(values, 0.25);
  s.q3 = quantile_sorted(values, 0.75);
  s.min = values.front();
  s.max = values.back();
  out.summary = s;
  return out;
}

GccStats gcc_stats(std::span<const LabeledGcc> values, const std::vector<std::string>& class_names,
                   GccGrouping grouping) {
  GccStats stats;
  for (const auto& v : values) {
    if (v.class_index >= class_names.size()) throw IndexError("class index out of range in gcc_stats");
  }
  if (grouping == GccGrouping::kHealth || grouping == GccGrouping::kBoth) {
    std::vector<double> healthy, diseased;
    for (const auto& v : values) {
      const auto g = health_group(class_names[v.class_index]);
      if (!g) continue;
      (*g == HealthGroup::kHealthy ? healthy : diseased).push_back(v.gcc);
    }
    stats.groups.push_back(summarize_group("healthy", std::move(healthy)));
    stats.groups.push_back(summarize_group("diseased", std::move(diseased)));
  }
  if (grouping == GccGrouping::kClass || grouping == GccGrouping::kBoth) {
    std::vector<std::vector<double>> per_class(class_names.size());
    for (const auto& v : values) per_class[v.class_index].push_back(v.gcc);
    for (std::size_t c = 0; c < class_names.size(); ++c) {
      stats.groups.push_back(summarize_group(class_names[c], std::move(per_class[c])));
    }
  }
  return stats;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void write_gcc_stats_csv(std::ostream& os, const GccStats& stats) {
  os << "group,n,mean,median,q1,q3,min,max\n";
  os << std::setprecision(9);
  for (const auto& g : stats.groups) {
    os << csv_field(g.group) << ',' << g.count;
    if (g.summary) {
      const auto& s = *g.summary;
      os << ',' << s.mean << ',' << s.median << ',' << s.q1 << ',' << s.q3 << ',' << s.min << ',' << s.max;
    } else {
      os << ",,,,,,";
    }
    os << '\n';
  }
}

}  // namespace gccvit
