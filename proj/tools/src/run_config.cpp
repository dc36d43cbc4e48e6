#include "gccvit/cli/run_config.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <istream>

#include "gccvit/errors.hpp"

namespace gccvit::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  return static_cast<std::size_t>(parse_u64(key, v));
}

float parse_float(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const float out = std::strtof(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE || !std::isfinite(out)) {
    throw ConfigError("'" + key + "' expects a finite number, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE || !std::isfinite(out)) {
    throw ConfigError("'" + key + "' expects a finite number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + v + "'");
}

// Shortest text that reads back to the same value.
template <class F>
std::string fmt(F v) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string fmt(bool v) { return v ? "true" : "false"; }

struct Entry {
  const char* key;
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SIZE_ENTRY(name, field)                                                                \
  Entry {                                                                                      \
    name, [](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_size(k, v); }, \
        [](const RunConfig& c) { return std::to_string(c.field); }                             \
  }
#define FLOAT_ENTRY(name, field)                                                                \
  Entry {                                                                                       \
    name, [](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_float(k, v); }, \
        [](const RunConfig& c) { return fmt(c.field); }                                        \
  }
#define BOOL_ENTRY(name, field)                                                                \
  Entry {                                                                                      \
    name, [](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_bool(k, v); }, \
        [](const RunConfig& c) { return fmt(c.field); }                                        \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      SIZE_ENTRY("image_size", vit.image_size),
      SIZE_ENTRY("patch_size", vit.patch_size),
      SIZE_ENTRY("projection_dim", vit.projection_dim),
      SIZE_ENTRY("num_heads", vit.num_heads),
      SIZE_ENTRY("num_layers", vit.num_layers),
      SIZE_ENTRY("mlp_hidden", vit.mlp_hidden),
      FLOAT_ENTRY("layer_norm_eps", vit.layer_norm_eps),
      SIZE_ENTRY("head_hidden", head.hidden),
      FLOAT_ENTRY("l2_strength", head.l2_strength),
      Entry{"head_loss",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              if (v == "softmax") {
                c.head.loss = HeadLoss::kSoftmax;
              } else if (v == "hinge") {
                c.head.loss = HeadLoss::kHinge;
              } else {
                throw ConfigError("'" + k + "' expects softmax or hinge, got '" + v + "'");
              }
            },
            [](const RunConfig& c) { return std::string(c.head.loss == HeadLoss::kSoftmax ? "softmax" : "hinge"); }},
      SIZE_ENTRY("batch_size", train.batch_size),
      SIZE_ENTRY("epochs", train.epochs),
      FLOAT_ENTRY("learning_rate", train.adam.learning_rate),
      FLOAT_ENTRY("adam_beta1", train.adam.beta1),
      FLOAT_ENTRY("adam_beta2", train.adam.beta2),
      FLOAT_ENTRY("adam_epsilon", train.adam.epsilon),
      FLOAT_ENTRY("label_smoothing", train.label_smoothing),
      Entry{"split_ratio",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.train.split_ratio = parse_double(k, v); },
            [](const RunConfig& c) { return fmt(c.train.split_ratio); }},
      Entry{"seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.seed = parse_u64(k, v); },
            [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      BOOL_ENTRY("augment", train.augment),
      FLOAT_ENTRY("rotation_degrees", train.augmentation.rotation_degrees),
      FLOAT_ENTRY("width_shift", train.augmentation.width_shift),
      FLOAT_ENTRY("height_shift", train.augmentation.height_shift),
      FLOAT_ENTRY("shear", train.augmentation.shear),
      FLOAT_ENTRY("zoom", train.augmentation.zoom),
      BOOL_ENTRY("horizontal_flip", train.augmentation.horizontal_flip),
      BOOL_ENTRY("vertical_flip", train.augmentation.vertical_flip),
      FLOAT_ENTRY("rescale", train.augmentation.rescale),
      Entry{"quant_granularity",
            [](RunConfig& c, const std::string& k, const std::string& v) {
              if (v == "per_tensor") {
                c.granularity = Granularity::kPerTensor;
              } else if (v == "per_channel") {
                c.granularity = Granularity::kPerChannel;
              } else {
                throw ConfigError("'" + k + "' expects per_tensor or per_channel, got '" + v + "'");
              }
            },
            [](const RunConfig& c) {
              return std::string(c.granularity == Granularity::kPerTensor ? "per_tensor" : "per_channel");
            }},
  };
  return table;
}

#undef SIZE_ENTRY
#undef FLOAT_ENTRY
#undef BOOL_ENTRY

}  // namespace

void RunConfig::validate() const {
  vit.validate();
  HeadConfig h = head;
  h.num_classes = std::max<std::size_t>(h.num_classes, 2);
  h.validate();
  train.validate();
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& table = entries();
  const auto it = std::find_if(table.begin(), table.end(), [&](const Entry& e) { return key == e.key; });
  if (it == table.end()) throw ConfigError("unknown configuration key '" + key + "'");
  it->set(cfg, key, value);
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form key=value");
  apply_setting(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void parse_config(std::istream& in, RunConfig& cfg, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    try {
      apply_setting(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

RunConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  RunConfig cfg;
  parse_config(in, cfg, path.string());
  return cfg;
}

void write_config(std::ostream& os, const RunConfig& cfg) {
  for (const auto& e : entries()) os << e.key << " = " << e.get(cfg) << '\n';
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& e : entries()) keys.emplace_back(e.key);
  return keys;
}

}  // namespace gccvit::cli
