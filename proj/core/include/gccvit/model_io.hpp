#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "gccvit/classifier.hpp"
#include "gccvit/quantize.hpp"

namespace gccvit {

inline constexpr std::uint32_t kContainerVersion = 1;

/// Structural problems found while validating a container, before any tensor is materialised.
class ContainerError : public std::runtime_error {
 public:
  enum class Kind {
    kNotAContainer,       // bad magic
    kUnsupportedVersion,  // version field differs from kContainerVersion
    kTruncated,           // a field or tensor extends past the end of the data
    kOverlappingTensors,  // two payload ranges intersect
    kInvalidRecord,       // malformed manifest entry, unknown dtype, inconsistent lengths
    kSchemaMismatch,      // tensor names/shapes do not match the stored configuration
  };

  ContainerError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ContainerError(std::uint32_t found, std::uint32_t supported);

  Kind kind() const { return kind_; }
  std::uint32_t found_version() const { return found_version_; }
  std::uint32_t supported_version() const { return supported_version_; }

 private:
  Kind kind_;
  std::uint32_t found_version_ = 0;
  std::uint32_t supported_version_ = 0;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DType : std::uint8_t { kF32 = 0, kI8 = 1 };

/// Manifest entry as stored in the file.
struct TensorRecord {
  std::string name;
  DType dtype = DType::kF32;
  Shape shape;
  std::uint64_t offset = 0;  // absolute file offset
  std::uint64_t length = 0;  // bytes
  std::vector<float> scales;  // i8 only
  std::int32_t zero_point = 0;
};

std::vector<std::uint8_t> serialize_model(const Model& model);
std::vector<std::uint8_t> serialize_model(const QuantizedModel& model);

using LoadedModel = std::variant<Model, QuantizedModel>;

/// Validates the whole manifest, then materialises a float or quantized model depending on
/// whether any record carries the i8 tag.
LoadedModel deserialize_model(std::span<const std::uint8_t> bytes);

/// Manifest only (for inspection tools and tests).
std::vector<TensorRecord> read_manifest(std::span<const std::uint8_t> bytes);

/// Writes the container; returns the number of bytes written.
std::size_t save_model(const Model& model, const std::filesystem::path& path);
std::size_t save_model(const QuantizedModel& model, const std::filesystem::path& path);
LoadedModel load_model(const std::filesystem::path& path);

/// Float model from either container kind (quantized weights are dequantised).
Model load_float_model(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::string to_hex(std::uint64_t v);

}  // namespace gccvit
