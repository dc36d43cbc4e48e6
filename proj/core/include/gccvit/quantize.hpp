#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "gccvit/autodiff.hpp"
#include "gccvit/classifier.hpp"
#include "gccvit/tensor.hpp"

namespace gccvit {

struct LabeledImage;

enum class Granularity : std::uint8_t { kPerTensor = 0, kPerChannel = 1 };

/// Symmetric int8 tensor. `scales` has one entry (per-tensor) or one per last-axis column
/// (per-channel). Values stay within [-127, 127]; zero_point is 0 for weights.
struct QuantizedTensor {
  Shape shape;
  std::vector<std::int8_t> data;
  std::vector<float> scales;
  std::int32_t zero_point = 0;

  float scale() const { return scales.front(); }
  bool per_channel() const { return scales.size() > 1; }
  float scale_for(std::size_t flat_index) const {
    return per_channel() ? scales[flat_index % shape.back()] : scales.front();
  }
  /// Throws DimensionError/DomainError when the payload, shape and scales disagree.
  void validate() const;

  friend bool operator==(const QuantizedTensor&, const QuantizedTensor&) = default;
};

/// scale = max|w| / 127 (per tensor or per column); q = round(w / scale) clamped to ±127.
/// An all-zero tensor (or column) gets scale 1 and a zero payload.
QuantizedTensor quantize_tensor(const Tensor& w, Granularity granularity = Granularity::kPerTensor);

/// w' = scale · (q − zero_point)
Tensor dequantize_tensor(const QuantizedTensor& q);

/// Asymmetric per-tensor int8 quantisation of an activation; the range always contains 0.
struct QuantizedActivation {
  std::vector<std::int8_t> data;
  float scale = 1.0f;
  std::int32_t zero_point = 0;
};

/// nullopt when the activation is constant (max == min), in which case it is left in float.
std::optional<QuantizedActivation> quantize_activation(const Tensor& x);

/// x·W with x quantised on the fly, integer accumulation and one rescale by scale_x·scale_w.
Tensor quantized_matmul(const Tensor& x, const QuantizedTensor& w);

/// Inference-only op: quantized_matmul(x, w) + bias. Calling backward through it throws.
Var quantized_linear(Var x, const QuantizedTensor& w, Var bias);

/// Number of int32 accumulator saturations since process start (diagnostic).
std::uint64_t accumulator_saturations();

struct QuantProvenance {
  std::string source_hash;  // hex FNV-1a of the float container bytes
  std::string quantized_on;  // ISO date
  friend bool operator==(const QuantProvenance&, const QuantProvenance&) = default;
};

using QuantizedParams = ModelParamsT<QuantizedTensor, Tensor>;

/// Matrix slots (projections, dense layers, positional table) in int8; vectors in float32.
struct QuantizedModel {
  VitConfig vit;
  HeadConfig head;
  std::vector<std::string> class_names;
  QuantizedParams params;
  std::optional<SplitRecord> split;
  QuantProvenance provenance;
  Granularity granularity = Granularity::kPerTensor;
};

QuantizedModel quantize_model(const Model& model, Granularity granularity = Granularity::kPerTensor,
                              QuantProvenance provenance = {});
/// Float model whose matrices are the dequantised int8 weights.
Model dequantize_model(const QuantizedModel& qm);

ModelVars bind(Tape& tape, const QuantizedModel& qm);

/// Class probabilities through the int8 path.
Tensor quantized_forward(const QuantizedModel& qm, const RgbImage& img);

struct QuantReport {
  double float_accuracy = 0.0;
  double quantized_accuracy = 0.0;
  double accuracy_delta = 0.0;  // float − quantized
  double top1_agreement = 0.0;
  std::size_t samples = 0;
  std::size_t float_bytes = 0;
  std::size_t quantized_bytes = 0;
  double size_ratio = 0.0;  // float_bytes / quantized_bytes
};

/// Paired evaluation on `test`; byte counts come from the serialised containers.
QuantReport compare(const Model& float_model, const QuantizedModel& qm, const std::vector<LabeledImage>& test);

void write_quant_report_csv(std::ostream& os, const QuantReport& r);
void write_quant_report_text(std::ostream& os, const QuantReport& r);

}  // namespace gccvit
