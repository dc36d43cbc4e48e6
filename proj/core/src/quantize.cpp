#include "gccvit/quantize.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <limits>
#include <type_traits>

#include "gccvit/errors.hpp"
#include "gccvit/model_io.hpp"
#include "gccvit/param_visit.hpp"
#include "gccvit/training.hpp"

namespace gccvit {

namespace {

constexpr int kWeightMax = 127;
std::atomic<std::uint64_t> g_saturations{0};

float symmetric_scale(float max_abs) {
  if (max_abs == 0.0f) return 1.0f;
  const float s = static_cast<float>(static_cast<double>(max_abs) / kWeightMax);
  return s > 0.0f ? s : std::numeric_limits<float>::denorm_min();
}

std::int8_t quantize_value(float w, float scale) {
  const double q = std::nearbyint(static_cast<double>(w) / static_cast<double>(scale));
  return static_cast<std::int8_t>(std::clamp(q, -static_cast<double>(kWeightMax), static_cast<double>(kWeightMax)));
}

}  // namespace

void QuantizedTensor::validate() const {
  if (shape.empty() || shape_size(shape) != data.size()) {
    throw DimensionError("quantized payload of " + std::to_string(data.size()) + " values does not match shape " +
                         shape_to_string(shape));
  }
  if (scales.size() != 1 && scales.size() != shape.back()) {
    throw DimensionError("quantized tensor " + shape_to_string(shape) + " has " + std::to_string(scales.size()) +
                         " scales");
  }
  for (float s : scales) {
    if (!(s > 0.0f) || !std::isfinite(s)) throw DomainError("quantization scale must be positive and finite");
  }
}

QuantizedTensor quantize_tensor(const Tensor& w, Granularity granularity) {
  w.check_finite("tensor to quantize");
  QuantizedTensor q;
  q.shape = w.shape();
  q.data.resize(w.size());
  if (granularity == Granularity::kPerChannel && w.rank() >= 2) {
    const std::size_t cols = w.shape().back();
    std::vector<float> max_abs(cols, 0.0f);
    for (std::size_t i = 0; i < w.size(); ++i) max_abs[i % cols] = std::max(max_abs[i % cols], std::fabs(w[i]));
    q.scales.resize(cols);
    for (std::size_t c = 0; c < cols; ++c) q.scales[c] = symmetric_scale(max_abs[c]);
  } else {
    q.scales = {symmetric_scale(w.max_abs())};
  }
  for (std::size_t i = 0; i < w.size(); ++i) q.data[i] = quantize_value(w[i], q.scale_for(i));
  return q;
}

Tensor dequantize_tensor(const QuantizedTensor& q) {
  q.validate();
  Tensor out(q.shape);
  for (std::size_t i = 0; i < q.data.size(); ++i) {
    out[i] = q.scale_for(i) * static_cast<float>(static_cast<std::int32_t>(q.data[i]) - q.zero_point);
  }
  return out;
}

std::optional<QuantizedActivation> quantize_activation(const Tensor& x) {
  const auto [mn_it, mx_it] = std::minmax_element(x.data().begin(), x.data().end());
  const float mn = *mn_it, mx = *mx_it;
  if (mx == mn) return std::nullopt;
  const double lo = std::min(0.0, static_cast<double>(mn));
  const double hi = std::max(0.0, static_cast<double>(mx));
  QuantizedActivation a;
  a.scale = static_cast<float>((hi - lo) / 255.0);
  if (!(a.scale > 0.0f)) return std::nullopt;
  a.zero_point = static_cast<std::int32_t>(std::clamp(std::nearbyint(-128.0 - lo / a.scale), -128.0, 127.0));
  a.data.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double q = std::nearbyint(static_cast<double>(x[i]) / a.scale) + a.zero_point;
    a.data[i] = static_cast<std::int8_t>(std::clamp(q, -128.0, 127.0));
  }
  return a;
}

Tensor quantized_matmul(const Tensor& x, const QuantizedTensor& w) {
  if (x.rank() != 2 || w.shape.size() != 2 || x.dim(1) != w.shape[0]) {
    throw DimensionError("quantized matmul shape mismatch: " + shape_to_string(x.shape()) + " x " +
                         shape_to_string(w.shape));
  }
  const auto act = quantize_activation(x);
  if (!act) return matmul(x, dequantize_tensor(w));

  const std::size_t m = x.dim(0), k = x.dim(1), n = w.shape[1];
  Tensor out({m, n});
  auto run = [&]<class Acc>(Acc) {
    std::vector<Acc> acc(n);
    for (std::size_t i = 0; i < m; ++i) {
      std::fill(acc.begin(), acc.end(), 0);
      for (std::size_t p = 0; p < k; ++p) {
        const Acc a = static_cast<Acc>(act->data[i * k + p]) - act->zero_point;
        if (a == 0) continue;
        const std::int8_t* wr = w.data.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) acc[j] += a * wr[j];
      }
      for (std::size_t j = 0; j < n; ++j) {
        std::int64_t v = acc[j];
        if (v > std::numeric_limits<std::int32_t>::max() || v < std::numeric_limits<std::int32_t>::min()) {
          g_saturations.fetch_add(1, std::memory_order_relaxed);
          v = std::clamp<std::int64_t>(v, std::numeric_limits<std::int32_t>::min(),
                                       std::numeric_limits<std::int32_t>::max());
        }
        out.at(i, j) = static_cast<float>(v) * (act->scale * w.scale_for(j));
      }
    }
  };
  // |a·w| ≤ 255·127, so an int32 sum cannot overflow below this depth.
  constexpr std::size_t kExactInt32Depth = std::numeric_limits<std::int32_t>::max() / (255 * 127);
  if (k <= kExactInt32Depth) {
    run(std::int32_t{});
  } else {
    run(std::int64_t{});
  }
  return out;
}

Var quantized_linear(Var x, const QuantizedTensor& w, Var bias) {
  Tensor y = quantized_matmul(x.value(), w);
  const auto& b = bias.value();
  if (b.size() != y.dim(1)) throw DimensionError("bias " + shape_to_string(b.shape()) + " does not match output");
  for (std::size_t i = 0; i < y.dim(0); ++i)
    for (std::size_t j = 0; j < y.dim(1); ++j) y.at(i, j) += b[j];
  return x.tape().record(std::move(y), {x, bias}, [](Tape&, const Tensor&) {
    throw std::logic_error("quantized_linear is inference-only and has no gradient");
  });
}

std::uint64_t accumulator_saturations() { return g_saturations.load(std::memory_order_relaxed); }

QuantizedModel quantize_model(const Model& model, Granularity granularity, QuantProvenance provenance) {
  QuantizedModel qm;
  qm.vit = model.vit;
  qm.head = model.head;
  qm.class_names = model.class_names;
  qm.split = model.split;
  qm.provenance = std::move(provenance);
  qm.granularity = granularity;
  zip_visit(model.params, qm.params, [&](const std::string&, const Tensor& src, auto& dst, Role) {
    using Dst = std::decay_t<decltype(dst)>;
    if constexpr (std::is_same_v<Dst, QuantizedTensor>) {
      dst = quantize_tensor(src, granularity);
    } else {
      dst = src;
    }
  });
  return qm;
}

Model dequantize_model(const QuantizedModel& qm) {
  Model m;
  m.vit = qm.vit;
  m.head = qm.head;
  m.class_names = qm.class_names;
  m.split = qm.split;
  zip_visit(qm.params, m.params, [&](const std::string&, const auto& src, Tensor& dst, Role) {
    using Src = std::decay_t<decltype(src)>;
    if constexpr (std::is_same_v<Src, QuantizedTensor>) {
      dst = dequantize_tensor(src);
    } else {
      dst = src;
    }
  });
  return m;
}

ModelVars bind(Tape& tape, const QuantizedModel& qm) {
  ModelVars vars;
  zip_visit(qm.params, vars, [&](const std::string&, const auto& src, auto& dst, Role) {
    using Src = std::decay_t<decltype(src)>;
    using Dst = std::decay_t<decltype(dst)>;
    if constexpr (std::is_same_v<Src, QuantizedTensor> && std::is_same_v<Dst, WeightVar>) {
      dst.value = tape.constant(dequantize_tensor(src));
      dst.quantized = &src;
    } else if constexpr (std::is_same_v<Src, Tensor> && std::is_same_v<Dst, Var>) {
      dst = tape.constant(src);
    }
  });
  // The positional table is added, not multiplied, so it is consumed in dequantised form.
  vars.backbone.pos_embed.quantized = nullptr;
  return vars;
}

Tensor quantized_forward(const QuantizedModel& qm, const RgbImage& img) {
  Tape tape;
  return forward(tape, bind(tape, qm), qm.vit, img).probs.value();
}

QuantReport compare(const Model& float_model, const QuantizedModel& qm, const std::vector<LabeledImage>& test) {
  if (float_model.class_names != qm.class_names) {
    throw ConfigError("float and quantized models were trained on different class sets");
  }
  QuantReport r;
  r.samples = test.size();
  std::size_t float_correct = 0, quant_correct = 0, agree = 0;
  for (const auto& s : test) {
    const std::size_t pf = argmax(predict(float_model, s.image));
    const std::size_t pq = argmax(quantized_forward(qm, s.image));
    float_correct += pf == s.label;
    quant_correct += pq == s.label;
    agree += pf == pq;
  }
  if (!test.empty()) {
    const auto n = static_cast<double>(test.size());
    r.float_accuracy = static_cast<double>(float_correct) / n;
    r.quantized_accuracy = static_cast<double>(quant_correct) / n;
    r.top1_agreement = static_cast<double>(agree) / n;
  }
  r.accuracy_delta = r.float_accuracy - r.quantized_accuracy;
  r.float_bytes = serialize_model(float_model).size();
  r.quantized_bytes = serialize_model(qm).size();
  r.size_ratio = static_cast<double>(r.float_bytes) / static_cast<double>(r.quantized_bytes);
  return r;
}

void write_quant_report_csv(std::ostream& os, const QuantReport& r) {
  os << "float_accuracy,quantized_accuracy,accuracy_delta,top1_agreement,samples,float_bytes,quantized_bytes,"
        "size_ratio\n";
  os << std::setprecision(9) << r.float_accuracy << ',' << r.quantized_accuracy << ',' << r.accuracy_delta << ','
     << r.top1_agreement << ',' << r.samples << ',' << r.float_bytes << ',' << r.quantized_bytes << ','
     << r.size_ratio << '\n';
}

void write_quant_report_text(std::ostream& os, const QuantReport& r) {
  os << std::fixed << std::setprecision(2);
  os << "                 float32      int8\n";
  os << "accuracy      " << std::setw(9) << r.float_accuracy * 100.0 << "% " << std::setw(8)
     << r.quantized_accuracy * 100.0 << "%\n";
  os << "size (bytes)  " << std::setw(10) << r.float_bytes << ' ' << std::setw(9) << r.quantized_bytes << '\n';
  os << "size ratio    " << std::setprecision(3) << r.size_ratio << "x\n";
  os << "top-1 agreement " << std::setprecision(2) << r.top1_agreement * 100.0 << "% over " << r.samples
     << " images\n";
  os.unsetf(std::ios::floatfield);
}

}  // namespace gccvit
