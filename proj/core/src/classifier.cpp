#include "gccvit/classifier.hpp"

#include <cmath>
#include <type_traits>

#include "gccvit/chromatic.hpp"
#include "gccvit/errors.hpp"
#include "gccvit/param_visit.hpp"

namespace gccvit {

void HeadConfig::validate() const {
  if (hidden == 0) throw ConfigError("head hidden width must be positive");
  if (num_classes < 2) throw ConfigError("a classifier needs at least two classes");
  if (!(l2_strength >= 0.0f)) throw ConfigError("l2_strength must be non-negative");
}

namespace {

Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const auto limit = static_cast<float>(std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
  return uniform_tensor({fan_in, fan_out}, -limit, limit, rng);
}

}  // namespace

HeadParams init_head(const VitConfig& vit, const HeadConfig& head, Rng& rng) {
  head.validate();
  HeadParams p;
  p.dense_weight = glorot_uniform(vit.projection_dim + 1, head.hidden, rng);
  p.dense_bias = Tensor({head.hidden});
  p.svm_weight = glorot_uniform(head.hidden, head.num_classes, rng);
  p.svm_bias = Tensor({head.num_classes});
  return p;
}

Model init_model(const VitConfig& vit, const HeadConfig& head, std::vector<std::string> class_names,
                 std::uint64_t seed) {
  vit.validate();
  head.validate();
  if (class_names.size() != head.num_classes) {
    throw ConfigError("head has " + std::to_string(head.num_classes) + " outputs but " +
                      std::to_string(class_names.size()) + " class names were given");
  }
  Rng rng(seed);
  Model m;
  m.vit = vit;
  m.head = head;
  m.class_names = std::move(class_names);
  m.params.backbone = init_vit(vit, rng);
  m.params.head = init_head(vit, head, rng);
  return m;
}

namespace {

void check_gcc(float gcc) {
  if (!(gcc >= 0.0f && gcc <= 1.0f)) throw DomainError("GCC value " + std::to_string(gcc) + " outside [0, 1]");
}

}  // namespace

Var fuse(Var feature, float gcc) {
  check_gcc(gcc);
  return concat(feature, feature.tape().constant(Tensor::scalar(gcc)));
}

Tensor fuse(const Tensor& feature, float gcc) {
  Tape tape;
  return fuse(tape.constant(feature), gcc).value();
}

HeadOutput head_forward(Var fused, const HeadVars& head) {
  const auto& dw = head.dense_weight.value.value();
  if (fused.value().rank() != 1 || fused.value().size() != dw.dim(0)) {
    throw DimensionError("fused feature " + shape_to_string(fused.shape()) + " does not match dense layer " +
                         shape_to_string(dw.shape()));
  }
  const std::size_t n = fused.value().size();
  Var x = reshape(fused, {1, n});
  Var hidden = relu(linear(x, head.dense_weight, head.dense_bias));
  Var logits = linear(hidden, head.svm_weight, head.svm_bias);
  const std::size_t k = logits.value().size();
  logits = reshape(logits, {k});
  return {logits, softmax(logits, -1)};
}

Tensor head_forward(const Tensor& fused, const HeadParams& head) {
  Tape tape;
  HeadVars vars;
  vars.dense_weight.value = tape.constant(head.dense_weight);
  vars.dense_bias = tape.constant(head.dense_bias);
  vars.svm_weight.value = tape.constant(head.svm_weight);
  vars.svm_bias = tape.constant(head.svm_bias);
  return head_forward(tape.constant(fused), vars).probs.value();
}

Var l2_penalty(const HeadVars& head, float l2_strength) {
  return scale(sum_squares(head.svm_weight.value), l2_strength);
}

Var data_loss(const HeadOutput& out, std::size_t label, float smoothing, HeadLoss kind) {
  if (kind == HeadLoss::kHinge) return multiclass_hinge(out.logits, label);
  return smoothed_cross_entropy(out.probs, label, smoothing);
}

Var loss(const HeadOutput& out, std::size_t label, float smoothing, const HeadVars& head,
         const HeadConfig& cfg) {
  return add(data_loss(out, label, smoothing, cfg.loss), l2_penalty(head, cfg.l2_strength));
}

double loss(const Tensor& probs, std::size_t label, float smoothing, const HeadParams& head, float l2_strength) {
  Tape tape;
  Var ce = smoothed_cross_entropy(tape.constant(probs), label, smoothing);
  double l2 = 0.0;
  for (float w : head.svm_weight.data()) l2 += static_cast<double>(w) * w;
  return static_cast<double>(ce.value()[0]) + l2_strength * l2;
}

ModelVars bind(Tape& tape, const ModelParams& params, bool trainable) {
  ModelVars vars;
  zip_visit(params, vars, [&](const std::string&, const auto& src, auto& dst, Role) {
    using Src = std::decay_t<decltype(src)>;
    using Dst = std::decay_t<decltype(dst)>;
    if constexpr (std::is_same_v<Src, Tensor>) {
      Var v = trainable ? tape.leaf(src) : tape.constant(src);
      if constexpr (std::is_same_v<Dst, WeightVar>) {
        dst.value = v;
      } else {
        dst = v;
      }
    }
  });
  return vars;
}

HeadOutput forward(Tape& tape, const ModelVars& vars, const VitConfig& cfg, const RgbImage& img) {
  Var feature = encode(tape, img, vars.backbone, cfg);
  return head_forward(fuse(feature, gcc_image(img)), vars.head);
}

Tensor predict(const Model& model, const RgbImage& img) {
  Tape tape;
  return forward(tape, bind(tape, model.params, false), model.vit, img).probs.value();
}

std::size_t argmax(const Tensor& t) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < t.size(); ++i)
    if (t[i] > t[best]) best = i;
  return best;
}

}  // namespace gccvit
