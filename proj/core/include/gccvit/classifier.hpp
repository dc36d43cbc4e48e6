#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gccvit/autodiff.hpp"
#include "gccvit/image.hpp"
#include "gccvit/vit.hpp"

namespace gccvit {

/// Training objective of the SVM head. kSoftmax is the L2-regularised softmax layer;
/// kHinge swaps the cross entropy for a multi-class hinge on the logits.
enum class HeadLoss : std::uint8_t { kSoftmax = 0, kHinge = 1 };

struct HeadConfig {
  std::size_t hidden = 64;
  std::size_t num_classes = 39;
  float l2_strength = 0.01f;
  HeadLoss loss = HeadLoss::kSoftmax;

  void validate() const;
  friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

template <class W, class T>
struct HeadT {
  W dense_weight;  // (D + 1) × hidden
  T dense_bias;
  W svm_weight;  // hidden × num_classes
  T svm_bias;

  template <class Self, class F>
  static void visit(Self& s, const std::string& p, F&& f) {
    f(p + "dense.weight", s.dense_weight, Role::kWeight);
    f(p + "dense.bias", s.dense_bias, Role::kBias);
    f(p + "svm.weight", s.svm_weight, Role::kWeight);
    f(p + "svm.bias", s.svm_bias, Role::kBias);
  }
};

template <class DW, class DT, class SW, class ST>
void match_layout(HeadT<DW, DT>&, const HeadT<SW, ST>&) {}

/// Backbone + head; the unit that is trained, serialised and quantised.
template <class W, class T>
struct ModelParamsT {
  VitT<W, T> backbone;
  HeadT<W, T> head;

  template <class Self, class F>
  static void visit(Self& s, const std::string& p, F&& f) {
    VitT<W, T>::visit(s.backbone, p + "vit.", f);
    HeadT<W, T>::visit(s.head, p + "head.", f);
  }
};

template <class DW, class DT, class SW, class ST>
void match_layout(ModelParamsT<DW, DT>& dst, const ModelParamsT<SW, ST>& src) {
  match_layout(dst.backbone, src.backbone);
}

using HeadParams = HeadT<Tensor, Tensor>;
using HeadVars = HeadT<WeightVar, Var>;
using ModelParams = ModelParamsT<Tensor, Tensor>;
using ModelVars = ModelParamsT<WeightVar, Var>;

/// Seed and ratio of the stratified split a model was trained on, so that evaluation tools can
/// re-derive the held-out partition.
struct SplitRecord {
  std::uint64_t seed = 0;
  float ratio = 0.8f;
  friend bool operator==(const SplitRecord&, const SplitRecord&) = default;
};

struct Model {
  VitConfig vit;
  HeadConfig head;
  std::vector<std::string> class_names;
  ModelParams params;
  std::optional<SplitRecord> split;
};

Model init_model(const VitConfig& vit, const HeadConfig& head, std::vector<std::string> class_names,
                 std::uint64_t seed);

HeadParams init_head(const VitConfig& vit, const HeadConfig& head, Rng& rng);

/// Appends `gcc` as the last coordinate. Throws DomainError unless gcc ∈ [0, 1].
Var fuse(Var feature, float gcc);
Tensor fuse(const Tensor& feature, float gcc);

struct HeadOutput {
  Var logits;
  Var probs;
};

/// ReLU dense layer, linear SVM layer, softmax over classes.
HeadOutput head_forward(Var fused, const HeadVars& head);
Tensor head_forward(const Tensor& fused, const HeadParams& head);

/// l2 · ‖svm weights‖²
Var l2_penalty(const HeadVars& head, float l2_strength);

/// Per-sample data term of the configured objective (smoothed cross entropy or hinge).
Var data_loss(const HeadOutput& out, std::size_t label, float smoothing, HeadLoss kind);

/// Smoothed cross entropy on `probs` plus the L2 penalty on the SVM weights.
Var loss(const HeadOutput& out, std::size_t label, float smoothing, const HeadVars& head,
         const HeadConfig& cfg);
double loss(const Tensor& probs, std::size_t label, float smoothing, const HeadParams& head, float l2_strength);

ModelVars bind(Tape& tape, const ModelParams& params, bool trainable);

/// Full forward pass: ViT feature, GCC of `img`, fusion, head.
HeadOutput forward(Tape& tape, const ModelVars& vars, const VitConfig& cfg, const RgbImage& img);

/// Class probabilities of `img` under `model`.
Tensor predict(const Model& model, const RgbImage& img);

std::size_t argmax(const Tensor& t);

}  // namespace gccvit
