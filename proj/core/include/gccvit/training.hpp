#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gccvit/classifier.hpp"
#include "gccvit/dataset.hpp"
#include "gccvit/image.hpp"
#include "gccvit/random.hpp"
#include "gccvit/tensor.hpp"
#include "gccvit/vit.hpp"

namespace gccvit {

// ---------------------------------------------------------------------------------------------
// Stratified split

struct SplitResult {
  Dataset train;
  Dataset test;
};

/// Number of training items for a class of `n` items: ⌈ratio·n⌉, capped at n − 1 so the test
/// side never loses a class.
std::size_t train_count(std::size_t n, double ratio);

/// Per-class seeded shuffle, then the first train_count(n_c) items of each class go to train.
/// Throws DatasetError naming any class with fewer than two items.
SplitResult stratified_split(const Dataset& ds, double ratio, std::uint64_t seed);

// ---------------------------------------------------------------------------------------------
// Augmentation

struct AugmentConfig {
  float rotation_degrees = 25.0f;  // angle drawn uniformly from [-r, r]
  float width_shift = 0.1f;        // fraction of the width
  float height_shift = 0.1f;
  float shear = 0.2f;  // horizontal shear coefficient drawn from [-s, s]
  float zoom = 0.2f;   // per-axis magnification drawn from [1 - z, 1 + z]
  bool horizontal_flip = true;
  bool vertical_flip = true;
  float rescale = 1.0f / 255.0f;  // applied at decode time

  /// Throws ConfigError on negative ranges, zoom ≥ 1 or non-positive rescale.
  void validate() const;
  /// Ranges zero and flips off.
  static AugmentConfig none();
};

/// One concrete draw of the random transform.
struct AugmentParams {
  double angle_degrees = 0.0;
  double shift_x = 0.0;  // fraction of width
  double shift_y = 0.0;
  double shear = 0.0;
  double zoom_x = 1.0;
  double zoom_y = 1.0;
  bool flip_h = false;
  bool flip_v = false;
};

AugmentParams sample_augment(const AugmentConfig& cfg, Rng& rng);

/// Applies rotate → shift → shear → zoom → flip about the image centre by inverse mapping with
/// bilinear sampling; coordinates outside the frame are clamped to the nearest edge.
RgbImage apply_augment(const RgbImage& img, const AugmentParams& p);

RgbImage augment(const RgbImage& img, const AugmentConfig& cfg, Rng& rng);

// ---------------------------------------------------------------------------------------------
// Optimiser

struct AdamConfig {
  float learning_rate = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-7f;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t step = 0;
};

struct ParamGrad {
  std::string name;
  Tensor* param;
  const Tensor* grad;
};

/// Raised when a gradient contains NaN or infinity. Parameters are left untouched.
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(std::size_t step, std::string parameter, double max_abs_grad);
  std::size_t step() const { return step_; }
  const std::string& parameter() const { return parameter_; }
  double max_abs_grad() const { return max_abs_grad_; }

 private:
  std::size_t step_;
  std::string parameter_;
  double max_abs_grad_;
};

/// One bias-corrected Adam update. State buffers are created on the first call.
void adam_step(const std::vector<ParamGrad>& items, AdamState& state, const AdamConfig& cfg);

// ---------------------------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 50;
  AdamConfig adam;
  float label_smoothing = 0.2f;
  double split_ratio = 0.8;
  std::uint64_t seed = 0;
  bool augment = true;
  AugmentConfig augmentation;

  void validate() const;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<EpochStats> history;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Joint training of backbone and head from a fresh initialisation derived from cfg.seed.
/// `val` may be empty, in which case validation columns are zero.
TrainResult train(const std::vector<LabeledImage>& train_set, const std::vector<LabeledImage>& val,
                  const VitConfig& vit, const HeadConfig& head, std::vector<std::string> class_names,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Continues training `model` in place; used by the overload above.
std::vector<EpochStats> train_model(Model& model, const std::vector<LabeledImage>& train_set,
                                    const std::vector<LabeledImage>& val, const TrainConfig& cfg,
                                    const EpochCallback& on_epoch = {});

/// Mean smoothed loss (plus L2 term) and accuracy of `model` on `data`, no augmentation.
std::pair<double, double> loss_and_accuracy(const Model& model, const std::vector<LabeledImage>& data,
                                            float smoothing);

// ---------------------------------------------------------------------------------------------
// Evaluation

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;  // (TP + TN) / total, one-vs-rest
  std::size_t support = 0;
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;
};

struct EvalReport {
  std::vector<std::string> class_names;
  std::vector<std::vector<std::size_t>> confusion;  // rows = true, cols = predicted
  std::vector<ClassMetrics> per_class;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double accuracy = 0.0;  // trace / total
  std::size_t samples = 0;
};

/// Metrics from a square confusion matrix. Zero denominators yield 0 with the matching flag set.
EvalReport report_from_confusion(std::vector<std::vector<std::size_t>> confusion,
                                 std::vector<std::string> class_names);

using Classifier = std::function<Tensor(const RgbImage&)>;

/// Confusion matrix of argmax predictions. Throws ConfigError when a label is out of range.
EvalReport evaluate(const Classifier& classify, const std::vector<std::string>& class_names,
                    const std::vector<LabeledImage>& data);
EvalReport evaluate(const Model& model, const std::vector<LabeledImage>& data);

// ---------------------------------------------------------------------------------------------
// Reports

void write_history_csv(std::ostream& os, const std::vector<EpochStats>& history);
void write_eval_csv(std::ostream& os, const EvalReport& report);
void write_confusion_text(std::ostream& os, const EvalReport& report);

}  // namespace gccvit
