#include "gccvit/training.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "gccvit/errors.hpp"

namespace gccvit {

std::size_t train_count(std::size_t n, double ratio) {
  if (n < 2) return n;
  // The tolerance absorbs float noise in ratios such as 0.8f, where 0.8f·10 lands just above 8.
  const double exact = ratio * static_cast<double>(n);
  const auto k = static_cast<std::size_t>(std::ceil(exact - 1e-4));
  return std::clamp<std::size_t>(k, 1, n - 1);
}

SplitResult stratified_split(const Dataset& ds, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must lie in (0, 1)");
  std::vector<std::vector<std::size_t>> per_class(ds.num_classes());
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    const std::size_t label = ds.items[i].label;
    if (label >= per_class.size()) throw DatasetError("item label out of range: " + std::to_string(label));
    per_class[label].push_back(i);
  }
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    if (per_class[c].size() < 2) {
      throw DatasetError("class '" + ds.class_names[c] + "' has " + std::to_string(per_class[c].size()) +
                         " item(s); a stratified split needs at least 2");
    }
  }

  SplitResult out;
  out.train.class_names = ds.class_names;
  out.test.class_names = ds.class_names;
  Rng rng(seed);
  for (auto& indices : per_class) {
    std::shuffle(indices.begin(), indices.end(), rng);
    const std::size_t k = train_count(indices.size(), ratio);
    for (std::size_t j = 0; j < indices.size(); ++j) {
      (j < k ? out.train : out.test).items.push_back(ds.items[indices[j]]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------------------------

void AugmentConfig::validate() const {
  if (rotation_degrees < 0 || width_shift < 0 || height_shift < 0 || shear < 0 || zoom < 0) {
    throw ConfigError("augmentation ranges must be non-negative");
  }
  if (zoom >= 1.0f) throw ConfigError("zoom range must be below 1");
  if (!(rescale > 0.0f)) throw ConfigError("rescale must be positive");
}

AugmentConfig AugmentConfig::none() {
  AugmentConfig c;
  c.rotation_degrees = c.width_shift = c.height_shift = c.shear = c.zoom = 0.0f;
  c.horizontal_flip = c.vertical_flip = false;
  return c;
}

namespace {

double symmetric(Rng& rng, double range) { return range > 0.0 ? uniform(rng, -range, range) : 0.0; }

float sample_bilinear(const RgbImage& img, double y, double x, std::size_t c) {
  const double maxy = static_cast<double>(img.height() - 1);
  const double maxx = static_cast<double>(img.width() - 1);
  y = std::clamp(y, 0.0, maxy);
  x = std::clamp(x, 0.0, maxx);
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, img.height() - 1);
  const std::size_t x1 = std::min(x0 + 1, img.width() - 1);
  const double fy = y - static_cast<double>(y0);
  const double fx = x - static_cast<double>(x0);
  const double top = img.at(y0, x0, c) * (1.0 - fx) + img.at(y0, x1, c) * fx;
  const double bottom = img.at(y1, x0, c) * (1.0 - fx) + img.at(y1, x1, c) * fx;
  return std::clamp(static_cast<float>(top * (1.0 - fy) + bottom * fy), 0.0f, 1.0f);
}

}  // namespace

AugmentParams sample_augment(const AugmentConfig& cfg, Rng& rng) {
  AugmentParams p;
  p.angle_degrees = symmetric(rng, cfg.rotation_degrees);
  p.shift_x = symmetric(rng, cfg.width_shift);
  p.shift_y = symmetric(rng, cfg.height_shift);
  p.shear = symmetric(rng, cfg.shear);
  p.zoom_x = 1.0 + symmetric(rng, cfg.zoom);
  p.zoom_y = 1.0 + symmetric(rng, cfg.zoom);
  p.flip_h = cfg.horizontal_flip && coin(rng);
  p.flip_v = cfg.vertical_flip && coin(rng);
  return p;
}

RgbImage apply_augment(const RgbImage& img, const AugmentParams& p) {
  const std::size_t h = img.height();
  const std::size_t w = img.width();
  if (img.empty()) return img;
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  const double theta = p.angle_degrees * std::numbers::pi / 180.0;
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);
  const double tx = p.shift_x * static_cast<double>(w);
  const double ty = p.shift_y * static_cast<double>(h);

  RgbImage out(h, w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      // Undo the forward chain from the last transform back to the first.
      double u = static_cast<double>(x) - cx;
      double v = static_cast<double>(y) - cy;
      if (p.flip_h) u = -u;
      if (p.flip_v) v = -v;
      u /= p.zoom_x;
      v /= p.zoom_y;
      u -= p.shear * v;
      u -= tx;
      v -= ty;
      const double su = cos_t * u + sin_t * v;
      const double sv = -sin_t * u + cos_t * v;
      for (std::size_t c = 0; c < 3; ++c) out.set(y, x, c, sample_bilinear(img, sv + cy, su + cx, c));
    }
  }
  return out;
}

RgbImage augment(const RgbImage& img, const AugmentConfig& cfg, Rng& rng) {
  return apply_augment(img, sample_augment(cfg, rng));
}

// ---------------------------------------------------------------------------------------------

TrainingAborted::TrainingAborted(std::size_t step, std::string parameter, double max_abs_grad)
    : std::runtime_error([&] {
        std::ostringstream os;
        os << "training aborted at step " << step << ": non-finite gradient in '" << parameter
           << "' (max |g| = " << max_abs_grad << ")";
        return os.str();
      }()),
      step_(step),
      parameter_(std::move(parameter)),
      max_abs_grad_(max_abs_grad) {}

void adam_step(const std::vector<ParamGrad>& items, AdamState& state, const AdamConfig& cfg) {
  const std::size_t t = state.step + 1;
  for (const auto& it : items) {
    if (it.param->shape() != it.grad->shape()) {
      throw DimensionError("gradient shape " + shape_to_string(it.grad->shape()) + " does not match parameter '" +
                           it.name + "' " + shape_to_string(it.param->shape()));
    }
    if (!it.grad->all_finite()) {
      double max_abs = 0.0;
      for (float g : it.grad->data()) {
        if (std::isnan(g)) {
          max_abs = std::numeric_limits<double>::quiet_NaN();
          break;
        }
        max_abs = std::max(max_abs, static_cast<double>(std::fabs(g)));
      }
      throw TrainingAborted(t, it.name, max_abs);
    }
  }
  if (state.m.empty()) {
    for (const auto& it : items) {
      state.m.emplace_back(it.param->shape());
      state.v.emplace_back(it.param->shape());
    }
  }
  if (state.m.size() != items.size()) throw DimensionError("optimizer state does not match parameter list");
  state.step = t;

  const double b1 = cfg.beta1;
  const double b2 = cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (std::size_t k = 0; k < items.size(); ++k) {
    auto theta = items[k].param->data();
    auto g = items[k].grad->data();
    auto m = state.m[k].data();
    auto v = state.v[k].data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = g[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double update = cfg.learning_rate * (mi / c1) / (std::sqrt(vi / c2) + cfg.epsilon);
      theta[i] = static_cast<float>(theta[i] - update);
    }
  }
}

// ---------------------------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw ConfigError("split_ratio must lie in (0, 1)");
  if (!(label_smoothing >= 0.0f && label_smoothing < 1.0f)) throw ConfigError("label_smoothing must lie in [0, 1)");
  if (!(adam.learning_rate > 0.0f)) throw ConfigError("learning_rate must be positive");
  if (!(adam.beta1 >= 0.0f && adam.beta1 < 1.0f) || !(adam.beta2 >= 0.0f && adam.beta2 < 1.0f)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam.epsilon > 0.0f)) throw ConfigError("Adam epsilon must be positive");
  augmentation.validate();
}

namespace {

double l2_value(const HeadParams& head, float l2_strength) {
  double s = 0.0;
  for (float w : head.svm_weight.data()) s += static_cast<double>(w) * w;
  return l2_strength * s;
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams z = params;
  ModelParams::visit(z, "", [](const std::string&, Tensor& t, Role) { t = Tensor(t.shape()); });
  return z;
}

void check_labels(const std::vector<LabeledImage>& data, std::size_t num_classes, const char* what) {
  for (const auto& s : data) {
    if (s.label >= num_classes) {
      throw ConfigError(std::string(what) + " label " + std::to_string(s.label) + " exceeds the model's " +
                        std::to_string(num_classes) + " classes");
    }
  }
}

}  // namespace

std::pair<double, double> loss_and_accuracy(const Model& model, const std::vector<LabeledImage>& data,
                                            float smoothing) {
  if (data.empty()) return {0.0, 0.0};
  const double l2 = l2_value(model.params.head, model.head.l2_strength);
  double total = 0.0;
  std::size_t correct = 0;
  for (const auto& s : data) {
    Tape tape;
    const HeadOutput out = forward(tape, bind(tape, model.params, false), model.vit, s.image);
    total += data_loss(out, s.label, smoothing, model.head.loss).value()[0] + l2;
    correct += argmax(out.probs.value()) == s.label;
  }
  const auto n = static_cast<double>(data.size());
  return {total / n, static_cast<double>(correct) / n};
}

std::vector<EpochStats> train_model(Model& model, const std::vector<LabeledImage>& train_set,
                                    const std::vector<LabeledImage>& val, const TrainConfig& cfg,
                                    const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw DatasetError("training set is empty");
  check_labels(train_set, model.head.num_classes, "training");
  check_labels(val, model.head.num_classes, "validation");

  Rng master(cfg.seed ^ 0x5eedf00dULL);
  Rng shuffle_rng(master());
  Rng augment_rng(master());

  std::vector<std::string> names;
  std::vector<Tensor*> param_slots;
  ModelParams::visit(model.params, "", [&](const std::string& name, Tensor& t, Role) {
    names.push_back(name);
    param_slots.push_back(&t);
  });
  ModelParams grad_sum = zeros_like(model.params);
  std::vector<Tensor*> grad_slots;
  ModelParams::visit(grad_sum, "", [&](const std::string&, Tensor& t, Role) { grad_slots.push_back(&t); });
  std::vector<ParamGrad> items;
  for (std::size_t k = 0; k < names.size(); ++k) items.push_back({names[k], param_slots[k], grad_slots[k]});

  AdamState adam;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<EpochStats> history;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(start + cfg.batch_size, order.size());
      for (Tensor* g : grad_slots) g->fill(0.0f);
      const double l2 = l2_value(model.params.head, model.head.l2_strength);

      for (std::size_t i = start; i < end; ++i) {
        const LabeledImage& sample = train_set[order[i]];
        const RgbImage image = cfg.augment ? augment(sample.image, cfg.augmentation, augment_rng) : sample.image;
        Tape tape;
        const ModelVars vars = bind(tape, model.params, true);
        const HeadOutput out = forward(tape, vars, model.vit, image);
        const Var l = data_loss(out, sample.label, cfg.label_smoothing, model.head.loss);
        loss_sum += l.value()[0] + l2;
        correct += argmax(out.probs.value()) == sample.label;
        tape.backward(l);

        std::size_t k = 0;
        ModelVars::visit(vars, "", [&](const std::string&, const auto& slot, Role) {
          using Slot = std::decay_t<decltype(slot)>;
          const Var& v = [&]() -> const Var& {
            if constexpr (std::is_same_v<Slot, WeightVar>) {
              return slot.value;
            } else {
              return slot;
            }
          }();
          auto dst = grad_slots[k++]->data();
          auto src = v.grad().data();
          for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
        });
      }

      const float inv = 1.0f / static_cast<float>(end - start);
      for (Tensor* g : grad_slots) {
        for (float& x : g->data()) x *= inv;
      }
      // d/dW of l2·‖W‖², added once per batch.
      {
        auto g = grad_sum.head.svm_weight.data();
        auto w = model.params.head.svm_weight.data();
        for (std::size_t j = 0; j < g.size(); ++j) g[j] += 2.0f * model.head.l2_strength * w[j];
      }
      adam_step(items, adam, cfg.adam);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(train_set.size());
    stats.train_acc = static_cast<double>(correct) / static_cast<double>(train_set.size());
    std::tie(stats.val_loss, stats.val_acc) = loss_and_accuracy(model, val, cfg.label_smoothing);
    history.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return history;
}

TrainResult train(const std::vector<LabeledImage>& train_set, const std::vector<LabeledImage>& val,
                  const VitConfig& vit, const HeadConfig& head, std::vector<std::string> class_names,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  TrainResult result;
  result.model = init_model(vit, head, std::move(class_names), cfg.seed);
  result.history = train_model(result.model, train_set, val, cfg, on_epoch);
  return result;
}

// ---------------------------------------------------------------------------------------------

EvalReport report_from_confusion(std::vector<std::vector<std::size_t>> confusion,
                                 std::vector<std::string> class_names) {
  const std::size_t k = confusion.size();
  for (const auto& row : confusion) {
    if (row.size() != k) throw DimensionError("confusion matrix must be square");
  }
  if (class_names.empty()) {
    for (std::size_t c = 0; c < k; ++c) class_names.push_back(std::to_string(c));
  }
  if (class_names.size() != k) throw ConfigError("confusion matrix size does not match the class list");

  EvalReport r;
  r.class_names = std::move(class_names);
  std::size_t total = 0, trace = 0;
  std::vector<std::size_t> col_sum(k, 0), row_sum(k, 0);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      total += confusion[i][j];
      row_sum[i] += confusion[i][j];
      col_sum[j] += confusion[i][j];
    }
    trace += confusion[i][i];
  }
  r.samples = total;
  r.accuracy = total ? static_cast<double>(trace) / static_cast<double>(total) : 0.0;

  for (std::size_t c = 0; c < k; ++c) {
    ClassMetrics m;
    const auto tp = static_cast<double>(confusion[c][c]);
    const auto fp = static_cast<double>(col_sum[c]) - tp;
    const auto fn = static_cast<double>(row_sum[c]) - tp;
    const double tn = static_cast<double>(total) - tp - fp - fn;
    m.support = row_sum[c];
    if (tp + fp > 0) {
      m.precision = tp / (tp + fp);
    } else {
      m.precision_undefined = true;
    }
    if (tp + fn > 0) {
      m.recall = tp / (tp + fn);
    } else {
      m.recall_undefined = true;
    }
    if (m.precision + m.recall > 0) {
      m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    } else {
      m.f1_undefined = true;
    }
    m.accuracy = total ? (tp + tn) / static_cast<double>(total) : 0.0;
    r.macro_precision += m.precision;
    r.macro_recall += m.recall;
    r.macro_f1 += m.f1;
    r.per_class.push_back(m);
  }
  if (k > 0) {
    r.macro_precision /= static_cast<double>(k);
    r.macro_recall /= static_cast<double>(k);
    r.macro_f1 /= static_cast<double>(k);
  }
  r.confusion = std::move(confusion);
  return r;
}

EvalReport evaluate(const Classifier& classify, const std::vector<std::string>& class_names,
                    const std::vector<LabeledImage>& data) {
  const std::size_t k = class_names.size();
  check_labels(data, k, "evaluation");
  std::vector<std::vector<std::size_t>> confusion(k, std::vector<std::size_t>(k, 0));
  for (const auto& s : data) {
    const Tensor probs = classify(s.image);
    if (probs.size() != k) throw ConfigError("classifier output size does not match the class list");
    ++confusion[s.label][argmax(probs)];
  }
  return report_from_confusion(std::move(confusion), class_names);
}

EvalReport evaluate(const Model& model, const std::vector<LabeledImage>& data) {
  return evaluate([&](const RgbImage& img) { return predict(model, img); }, model.class_names, data);
}

// ---------------------------------------------------------------------------------------------

void write_history_csv(std::ostream& os, const std::vector<EpochStats>& history) {
  os << "epoch,train_loss,train_acc,val_loss,val_acc\n";
  os << std::setprecision(9);
  for (const auto& e : history) {
    os << e.epoch << ',' << e.train_loss << ',' << e.train_acc << ',' << e.val_loss << ',' << e.val_acc << '\n';
  }
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace

void write_eval_csv(std::ostream& os, const EvalReport& r) {
  os << "class,precision,recall,f1,accuracy,support,flags\n";
  os << std::setprecision(9);
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const auto& m = r.per_class[c];
    std::string flags;
    auto flag = [&](bool on, const char* name) {
      if (!on) return;
      if (!flags.empty()) flags += ';';
      flags += name;
    };
    flag(m.precision_undefined, "precision_undefined");
    flag(m.recall_undefined, "recall_undefined");
    flag(m.f1_undefined, "f1_undefined");
    os << csv_field(r.class_names[c]) << ',' << m.precision << ',' << m.recall << ',' << m.f1 << ',' << m.accuracy
       << ',' << m.support << ',' << flags << '\n';
  }
  os << "macro," << r.macro_precision << ',' << r.macro_recall << ',' << r.macro_f1 << ',' << r.accuracy << ','
     << r.samples << ",\n";
}

void write_confusion_text(std::ostream& os, const EvalReport& r) {
  const std::size_t k = r.confusion.size();
  std::size_t cell = 5;
  for (const auto& row : r.confusion) {
    for (auto v : row) cell = std::max(cell, std::to_string(v).size() + 1);
  }
  os << "confusion matrix (rows = true class, columns = predicted)\n";
  os << std::setw(6) << ' ';
  for (std::size_t j = 0; j < k; ++j) os << std::setw(static_cast<int>(cell)) << j;
  os << '\n';
  for (std::size_t i = 0; i < k; ++i) {
    os << std::setw(5) << i << ' ';
    for (std::size_t j = 0; j < k; ++j) os << std::setw(static_cast<int>(cell)) << r.confusion[i][j];
    os << "  " << r.class_names[i] << '\n';
  }
  os << std::fixed << std::setprecision(4);
  os << "accuracy " << r.accuracy << "  macro precision " << r.macro_precision << "  macro recall " << r.macro_recall
     << "  macro F1 " << r.macro_f1 << "  (" << r.samples << " samples)\n";
  os.unsetf(std::ios::floatfield);
}

}  // namespace gccvit
