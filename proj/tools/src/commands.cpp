#include "gccvit/cli/commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <numeric>
#include <optional>
#include <sstream>

#include "gccvit/chromatic.hpp"
#include "gccvit/cli/run_config.hpp"
#include "gccvit/errors.hpp"
#include "gccvit/image_io.hpp"
#include "gccvit/model_io.hpp"
#include "gccvit/quantize.hpp"
#include "gccvit/synthetic.hpp"
#include "gccvit/training.hpp"

namespace gccvit::cli {

namespace fs = std::filesystem;

namespace {

/// Bad invocation or unusable input; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

fs::path sibling(const fs::path& model, const std::string& suffix) {
  fs::path p = model;
  p.replace_extension();
  return fs::path(p.string() + suffix);
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f.flush()) throw IoError("error writing " + path.string());
}

std::string today() {
  std::time_t t = std::time(nullptr);
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH")) {
    char* end = nullptr;
    const long long v = std::strtoll(epoch, &end, 10);
    if (end && *end == '\0') t = static_cast<std::time_t>(v);
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[16];
  std::strftime(buf, sizeof buf, "%Y-%m-%d", &tm);
  return buf;
}

Dataset scan_dataset(const fs::path& dir, Streams& io) {
  ScanStats scan;
  Dataset ds = load_dataset(dir, &scan);
  if (scan.skipped_files) io.err << "warning: skipped " << scan.skipped_files << " non-image file(s)\n";
  return ds;
}

std::vector<LabeledImage> decode(const Dataset& ds, std::size_t size, float rescale, Streams& io) {
  DecodeStats stats;
  auto images = materialize(ds, size, rescale, &stats);
  if (stats.grayscale) io.err << "warning: " << stats.grayscale << " grayscale image(s) replicated to RGB\n";
  if (stats.corrupt) {
    io.err << "warning: skipped " << stats.corrupt << " unreadable image(s)\n";
    for (const auto& f : stats.corrupt_files) io.err << "  " << f << '\n';
  }
  return images;
}

/// The images a stored model should be scored on: its held-out split when one is recorded and
/// `split == "test"`, otherwise everything.
std::vector<LabeledImage> evaluation_images(const fs::path& dir, const std::vector<std::string>& class_names,
                                            const std::optional<SplitRecord>& record, const std::string& split,
                                            std::size_t image_size, Streams& io) {
  Dataset ds = scan_dataset(dir, io);
  if (ds.class_names != class_names) {
    throw ConfigError("dataset classes do not match the model (" + std::to_string(ds.num_classes()) + " vs " +
                      std::to_string(class_names.size()) + " classes, or different names)");
  }
  if (split == "test") {
    if (!record) throw UsageError("model carries no split record; use --split all");
    ds = stratified_split(ds, record->ratio, record->seed).test;
  }
  return decode(ds, image_size, 1.0f / 255.0f, io);
}

Classifier classifier_for(const LoadedModel& m) {
  if (const auto* f = std::get_if<Model>(&m)) {
    return [f](const RgbImage& img) { return predict(*f, img); };
  }
  const auto* q = &std::get<QuantizedModel>(m);
  return [q](const RgbImage& img) { return quantized_forward(*q, img); };
}

const std::vector<std::string>& class_names_of(const LoadedModel& m) {
  return std::visit([](const auto& x) -> const std::vector<std::string>& { return x.class_names; }, m);
}

// -----------------------------------------------------------------------------------------------

struct TrainArgs {
  std::string data, config, out;
  std::uint64_t seed = 0;
  std::vector<std::string> overrides;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a, bool seed_given, Streams io) {
  RunConfig cfg = a.config.empty() ? RunConfig{} : load_config_file(a.config);
  for (const auto& o : a.overrides) apply_override(cfg, o);
  if (seed_given) cfg.train.seed = a.seed;

  Dataset ds = scan_dataset(a.data, io);
  cfg.head.num_classes = ds.num_classes();
  cfg.validate();
  if (ds.num_classes() < 2) throw DatasetError("training needs at least two classes");

  io.out << "effective configuration:\n";
  std::ostringstream echoed;
  write_config(echoed, cfg);
  io.out << echoed.str();
  io.out << "num_classes = " << cfg.head.num_classes << "\n";

  const SplitRecord record{cfg.train.seed, static_cast<float>(cfg.train.split_ratio)};
  const SplitResult split = stratified_split(ds, record.ratio, record.seed);
  const float rescale = cfg.train.augmentation.rescale;
  const auto train_images = decode(split.train, cfg.vit.image_size, rescale, io);
  const auto test_images = decode(split.test, cfg.vit.image_size, rescale, io);
  io.out << "train images: " << train_images.size() << ", held-out images: " << test_images.size() << "\n";
  if (train_images.empty()) throw DatasetError("no decodable training images in " + a.data);

  auto log_epoch = [&](const EpochStats& e) {
    if (a.quiet) return;
    io.out << "epoch " << e.epoch << "/" << cfg.train.epochs << std::fixed << std::setprecision(4)
           << "  train_loss " << e.train_loss << "  train_acc " << e.train_acc << "  val_loss " << e.val_loss
           << "  val_acc " << e.val_acc << '\n';
    io.out.unsetf(std::ios::floatfield);
  };
  TrainResult result =
      train(train_images, test_images, cfg.vit, cfg.head, ds.class_names, cfg.train, log_epoch);
  result.model.split = record;

  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  const std::size_t bytes = save_model(result.model, out);

  std::ostringstream history;
  write_history_csv(history, result.history);
  write_text_file(sibling(out, ".history.csv"), history.str());

  const EvalReport report = evaluate(result.model, test_images);
  std::ostringstream eval_csv, confusion;
  write_eval_csv(eval_csv, report);
  write_confusion_text(confusion, report);
  write_text_file(sibling(out, ".eval.csv"), eval_csv.str());
  write_text_file(sibling(out, ".confusion.txt"), confusion.str());

  io.out << "wrote " << out.string() << " (" << bytes << " bytes)\n";
  io.out << confusion.str();
  return kExitOk;
}

struct EvaluateArgs {
  std::string model, data, split = "test", out, confusion;
};

int cmd_evaluate(const EvaluateArgs& a, Streams io) {
  const LoadedModel m = load_model(a.model);
  const auto& names = class_names_of(m);
  const auto [record, size] = std::visit(
      [](const auto& x) { return std::pair<std::optional<SplitRecord>, std::size_t>{x.split, x.vit.image_size}; }, m);
  const auto images = evaluation_images(a.data, names, record, a.split, size, io);
  const EvalReport report = evaluate(classifier_for(m), names, images);
  std::ostringstream csv, text;
  write_eval_csv(csv, report);
  write_confusion_text(text, report);
  if (!a.out.empty()) write_text_file(a.out, csv.str());
  if (!a.confusion.empty()) write_text_file(a.confusion, text.str());
  io.out << text.str();
  if (a.out.empty()) io.out << csv.str();
  return kExitOk;
}

struct PredictArgs {
  std::string model, image;
  std::size_t top = 5;
};

int cmd_predict(const PredictArgs& a, Streams io) {
  const LoadedModel m = load_model(a.model);
  const auto& names = class_names_of(m);
  const std::size_t size = std::visit([](const auto& x) { return x.vit.image_size; }, m);
  RgbImage img;
  try {
    img = load_image(a.image, size);
  } catch (const ImageDecodeError& e) {
    throw UsageError(e.what());
  }
  const Tensor probs = classifier_for(m)(img);
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return probs[x] > probs[y]; });
  const std::size_t k = std::min(a.top, order.size());
  io.out << std::fixed << std::setprecision(6);
  for (std::size_t i = 0; i < k; ++i) io.out << names[order[i]] << '\t' << probs[order[i]] << '\n';
  io.out.unsetf(std::ios::floatfield);
  return kExitOk;
}

struct QuantizeArgs {
  std::string model, out, config, granularity;
};

int cmd_quantize(const QuantizeArgs& a, Streams io) {
  std::ifstream in(a.model, std::ios::binary);
  if (!in) throw UsageError("cannot open model file " + a.model);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), {});
  LoadedModel loaded = deserialize_model(bytes);
  if (!std::holds_alternative<Model>(loaded)) throw UsageError(a.model + " is already quantized");
  Granularity g = a.config.empty() ? Granularity::kPerTensor : load_config_file(a.config).granularity;
  if (!a.granularity.empty()) g = a.granularity == "per_channel" ? Granularity::kPerChannel : Granularity::kPerTensor;
  const QuantProvenance prov{to_hex(fnv1a64(bytes)), today()};
  const QuantizedModel qm = quantize_model(std::get<Model>(loaded), g, prov);
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  const std::size_t written = save_model(qm, out);
  io.out << "wrote " << a.out << " (" << written << " bytes, float source " << bytes.size() << " bytes, ratio "
         << std::setprecision(4) << static_cast<double>(bytes.size()) / static_cast<double>(written) << ")\n";
  io.out << "source hash " << prov.source_hash << ", quantized on " << prov.quantized_on << '\n';
  return kExitOk;
}

struct CompareArgs {
  std::string float_model, quant_model, data, split = "test", out;
};

int cmd_compare(const CompareArgs& a, Streams io) {
  LoadedModel f = load_model(a.float_model);
  LoadedModel q = load_model(a.quant_model);
  if (!std::holds_alternative<Model>(f)) throw UsageError(a.float_model + " is not a float container");
  if (!std::holds_alternative<QuantizedModel>(q)) throw UsageError(a.quant_model + " is not a quantized container");
  const Model& fm = std::get<Model>(f);
  const QuantizedModel& qm = std::get<QuantizedModel>(q);
  const auto images = evaluation_images(a.data, fm.class_names, fm.split, a.split, fm.vit.image_size, io);
  const QuantReport report = compare(fm, qm, images);
  std::ostringstream csv;
  write_quant_report_csv(csv, report);
  if (!a.out.empty()) {
    write_text_file(a.out, csv.str());
  } else {
    io.out << csv.str();
  }
  write_quant_report_text(io.out, report);
  return kExitOk;
}

struct GccArgs {
  std::string data, out, group = "both";
};

int cmd_gcc_stats(const GccArgs& a, Streams io) {
  const Dataset ds = scan_dataset(a.data, io);
  std::vector<LabeledGcc> values;
  std::size_t unreadable = 0;
  for (const auto& item : ds.items) {
    try {
      const RgbImage img = item.image ? *item.image : decode_image(item.path);
      values.push_back({item.label, gcc_image(img)});
    } catch (const ImageDecodeError&) {
      ++unreadable;
    }
  }
  if (unreadable) io.err << "warning: skipped " << unreadable << " unreadable image(s)\n";
  const GccGrouping grouping = a.group == "health" ? GccGrouping::kHealth
                               : a.group == "class" ? GccGrouping::kClass
                                                    : GccGrouping::kBoth;
  const GccStats stats = gcc_stats(values, ds.class_names, grouping);
  std::ostringstream csv;
  write_gcc_stats_csv(csv, stats);
  if (!a.out.empty()) {
    write_text_file(a.out, csv.str());
  } else {
    io.out << csv.str();
  }
  return kExitOk;
}

struct SynthArgs {
  std::string out;
  std::size_t per_class = 10;
  std::size_t size = 32;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a, Streams io) {
  SyntheticSpec spec;
  spec.per_class = a.per_class;
  spec.image_size = a.size;
  spec.seed = a.seed;
  const std::size_t n = write_synthetic_corpus(a.out, spec);
  io.out << "wrote " << n << " images in " << spec.classes.size() << " classes to " << a.out << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"GCC-fused vision transformer plant-disease classifier", "gccvit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a model and evaluate it on the held-out split");
  train_cmd->add_option("--data", train_args.data, "Dataset root (one subdirectory per class)")->required();
  train_cmd->add_option("--config", train_args.config, "Config file of key = value lines");
  train_cmd->add_option("--out", train_args.out, "Output model container")->required();
  auto* seed_opt = train_cmd->add_option("--seed", train_args.seed, "Seed for split, initialisation and shuffling");
  train_cmd->add_option("--set", train_args.overrides, "Override a config key (key=value), repeatable");
  train_cmd->add_flag("--quiet", train_args.quiet, "Do not print per-epoch progress");

  EvaluateArgs eval_args;
  auto* eval_cmd = app.add_subcommand("evaluate", "Confusion matrix and per-class metrics");
  eval_cmd->add_option("--model", eval_args.model, "Float or quantized model container")->required();
  eval_cmd->add_option("--data", eval_args.data, "Dataset root")->required();
  eval_cmd->add_option("--split", eval_args.split, "test (held-out split recorded in the model) or all")
      ->check(CLI::IsMember({"test", "all"}));
  eval_cmd->add_option("--out", eval_args.out, "Metrics CSV path");
  eval_cmd->add_option("--confusion", eval_args.confusion, "Confusion matrix text path");

  PredictArgs predict_args;
  auto* predict_cmd = app.add_subcommand("predict", "Top-K classes for one image");
  predict_cmd->add_option("--model", predict_args.model, "Model container")->required();
  predict_cmd->add_option("--image", predict_args.image, "PNG or JPEG image")->required();
  predict_cmd->add_option("--top", predict_args.top, "Number of classes to print")->check(CLI::PositiveNumber);

  QuantizeArgs quant_args;
  auto* quant_cmd = app.add_subcommand("quantize", "Post-training int8 dynamic-range quantization");
  quant_cmd->add_option("--model", quant_args.model, "Float model container")->required();
  quant_cmd->add_option("--out", quant_args.out, "Quantized model container")->required();
  quant_cmd->add_option("--config", quant_args.config, "Config file; only quant_granularity is read");
  quant_cmd->add_option("--granularity", quant_args.granularity, "per_tensor or per_channel weight scales")
      ->check(CLI::IsMember({"per_tensor", "per_channel"}));

  CompareArgs compare_args;
  auto* compare_cmd = app.add_subcommand("compare", "Float vs quantized accuracy, agreement and size");
  compare_cmd->add_option("--float", compare_args.float_model, "Float model container")->required();
  compare_cmd->add_option("--quant", compare_args.quant_model, "Quantized model container")->required();
  compare_cmd->add_option("--data", compare_args.data, "Dataset root")->required();
  compare_cmd->add_option("--split", compare_args.split, "test or all")->check(CLI::IsMember({"test", "all"}));
  compare_cmd->add_option("--out", compare_args.out, "QuantReport CSV path (stdout when omitted)");

  GccArgs gcc_args;
  auto* gcc_cmd = app.add_subcommand("gcc-stats", "Green chromatic coordinate box-plot statistics");
  gcc_cmd->add_option("--data", gcc_args.data, "Dataset root")->required();
  gcc_cmd->add_option("--out", gcc_args.out, "CSV path (stdout when omitted)");
  gcc_cmd->add_option("--group", gcc_args.group, "health, class or both")
      ->check(CLI::IsMember({"health", "class", "both"}));

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic coloured-disk corpus");
  synth_cmd->add_option("--out", synth_args.out, "Output dataset root")->required();
  synth_cmd->add_option("--per-class", synth_args.per_class, "Images per class")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--size", synth_args.size, "Image side in pixels")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", synth_args.seed, "Generator seed");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  Streams io{out, err};
  try {
    if (*train_cmd) return cmd_train(train_args, seed_opt->count() > 0, io);
    if (*eval_cmd) return cmd_evaluate(eval_args, io);
    if (*predict_cmd) return cmd_predict(predict_args, io);
    if (*quant_cmd) return cmd_quantize(quant_args, io);
    if (*compare_cmd) return cmd_compare(compare_args, io);
    if (*gcc_cmd) return cmd_gcc_stats(gcc_args, io);
    if (*synth_cmd) return cmd_synth(synth_args, io);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DatasetError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ContainerError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ImageDecodeError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace gccvit::cli
