#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "gccvit/cli/commands.hpp"
#include "gccvit/cli/run_config.hpp"
#include "gccvit/errors.hpp"
#include "gccvit/image_io.hpp"
#include "gccvit/model_io.hpp"

using namespace gccvit;
using namespace gccvit::cli;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct Workspace {
  fs::path root;
  Workspace() {
    root = fs::temp_directory_path() / ("gccvit-cli-" + std::to_string(std::random_device{}()));
    fs::create_directories(root);
  }
  ~Workspace() {
    std::error_code ec;
    fs::remove_all(root, ec);
  }
  std::string path(const std::string& rel) const { return (root / rel).string(); }
};

// Small enough to train in a second or two.
const std::vector<std::string> kTinyTrain = {"--set", "image_size=16",   "--set", "projection_dim=16",
                                             "--set", "num_heads=2",     "--set", "num_layers=1",
                                             "--set", "mlp_hidden=32",   "--set", "head_hidden=16",
                                             "--set", "epochs=3",        "--set", "batch_size=4",
                                             "--set", "learning_rate=0.001", "--quiet"};

Run train(const Workspace& ws, const std::string& data, const std::string& out, const std::string& seed) {
  std::vector<std::string> args = {"train", "--data", data, "--out", ws.path(out), "--seed", seed};
  args.insert(args.end(), kTinyTrain.begin(), kTinyTrain.end());
  return run(args);
}

std::vector<std::string> csv_rows(const std::string& text) {
  std::vector<std::string> rows;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) rows.push_back(line);
  return rows;
}

}  // namespace

TEST_CASE("config files") {
  SUBCASE("parse, comments and overrides") {
    RunConfig cfg;
    std::istringstream in("# desk\nimage_size = 32\n\nnum_layers=4   # fewer\nhead_loss = hinge\naugment = false\n");
    parse_config(in, cfg, "inline");
    CHECK(cfg.vit.image_size == 32);
    CHECK(cfg.vit.num_layers == 4);
    CHECK(cfg.head.loss == HeadLoss::kHinge);
    CHECK_FALSE(cfg.train.augment);
    apply_override(cfg, "learning_rate=5e-4");
    CHECK(cfg.train.adam.learning_rate == doctest::Approx(5e-4));
  }

  SUBCASE("defaults are the reference hyperparameters") {
    const RunConfig cfg;
    CHECK(cfg.train.batch_size == 32);
    CHECK(cfg.train.epochs == 50);
    CHECK(cfg.train.adam.learning_rate == doctest::Approx(1e-4));
    CHECK(cfg.train.label_smoothing == doctest::Approx(0.2));
    CHECK(cfg.head.l2_strength == doctest::Approx(0.01));
    CHECK(cfg.train.augmentation.rotation_degrees == 25.0f);
    CHECK(cfg.vit.patch_size == 4);
    CHECK(cfg.vit.projection_dim == 64);
  }

  SUBCASE("errors name the line") {
    RunConfig cfg;
    std::istringstream typo("image_size = 32\nnum_layer = 4\n");
    try {
      parse_config(typo, cfg, "desk.cfg");
      FAIL("accepted");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("desk.cfg:2") != std::string::npos);
      CHECK(std::string(e.what()).find("num_layer") != std::string::npos);
    }
    std::istringstream bad_value("epochs = many\n");
    CHECK_THROWS_AS(parse_config(bad_value, cfg, "x"), ConfigError);
    std::istringstream no_eq("epochs 3\n");
    CHECK_THROWS_AS(parse_config(no_eq, cfg, "x"), ConfigError);
    CHECK_THROWS_AS(apply_override(cfg, "seed"), ConfigError);
    CHECK_THROWS_AS(apply_override(cfg, "head_loss=svm"), ConfigError);
    CHECK_THROWS_AS(apply_override(cfg, "layer_norm_eps=nan"), ConfigError);
  }

  SUBCASE("echo round trip") {
    RunConfig cfg;
    apply_override(cfg, "split_ratio=0.7");
    apply_override(cfg, "quant_granularity=per_channel");
    apply_override(cfg, "seed=123456789012");
    std::ostringstream out;
    write_config(out, cfg);
    RunConfig back;
    std::istringstream in(out.str());
    parse_config(in, back, "echo");
    std::ostringstream again;
    write_config(again, back);
    CHECK(again.str() == out.str());
    CHECK(csv_rows(out.str()).size() == config_keys().size());
  }

  SUBCASE("committed desk config") {
    const RunConfig cfg = load_config_file(fs::path(GCCVIT_SOURCE_DIR) / "configs" / "desk.cfg");
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.vit.image_size == 32);
  }
}

TEST_CASE("usage errors exit with 2") {
  CHECK(run({}).code == 2);
  CHECK(run({"bogus"}).code == 2);
  CHECK(run({"train", "--out", "x.gvsm"}).code == 2);
  CHECK(run({"predict", "--model", "m", "--image", "i", "--top", "0"}).code == 2);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("missing inputs exit with 2 and name the path") {
  Workspace ws;
  const Run t = run({"train", "--data", ws.path("nowhere"), "--out", ws.path("m.gvsm")});
  CHECK(t.code == 2);
  CHECK(t.err.find("nowhere") != std::string::npos);
  CHECK(run({"evaluate", "--model", ws.path("none.gvsm"), "--data", ws.path("d")}).code == 2);
  fs::create_directories(ws.path("empty"));
  CHECK(run({"gcc-stats", "--data", ws.path("empty")}).code == 2);

  std::ofstream(ws.path("bad.cfg")) << "image_sise = 32\n";
  const Run c = run({"train", "--data", ws.path("d"), "--out", ws.path("m.gvsm"), "--config", ws.path("bad.cfg")});
  CHECK(c.code == 2);
  CHECK(c.err.find("image_sise") != std::string::npos);
}

TEST_CASE("end-to-end pipeline on a synthetic corpus") {
  Workspace ws;
  const std::string data = ws.path("data");
  REQUIRE(run({"synth", "--out", data, "--per-class", "5", "--size", "16", "--seed", "4"}).code == 0);

  const Run t = train(ws, data, "model.gvsm", "9");
  REQUIRE(t.code == 0);
  CHECK(t.out.find("effective configuration:") != std::string::npos);
  CHECK(t.out.find("projection_dim = 16") != std::string::npos);
  CHECK(t.out.find("batch_size = 4") != std::string::npos);
  CHECK(t.out.find("label_smoothing = 0.2") != std::string::npos);
  CHECK(fs::exists(ws.path("model.gvsm")));
  const auto history = csv_rows(slurp(ws.path("model.history.csv")));
  CHECK(history.size() == 4);
  const auto eval = csv_rows(slurp(ws.path("model.eval.csv")));
  REQUIRE(eval.size() == 5);
  CHECK(eval.back().rfind("macro,", 0) == 0);
  CHECK(fs::exists(ws.path("model.confusion.txt")));

  SUBCASE("same seed gives identical outputs") {
    REQUIRE(train(ws, data, "again.gvsm", "9").code == 0);
    CHECK(slurp(ws.path("again.gvsm")) == slurp(ws.path("model.gvsm")));
    CHECK(slurp(ws.path("again.history.csv")) == slurp(ws.path("model.history.csv")));
    REQUIRE(train(ws, data, "other.gvsm", "10").code == 0);
    CHECK(slurp(ws.path("other.gvsm")) != slurp(ws.path("model.gvsm")));
  }

  SUBCASE("evaluate reproduces the training report") {
    const Run e = run({"evaluate", "--model", ws.path("model.gvsm"), "--data", data, "--out", ws.path("e.csv"),
                       "--confusion", ws.path("e.txt")});
    REQUIRE(e.code == 0);
    CHECK(slurp(ws.path("e.csv")) == slurp(ws.path("model.eval.csv")));
    CHECK(slurp(ws.path("e.txt")) == slurp(ws.path("model.confusion.txt")));
    const Run all = run({"evaluate", "--model", ws.path("model.gvsm"), "--data", data, "--split", "all"});
    REQUIRE(all.code == 0);
    CHECK(all.out.find("macro,") != std::string::npos);
  }

  SUBCASE("predict prints a distribution") {
    const std::string image = (fs::path(data) / "green_healthy" / "000.png").string();
    const Run p = run({"predict", "--model", ws.path("model.gvsm"), "--image", image, "--top", "39"});
    REQUIRE(p.code == 0);
    const auto lines = csv_rows(p.out);
    CHECK(lines.size() == 3);
    double total = 0.0, prev = 2.0;
    for (const auto& line : lines) {
      const double v = std::stod(line.substr(line.find('\t') + 1));
      CHECK(v <= prev);
      prev = v;
      total += v;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(csv_rows(run({"predict", "--model", ws.path("model.gvsm"), "--image", image, "--top", "1"}).out).size() == 1);

    std::ofstream(ws.path("junk.png")) << "not a png";
    CHECK(run({"predict", "--model", ws.path("model.gvsm"), "--image", ws.path("junk.png")}).code == 2);
  }

  SUBCASE("quantize and compare") {
    const Run q = run({"quantize", "--model", ws.path("model.gvsm"), "--out", ws.path("model.q.gvsm")});
    REQUIRE(q.code == 0);
    const auto bytes = slurp(ws.path("model.q.gvsm"));
    const std::vector<std::uint8_t> raw(bytes.begin(), bytes.end());
    for (const auto& rec : read_manifest(raw)) {
      const bool matrix = rec.name.find("weight") != std::string::npos || rec.name == "vit.pos_embed";
      CHECK(rec.dtype == (matrix ? DType::kI8 : DType::kF32));
    }
    CHECK(run({"quantize", "--model", ws.path("model.q.gvsm"), "--out", ws.path("x.gvsm")}).code == 2);

    std::ofstream(ws.path("pc.cfg")) << "quant_granularity = per_channel\n";
    REQUIRE(run({"quantize", "--model", ws.path("model.gvsm"), "--out", ws.path("pc.gvsm"), "--config",
                 ws.path("pc.cfg")}).code == 0);
    const auto pc = std::get<QuantizedModel>(load_model(ws.path("pc.gvsm")));
    CHECK(pc.params.head.svm_weight.per_channel());
    REQUIRE(run({"quantize", "--model", ws.path("model.gvsm"), "--out", ws.path("pt.gvsm"), "--config",
                 ws.path("pc.cfg"), "--granularity", "per_tensor"}).code == 0);
    CHECK_FALSE(std::get<QuantizedModel>(load_model(ws.path("pt.gvsm"))).params.head.svm_weight.per_channel());

    const Run c = run({"compare", "--float", ws.path("model.gvsm"), "--quant", ws.path("model.q.gvsm"), "--data", data,
                       "--out", ws.path("cmp.csv")});
    REQUIRE(c.code == 0);
    const auto rows = csv_rows(slurp(ws.path("cmp.csv")));
    REQUIRE(rows.size() == 2);
    std::vector<std::string> cols;
    std::istringstream row(rows[1]);
    for (std::string f; std::getline(row, f, ',');) cols.push_back(f);
    REQUIRE(cols.size() == 8);
    CHECK(std::stod(cols[7]) > 1.0);

    // The float accuracy matches the macro row of the training report.
    const auto eval = csv_rows(slurp(ws.path("model.eval.csv")));
    std::vector<std::string> macro;
    std::istringstream mrow(eval.back());
    for (std::string f; std::getline(mrow, f, ',');) macro.push_back(f);
    CHECK(std::stod(cols[0]) == doctest::Approx(std::stod(macro[4])));
  }
}

TEST_CASE("gcc-stats") {
  Workspace ws;
  const std::string data = ws.path("data");
  REQUIRE(run({"synth", "--out", data, "--per-class", "4", "--size", "16"}).code == 0);

  const Run both = run({"gcc-stats", "--data", data});
  REQUIRE(both.code == 0);
  const auto rows = csv_rows(both.out);
  REQUIRE(rows.size() == 1 + 2 + 3);
  CHECK(rows[0] == "group,n,mean,median,q1,q3,min,max");
  auto mean_of = [&](const std::string& group) {
    for (const auto& r : rows) {
      if (r.rfind(group + ",", 0) == 0) {
        std::istringstream in(r);
        std::string g, n, mean;
        std::getline(in, g, ',');
        std::getline(in, n, ',');
        std::getline(in, mean, ',');
        return std::stod(mean);
      }
    }
    FAIL("group missing: " << group);
    return 0.0;
  };
  CHECK(mean_of("healthy") > mean_of("diseased"));

  REQUIRE(run({"gcc-stats", "--data", data, "--group", "health", "--out", ws.path("g.csv")}).code == 0);
  CHECK(csv_rows(slurp(ws.path("g.csv"))).size() == 3);

  SUBCASE("single class gives one row") {
    const fs::path one = ws.root / "one" / "leaf";
    fs::create_directories(one);
    fs::copy_file(fs::path(data) / "green_healthy" / "000.png", one / "a.png");
    const Run r = run({"gcc-stats", "--data", (ws.root / "one").string(), "--group", "class"});
    REQUIRE(r.code == 0);
    const auto single = csv_rows(r.out);
    REQUIRE(single.size() == 2);
    std::vector<std::string> cols;
    std::istringstream in(single[1]);
    for (std::string f; std::getline(in, f, ',');) cols.push_back(f);
    REQUIRE(cols.size() == 8);
    CHECK(cols[0] == "leaf");
    CHECK(cols[1] == "1");
    CHECK(cols[6] == cols[7]);
    CHECK(cols[2] == cols[3]);
  }
}
