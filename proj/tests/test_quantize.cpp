#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "gccvit/dataset.hpp"
#include "gccvit/errors.hpp"
#include "gccvit/model_io.hpp"
#include "gccvit/param_visit.hpp"
#include "gccvit/quantize.hpp"

using namespace gccvit;

namespace {

double max_round_trip_error(const Tensor& w, const QuantizedTensor& q) {
  const Tensor back = dequantize_tensor(q);
  double worst = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    worst = std::max(worst, std::fabs(static_cast<double>(w[i]) - back[i]) - q.scale_for(i) / 2.0);
  }
  return worst;  // ≤ 0 when every element is within half a step
}

Model tiny_model(std::uint64_t seed) {
  VitConfig vit;
  vit.image_size = 8;
  vit.projection_dim = 8;
  vit.num_heads = 2;
  vit.num_layers = 1;
  vit.mlp_hidden = 16;
  HeadConfig head;
  head.num_classes = 3;
  head.hidden = 8;
  return init_model(vit, head, {"a", "b", "c"}, seed);
}

RgbImage random_image(std::size_t size, Rng& rng) {
  std::vector<float> px(size * size * 3);
  for (float& v : px) v = static_cast<float>(uniform(rng, 0, 1));
  return RgbImage(size, size, std::move(px));
}

}  // namespace

TEST_CASE("quantize_tensor examples") {
  const QuantizedTensor q = quantize_tensor(Tensor::vector({-1, 0, 1}));
  CHECK(q.scale() == doctest::Approx(1.0 / 127.0));
  CHECK(q.data == std::vector<std::int8_t>{-127, 0, 127});
  CHECK(q.zero_point == 0);

  const QuantizedTensor half = quantize_tensor(Tensor::vector({0.5f}));
  CHECK(half.data == std::vector<std::int8_t>{127});
  CHECK(half.scale() == doctest::Approx(0.5 / 127.0));
  CHECK(dequantize_tensor(half)[0] == 0.5f);

  const QuantizedTensor zero = quantize_tensor(Tensor({3, 4}));
  CHECK(zero.scale() == 1.0f);
  CHECK(std::all_of(zero.data.begin(), zero.data.end(), [](std::int8_t v) { return v == 0; }));
  CHECK(dequantize_tensor(zero) == Tensor({3, 4}));

  Tensor bad = Tensor::vector({1, std::numeric_limits<float>::quiet_NaN()});
  CHECK_THROWS_AS((void)quantize_tensor(bad), NumericError);
}

TEST_CASE("round trip stays within half a step") {
  Rng rng(1);
  const Tensor w = uniform_tensor({1000}, -1, 1, rng);
  const QuantizedTensor q = quantize_tensor(w);
  CHECK(max_round_trip_error(w, q) <= 1e-7);

  const Tensor m = uniform_tensor({20, 7}, -3, 3, rng);
  const QuantizedTensor pc = quantize_tensor(m, Granularity::kPerChannel);
  CHECK(pc.scales.size() == 7);
  CHECK(pc.per_channel());
  CHECK(max_round_trip_error(m, pc) <= 1e-7);
}

TEST_CASE("scale positivity and range on arbitrary finite inputs") {
  Rng rng(2);
  const float magnitudes[] = {1e-42f, 1e-38f, 1e-20f, 1e-3f, 1.0f, 1e6f, 1e30f, 3e38f};
  for (float mag : magnitudes) {
    for (int trial = 0; trial < 10; ++trial) {
      const Tensor w = uniform_tensor({8, 5}, -1, 1, rng);
      Tensor scaled = w;
      for (float& v : scaled.data()) v *= mag;
      for (Granularity g : {Granularity::kPerTensor, Granularity::kPerChannel}) {
        const QuantizedTensor q = quantize_tensor(scaled, g);
        for (float s : q.scales) {
          CHECK(s > 0.0f);
          CHECK(std::isfinite(s));
        }
        for (std::int8_t v : q.data) CHECK((v >= -127 && v <= 127));
        CHECK(max_round_trip_error(scaled, q) <= 1e-7);
      }
    }
  }
}

TEST_CASE("dequantized values are a fixed point") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor w = uniform_tensor({6, 9}, -2, 2, rng);
    for (Granularity g : {Granularity::kPerTensor, Granularity::kPerChannel}) {
      const QuantizedTensor q = quantize_tensor(w, g);
      CHECK(quantize_tensor(dequantize_tensor(q), g) == q);
    }
  }
}

TEST_CASE("quantisation preserves element order") {
  Rng rng(4);
  Tensor w = uniform_tensor({500}, -1, 1, rng);
  std::sort(w.data().begin(), w.data().end());
  const QuantizedTensor q = quantize_tensor(w);
  for (std::size_t i = 1; i < q.data.size(); ++i) CHECK(q.data[i] >= q.data[i - 1]);
}

TEST_CASE("activation quantisation") {
  CHECK_FALSE(quantize_activation(Tensor({2, 2}, 0.7f)).has_value());

  const auto a = quantize_activation(Tensor::vector({-1.0f, 0.0f, 1.55f}));
  REQUIRE(a.has_value());
  CHECK(a->scale == doctest::Approx(0.01));
  CHECK(a->zero_point == -28);
  CHECK(a->data == std::vector<std::int8_t>{-128, -28, 127});

  // All-positive input: the range is widened to include zero.
  const auto p = quantize_activation(Tensor::vector({0.5f, 2.55f}));
  REQUIRE(p.has_value());
  CHECK(p->zero_point == -128);
  CHECK(p->scale == doctest::Approx(0.01));
}

TEST_CASE("int8 matmul agrees with an integer-arithmetic oracle") {
  // Activations on a 0.01 grid spanning [-1, 1.55]: 256 levels, so the quantised codes are exact.
  const int ax[4][4] = {{-100, 20, 155, 3}, {0, -45, 60, 77}, {12, 13, -14, 100}, {155, -100, 1, 0}};
  // Weights on a 0.02 grid with a peak code of 127.
  const int wq[4][4] = {{127, -3, 40, 0}, {-90, 15, 2, 64}, {5, -127, 33, 18}, {0, 1, -7, 100}};
  Tensor x({4, 4}), w({4, 4});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      x.at(i, j) = 0.01f * static_cast<float>(ax[i][j]);
      w.at(i, j) = 0.02f * static_cast<float>(wq[i][j]);
    }
  const QuantizedTensor q = quantize_tensor(w);
  const auto act = quantize_activation(x);
  REQUIRE(act.has_value());
  const Tensor got = quantized_matmul(x, q);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      std::int64_t acc = 0;
      for (std::size_t p = 0; p < 4; ++p) acc += static_cast<std::int64_t>(ax[i][p]) * wq[p][j];
      const double oracle = static_cast<double>(acc) * 0.01 * 0.02;
      // One float rescale: acc · (scale_x · scale_w), each factor rounded once.
      const double step = std::fabs(oracle) * 4.0 * std::numeric_limits<float>::epsilon() + 1e-9;
      CHECK(std::fabs(got.at(i, j) - oracle) <= step);
    }
  CHECK_THROWS_AS((void)quantized_matmul(Tensor({2, 3}), q), DimensionError);
}

TEST_CASE("quantize_model keeps vectors in float and matrices in int8") {
  const Model m = tiny_model(5);
  const QuantizedModel qm = quantize_model(m);
  std::size_t float_count = 0, quant_count = 0;
  ModelParams::visit(m.params, "", [&](const std::string&, const Tensor&, Role) { ++float_count; });
  QuantizedParams::visit(qm.params, "", [&](const std::string&, const auto&, Role) { ++quant_count; });
  CHECK(float_count == quant_count);
  CHECK(qm.params.head.dense_bias == m.params.head.dense_bias);
  CHECK(qm.params.backbone.cls_token == m.params.backbone.cls_token);
  CHECK(qm.params.backbone.blocks[0].wq.shape == m.params.backbone.blocks[0].wq.shape());

  const Model back = dequantize_model(qm);
  ModelParams original = m.params;
  zip_visit(qm.params, original, [&](const std::string& name, const auto& q, Tensor& w, Role) {
    CAPTURE(name);
    if constexpr (std::is_same_v<std::decay_t<decltype(q)>, QuantizedTensor>) {
      CHECK(max_round_trip_error(w, q) <= 1e-7);
    } else {
      CHECK(q == w);
    }
  });
  CHECK(back.class_names == m.class_names);
}

TEST_CASE("zero-weight model gives uniform output on both paths") {
  Model m = tiny_model(6);
  ModelParams::visit(m.params, "", [](const std::string&, Tensor& t, Role) { t.fill(0.0f); });
  const QuantizedModel qm = quantize_model(m);
  Rng rng(7);
  const RgbImage img = random_image(8, rng);
  const Tensor pf = predict(m, img);
  const Tensor pq = quantized_forward(qm, img);
  CHECK(pf == pq);
  for (float v : pq.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-7));

  const std::vector<LabeledImage> data = {{img, 0}, {random_image(8, rng), 1}};
  const QuantReport r = compare(m, qm, data);
  CHECK(r.accuracy_delta == 0.0);
  CHECK(r.top1_agreement == 1.0);
  CHECK(r.samples == 2);
  CHECK(r.size_ratio > 1.0);
}

TEST_CASE("grid-aligned weights reproduce float outputs closely") {
  // Dequantised weights are exact multiples of their scales, so only activation rounding differs.
  const Model snapped = dequantize_model(quantize_model(tiny_model(8)));
  const QuantizedModel qm = quantize_model(snapped);
  CHECK(dequantize_model(qm).params.head.svm_weight == snapped.params.head.svm_weight);
  Rng rng(9);
  for (int i = 0; i < 10; ++i) {
    const RgbImage img = random_image(8, rng);
    const Tensor pf = predict(snapped, img);
    const Tensor pq = quantized_forward(qm, img);
    for (std::size_t c = 0; c < 3; ++c) CHECK(std::fabs(pf[c] - pq[c]) <= 0.02);
  }
}

TEST_CASE("default configuration shrinks by at least 3.5x") {
  VitConfig vit;
  HeadConfig head;
  std::vector<std::string> names;
  for (int i = 0; i < 39; ++i) names.push_back("c" + std::to_string(i));
  const Model m = init_model(vit, head, names, 1);
  const auto fb = serialize_model(m).size();
  const auto qb = serialize_model(quantize_model(m)).size();
  CHECK(static_cast<double>(fb) / static_cast<double>(qb) >= 3.5);
}

TEST_CASE("quant report writers") {
  QuantReport r;
  r.float_accuracy = 1.0;
  r.quantized_accuracy = 0.5;
  r.accuracy_delta = 0.5;
  r.top1_agreement = 0.5;
  r.samples = 2;
  r.float_bytes = 400;
  r.quantized_bytes = 100;
  r.size_ratio = 4.0;
  std::ostringstream csv, text;
  write_quant_report_csv(csv, r);
  CHECK(csv.str() ==
        "float_accuracy,quantized_accuracy,accuracy_delta,top1_agreement,samples,float_bytes,quantized_bytes,"
        "size_ratio\n1,0.5,0.5,0.5,2,400,100,4\n");
  write_quant_report_text(text, r);
  CHECK(text.str().find("100.00%") != std::string::npos);
}
