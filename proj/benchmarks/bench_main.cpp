#include <benchmark/benchmark.h>

#include "gccvit/classifier.hpp"
#include "gccvit/quantize.hpp"
#include "gccvit/synthetic.hpp"
#include "gccvit/training.hpp"

using namespace gccvit;

namespace {

RgbImage random_image(std::size_t size, Rng& rng) {
  std::vector<float> px(size * size * 3);
  for (float& v : px) v = static_cast<float>(uniform(rng, 0, 1));
  return RgbImage(size, size, std::move(px));
}

Model desk_model(std::size_t layers) {
  VitConfig vit;
  vit.image_size = 32;
  vit.num_layers = layers;
  HeadConfig head;
  head.num_classes = 3;
  return init_model(vit, head, {"a", "b", "c"}, 1);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor a = uniform_tensor({n, n}, -1, 1, rng);
  const Tensor b = uniform_tensor({n, n}, -1, 1, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

// Patch tokens of a 32x32 image into a 64-wide projection.
void BM_Linear(benchmark::State& state) {
  Rng rng(2);
  const Tensor x = uniform_tensor({65, 64}, -1, 1, rng);
  const Tensor w = uniform_tensor({64, 128}, -0.1f, 0.1f, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(x, w));
}
BENCHMARK(BM_Linear);

void BM_QuantizedLinear(benchmark::State& state) {
  Rng rng(2);
  const Tensor x = uniform_tensor({65, 64}, -1, 1, rng);
  const QuantizedTensor w = quantize_tensor(uniform_tensor({64, 128}, -0.1f, 0.1f, rng));
  for (auto _ : state) benchmark::DoNotOptimize(quantized_matmul(x, w));
}
BENCHMARK(BM_QuantizedLinear);

void BM_Predict(benchmark::State& state) {
  const Model m = desk_model(static_cast<std::size_t>(state.range(0)));
  Rng rng(3);
  const RgbImage img = random_image(32, rng);
  for (auto _ : state) benchmark::DoNotOptimize(predict(m, img));
}
BENCHMARK(BM_Predict)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_QuantizedPredict(benchmark::State& state) {
  const QuantizedModel qm = quantize_model(desk_model(static_cast<std::size_t>(state.range(0))));
  Rng rng(3);
  const RgbImage img = random_image(32, rng);
  for (auto _ : state) benchmark::DoNotOptimize(quantized_forward(qm, img));
}
BENCHMARK(BM_QuantizedPredict)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

// Forward and backward for one image.
void BM_TrainStep(benchmark::State& state) {
  const Model m = desk_model(static_cast<std::size_t>(state.range(0)));
  HeadConfig head;
  head.num_classes = 3;
  Rng rng(4);
  const RgbImage img = random_image(32, rng);
  for (auto _ : state) {
    Tape tape;
    const ModelVars vars = bind(tape, m.params, true);
    const Var l = loss(forward(tape, vars, m.vit, img), 0, 0.2f, vars.head, head);
    tape.backward(l);
    benchmark::DoNotOptimize(vars.head.svm_bias.grad());
  }
}
BENCHMARK(BM_TrainStep)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_Epoch(benchmark::State& state) {
  SyntheticSpec spec;
  spec.per_class = 10;
  const Dataset ds = make_synthetic_dataset(spec);
  std::vector<LabeledImage> data;
  for (const auto& it : ds.items) data.push_back({*it.image, it.label});
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.epochs = 1;
  for (auto _ : state) {
    Model m = desk_model(8);
    benchmark::DoNotOptimize(train_model(m, data, {}, cfg));
  }
}
BENCHMARK(BM_Epoch)->Unit(benchmark::kMillisecond)->Iterations(2);

}  // namespace

BENCHMARK_MAIN();
