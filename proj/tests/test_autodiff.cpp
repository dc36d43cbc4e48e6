#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include "gccvit/autodiff.hpp"
#include "gccvit/errors.hpp"
#include "gccvit/random.hpp"

using namespace gccvit;

namespace {

// Inputs kept away from the ReLU/hinge kinks so central differences stay on one side.
Tensor away_from_zero(Tensor t) {
  for (float& v : t.data()) {
    if (std::fabs(v) < 0.05f) v += v < 0 ? -0.1f : 0.1f;
  }
  return t;
}

// Contracts an arbitrary-shaped output with fixed random weights to get a non-trivial scalar.
Var contract(Var y, std::uint64_t seed) {
  Rng rng(seed);
  Var w = y.tape().constant(uniform_tensor(y.shape(), -1, 1, rng));
  return sum(mul(y, w));
}

struct Case {
  std::string name;
  Shape input;
  std::function<Var(Var)> f;
};

}  // namespace

TEST_CASE("every primitive passes grad_check at 1e-3") {
  Rng rng(2024);
  const Tensor b34 = uniform_tensor({3, 4}, -1, 1, rng);
  const Tensor v4 = uniform_tensor({4}, -1, 1, rng);
  const Tensor m53 = uniform_tensor({5, 3}, -1, 1, rng);

  const std::vector<Case> cases = {
      {"matmul lhs", {2, 3}, [&](Var x) { return contract(matmul(x, x.tape().constant(b34)), 1); }},
      {"matmul rhs", {3, 4}, [&](Var x) { return contract(matmul(x.tape().constant(m53), x), 2); }},
      {"transpose", {2, 5}, [](Var x) { return contract(transpose(x), 3); }},
      {"add", {3, 4}, [&](Var x) { return contract(add(x, x.tape().constant(b34)), 4); }},
      {"mul", {3, 4}, [&](Var x) { return contract(mul(x, x), 5); }},
      {"scale", {7}, [](Var x) { return contract(scale(x, -2.5f), 6); }},
      {"add_row matrix", {3, 4}, [&](Var x) { return contract(add_row(x, x.tape().constant(v4)), 7); }},
      {"add_row vector", {4}, [&](Var x) { return contract(add_row(x.tape().constant(b34), x), 8); }},
      {"softmax last", {3, 5}, [](Var x) { return contract(softmax(x, -1), 9); }},
      {"softmax first", {3, 5}, [](Var x) { return contract(softmax(x, 0), 10); }},
      {"softmax 1-D", {6}, [](Var x) { return contract(softmax(x), 11); }},
      {"gelu", {2, 6}, [](Var x) { return contract(gelu(x), 12); }},
      {"relu", {2, 6}, [](Var x) { return contract(relu(x), 13); }},
      {"layer_norm input", {3, 4},
       [&](Var x) {
         Tape& t = x.tape();
         return contract(layer_norm(x, t.constant(v4), t.constant(Tensor({4}, 0.1f)), 1e-6f), 14);
       }},
      {"layer_norm gamma", {4},
       [&](Var x) { return contract(layer_norm(x.tape().constant(b34), x, x.tape().constant(v4), 1e-6f), 15); }},
      {"layer_norm beta", {4},
       [&](Var x) { return contract(layer_norm(x.tape().constant(b34), x.tape().constant(v4), x, 1e-6f), 16); }},
      {"reshape", {2, 6}, [](Var x) { return contract(reshape(x, {3, 4}), 17); }},
      {"slice_cols", {3, 6}, [](Var x) { return contract(slice_cols(x, 2, 5), 18); }},
      {"concat_cols", {3, 2},
       [&](Var x) { return contract(concat_cols({x, x.tape().constant(b34), x}), 19); }},
      {"concat_rows", {2, 4}, [&](Var x) { return contract(concat_rows(x, x.tape().constant(b34)), 20); }},
      {"row", {3, 4}, [](Var x) { return contract(row(x, 1), 21); }},
      {"concat", {3}, [&](Var x) { return contract(concat(x, x.tape().constant(v4)), 22); }},
      {"sum", {2, 3}, [](Var x) { return sum(x); }},
      {"sum_squares", {2, 3}, [](Var x) { return sum_squares(x); }},
      {"smoothed_cross_entropy", {5}, [](Var x) { return smoothed_cross_entropy(softmax(x), 2, 0.2f); }},
      {"multiclass_hinge", {4}, [](Var x) { return multiclass_hinge(x, 1); }},
  };

  for (const auto& c : cases) {
    CAPTURE(c.name);
    Rng input_rng(std::hash<std::string>{}(c.name));
    Tensor x = away_from_zero(uniform_tensor(c.input, -1.5f, 1.5f, input_rng));
    if (c.name == "multiclass_hinge") x = Tensor::vector({0.3f, 0.9f, 0.2f, 1.4f});
    CHECK(grad_check(c.f, x, 1e-3f) < 1e-3);
  }
}

TEST_CASE("grad_check on a quadratic") {
  Rng rng(1);
  const Tensor x = uniform_tensor({4, 5}, -3, 3, rng);
  // Central differences are exact here up to float rounding of the sum.
  CHECK(grad_check([](Var v) { return sum_squares(v); }, x, 1e-2f) < 1e-4);
  CHECK(grad_check([](Var v) { return sum_squares(v); }, Tensor::vector({0.5f, -0.25f}), 1e-2f) < 1e-5);
}

TEST_CASE("grad_check on a two-layer toy network") {
  Rng rng(8);
  const Tensor w1 = uniform_tensor({6, 8}, -0.5f, 0.5f, rng);
  const Tensor b1 = uniform_tensor({8}, -0.1f, 0.1f, rng);
  const Tensor w2 = uniform_tensor({8, 3}, -0.5f, 0.5f, rng);
  const Tensor input = uniform_tensor({2, 6}, -1, 1, rng);
  // Gradient with respect to the first-layer weights of a softmax-CE loss.
  auto f = [&](Var w) {
    Tape& t = w.tape();
    Var h = gelu(add_row(matmul(t.constant(input), w), t.constant(b1)));
    Var logits = matmul(h, t.constant(w2));
    return smoothed_cross_entropy(softmax(row(logits, 0)), 1, 0.1f);
  };
  CHECK(grad_check(f, w1, 1e-3f) < 1e-3);
}

TEST_CASE("grad_check argument validation") {
  const Tensor x = Tensor::vector({1, 2});
  auto f = [](Var v) { return sum(v); };
  CHECK_THROWS_AS((void)grad_check(f, x, 1e-6f), DomainError);
  CHECK_THROWS_AS((void)grad_check(f, x, 0.1f), DomainError);
  auto bad = [](Var v) { return scale(sum(v), std::numeric_limits<float>::infinity()); };
  CHECK_THROWS_AS((void)grad_check(bad, x, 1e-3f), NumericError);
}

TEST_CASE("grad_check subsampling checks fewer coordinates") {
  Rng rng(4);
  const Tensor x = uniform_tensor({50}, -1, 1, rng);
  std::size_t calls = 0;
  auto f = [&](Var v) {
    ++calls;
    return sum_squares(v);
  };
  GradCheckOptions options;
  options.max_coordinates = 5;
  CHECK(grad_check(f, x, options) < 1e-3);
  CHECK(calls == 1 + 2 * 5);
}

TEST_CASE("tape gives exact zeros to non-participating leaves") {
  Tape tape;
  Var used = tape.leaf(Tensor::vector({1, 2}));
  Var unused = tape.leaf(Tensor::vector({3, 4, 5}));
  tape.backward(sum_squares(used));
  CHECK(used.grad() == Tensor::vector({2, 4}));
  CHECK(unused.grad() == Tensor({3}));
}

TEST_CASE("gradients accumulate across shared uses") {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({3}));
  Var y = add(mul(x, x), scale(x, 2.0f));  // x² + 2x
  tape.backward(y);
  CHECK(x.grad()[0] == doctest::Approx(8.0));
}

TEST_CASE("constants never receive gradients") {
  Tape tape;
  Var c = tape.constant(Tensor::vector({1, 2}));
  Var y = sum(scale(c, 3.0f));
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("smoothed cross entropy clamps zero probabilities") {
  Tape tape;
  Var p = tape.leaf(Tensor::vector({1.0f, 0.0f}));
  Var l = smoothed_cross_entropy(p, 0, 0.2f);
  CHECK(std::isfinite(l.value()[0]));
  // target on class 1 is 0.1; -0.1·ln(1e-12)
  CHECK(l.value()[0] == doctest::Approx(-0.1 * std::log(1e-12)).epsilon(1e-5));
  tape.backward(l);
  CHECK(p.grad().all_finite());
}

TEST_CASE("multiclass hinge value") {
  Tape tape;
  Var z = tape.constant(Tensor::vector({2.0f, 0.5f, 1.8f}));
  // max(0, 1 + 0.5 - 2) + max(0, 1 + 1.8 - 2) = 0 + 0.8
  CHECK(multiclass_hinge(z, 0).value()[0] == doctest::Approx(0.8));
}
