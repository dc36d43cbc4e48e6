#include <doctest.h>

#include <cmath>

#include "gccvit/errors.hpp"
#include "gccvit/random.hpp"
#include "gccvit/vit.hpp"

using namespace gccvit;

namespace {

RgbImage random_image(std::size_t size, Rng& rng) {
  std::vector<float> px(size * size * 3);
  for (float& v : px) v = static_cast<float>(uniform(rng, 0, 1));
  return RgbImage(size, size, std::move(px));
}

VitConfig tiny_config() {
  VitConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.projection_dim = 4;
  c.num_heads = 2;
  c.num_layers = 1;
  c.mlp_hidden = 8;
  return c;
}

// Randomises every slot, including norms and biases, so oracles exercise all terms.
VitParams random_params(const VitConfig& cfg, std::uint64_t seed, float spread = 0.5f) {
  Rng rng(seed);
  VitParams p = init_vit(cfg, rng);
  VitParams::visit(p, "", [&](const std::string&, Tensor& t, Role) { t = uniform_tensor(t.shape(), -spread, spread, rng); });
  return p;
}

// Reference kernels composed from plain tensor operations.
Tensor ref_linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, w);
  for (std::size_t r = 0; r < y.dim(0); ++r)
    for (std::size_t c = 0; c < y.dim(1); ++c) y.at(r, c) += b[c];
  return y;
}

Tensor cols(const Tensor& x, std::size_t begin, std::size_t end) {
  Tensor out({x.dim(0), end - begin});
  for (std::size_t r = 0; r < x.dim(0); ++r)
    for (std::size_t c = begin; c < end; ++c) out.at(r, c - begin) = x.at(r, c);
  return out;
}

Tensor ref_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  Tensor s = matmul(q, transpose(k));
  const float inv = 1.0f / std::sqrt(static_cast<float>(q.dim(1)));
  for (float& x : s.data()) x *= inv;
  return matmul(softmax(s, -1), v);
}

Tensor ref_msa(const Tensor& z, const BlockParams& b, std::size_t heads) {
  const Tensor q = ref_linear(z, b.wq, b.bq);
  const Tensor k = ref_linear(z, b.wk, b.bk);
  const Tensor v = ref_linear(z, b.wv, b.bv);
  const std::size_t d = z.dim(1), dk = d / heads;
  Tensor cat({z.dim(0), d});
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor o = ref_attention(cols(q, h * dk, (h + 1) * dk), cols(k, h * dk, (h + 1) * dk),
                                   cols(v, h * dk, (h + 1) * dk));
    for (std::size_t r = 0; r < o.dim(0); ++r)
      for (std::size_t c = 0; c < dk; ++c) cat.at(r, h * dk + c) = o.at(r, c);
  }
  return ref_linear(cat, b.wo, b.bo);
}

Tensor ref_block(const Tensor& z, const BlockParams& b, const VitConfig& cfg) {
  Tensor mid = z;
  const Tensor a = ref_msa(layer_norm(z, b.ln1_gamma, b.ln1_beta, cfg.layer_norm_eps), b, cfg.num_heads);
  for (std::size_t i = 0; i < mid.size(); ++i) mid[i] += a[i];
  const Tensor h = gelu(ref_linear(layer_norm(mid, b.ln2_gamma, b.ln2_beta, cfg.layer_norm_eps), b.w1, b.b1));
  const Tensor m = ref_linear(h, b.w2, b.b2);
  for (std::size_t i = 0; i < mid.size(); ++i) mid[i] += m[i];
  return mid;
}

void check_close(const Tensor& a, const Tensor& b, float tol) {
  REQUIRE(a.shape() == b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::fabs(a[i] - b[i]) <= tol);
}

}  // namespace

TEST_CASE("config validation") {
  VitConfig c;
  CHECK_NOTHROW(c.validate());
  c.image_size = 30;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = VitConfig{};
  c.num_heads = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(VitConfig{}.key_dim() == 16);
}

TEST_CASE("patchify layout") {
  Rng rng(1);
  CHECK(patchify(random_image(4, rng), 4).shape() == Shape{1, 48});

  const RgbImage img = random_image(8, rng);
  const Tensor p = patchify(img, 4);
  REQUIRE(p.shape() == Shape{4, 48});
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        CHECK(p.at(0, (y * 4 + x) * 3 + c) == img.at(y, x, c));
        CHECK(p.at(1, (y * 4 + x) * 3 + c) == img.at(y, x + 4, c));  // patch 1 is top-right
        CHECK(p.at(2, (y * 4 + x) * 3 + c) == img.at(y + 4, x, c));
      }

  CHECK(patchify(RgbImage(256, 256), 4).shape() == Shape{4096, 48});
  CHECK_THROWS_AS((void)patchify(RgbImage(6, 8), 4), DimensionError);
}

TEST_CASE("embed prepends the class token and adds positions") {
  const VitConfig cfg = tiny_config();
  VitParams params = random_params(cfg, 3);
  params.patch_bias = Tensor(params.patch_bias.shape());
  Tape tape;
  const VitVars vars = bind(tape, params, false);
  const Var tokens = embed(tape.constant(patchify(RgbImage(8, 8), 4)), vars);
  REQUIRE(tokens.shape() == Shape{5, 4});
  for (std::size_t c = 0; c < 4; ++c) {
    CHECK(tokens.value().at(0, c) == doctest::Approx(params.cls_token.at(0, c) + params.pos_embed.at(0, c)));
    for (std::size_t i = 1; i < 5; ++i) CHECK(tokens.value().at(i, c) == doctest::Approx(params.pos_embed.at(i, c)));
  }
}

TEST_CASE("embed of a single patch and patch-order sensitivity") {
  VitConfig one = tiny_config();
  one.image_size = 4;
  const VitParams p1 = random_params(one, 4);
  Tape t1;
  Rng rng(5);
  CHECK(embed(t1.constant(patchify(random_image(4, rng), 4)), bind(t1, p1, false)).shape() == Shape{2, 4});

  const VitConfig cfg = tiny_config();
  const VitParams params = random_params(cfg, 6);
  Tensor patches = patchify(random_image(8, rng), 4);
  Tensor swapped = patches;
  for (std::size_t c = 0; c < 48; ++c) std::swap(swapped.at(0, c), swapped.at(3, c));
  Tape tape;
  const VitVars vars = bind(tape, params, false);
  CHECK_FALSE(embed(tape.constant(patches), vars).value() == embed(tape.constant(swapped), vars).value());
}

TEST_CASE("attention special cases") {
  Rng rng(7);
  Tape tape;
  // N = 1: softmax of a scalar is 1.
  const Tensor v1 = uniform_tensor({1, 3}, -1, 1, rng);
  check_close(attention(tape.constant(uniform_tensor({1, 2}, -1, 1, rng)), tape.constant(uniform_tensor({1, 2}, -1, 1, rng)),
                        tape.constant(v1))
                  .value(),
              v1, 1e-6f);

  // Q orthogonal to every key: uniform weights, each row is the column mean of V.
  const Tensor q = Tensor::matrix({{1, 0}, {2, 0}, {0.5f, 0}});
  const Tensor k = Tensor::matrix({{0, 1}, {0, -3}, {0, 2}});
  const Tensor v = Tensor::matrix({{1, 2}, {3, 4}, {8, 0}});
  const Tensor out = attention(tape.constant(q), tape.constant(k), tape.constant(v)).value();
  for (std::size_t r = 0; r < 3; ++r) {
    CHECK(out.at(r, 0) == doctest::Approx(4.0));
    CHECK(out.at(r, 1) == doctest::Approx(2.0));
  }

  // Q = K = c·I with large c: attention is nearly one-hot on the diagonal.
  Tensor ci = Tensor::identity(2);
  for (float& x : ci.data()) x *= 30.0f;
  const Tensor v2 = Tensor::matrix({{1, -1}, {5, 7}});
  check_close(attention(tape.constant(ci), tape.constant(ci), tape.constant(v2)).value(), v2, 1e-4f);

  CHECK_THROWS_AS((void)attention(tape.constant(Tensor({3, 2})), tape.constant(Tensor({3, 3})), tape.constant(Tensor({3, 2}))),
                  DimensionError);
}

TEST_CASE("attention rows sum to one") {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 20, dk = 1 + rng() % 16;
    Tape tape;
    const Tensor a =
        attention_weights(tape.constant(uniform_tensor({n, dk}, -3, 3, rng)), tape.constant(uniform_tensor({n, dk}, -3, 3, rng)))
            .value();
    for (std::size_t r = 0; r < n; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < n; ++c) s += a.at(r, c);
      CHECK(std::fabs(s - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("multi-head attention matches hand-sliced heads") {
  const VitConfig cfg = tiny_config();  // D = 4, 2 heads of width 2
  const VitParams params = random_params(cfg, 9);
  Rng rng(10);
  const Tensor z = uniform_tensor({5, 4}, -1, 1, rng);
  Tape tape;
  const VitVars vars = bind(tape, params, false);
  const Tensor got = msa(tape.constant(z), vars.blocks[0], 2).value();
  CHECK(got.shape() == z.shape());
  check_close(got, ref_msa(z, params.blocks[0], 2), 1e-5f);

  // One head: plain attention followed by the output projection.
  check_close(msa(tape.constant(z), vars.blocks[0], 1).value(), ref_msa(z, params.blocks[0], 1), 1e-5f);
  CHECK_THROWS_AS((void)msa(tape.constant(z), vars.blocks[0], 3), ConfigError);
}

TEST_CASE("MSA is permutation-equivariant over tokens") {
  const VitConfig cfg = tiny_config();
  const VitParams params = random_params(cfg, 11);
  Rng rng(12);
  const Tensor z = uniform_tensor({4, 4}, -1, 1, rng);
  Tensor perm = z;
  for (std::size_t c = 0; c < 4; ++c) std::swap(perm.at(1, c), perm.at(3, c));
  Tape tape;
  const VitVars vars = bind(tape, params, false);
  const Tensor a = msa(tape.constant(z), vars.blocks[0], 2).value();
  const Tensor b = msa(tape.constant(perm), vars.blocks[0], 2).value();
  for (std::size_t c = 0; c < 4; ++c) {
    CHECK(a.at(0, c) == doctest::Approx(b.at(0, c)).epsilon(1e-5));
    CHECK(a.at(1, c) == doctest::Approx(b.at(3, c)).epsilon(1e-5));
    CHECK(a.at(3, c) == doctest::Approx(b.at(1, c)).epsilon(1e-5));
  }
}

TEST_CASE("encoder block") {
  const VitConfig cfg = tiny_config();
  Rng rng(13);
  const Tensor z = uniform_tensor({5, 4}, -10, 10, rng);

  SUBCASE("zero weights give the residual identity") {
    VitParams params = random_params(cfg, 14);
    BlockParams::visit(params.blocks[0], "", [](const std::string&, Tensor& t, Role role) {
      t = Tensor(t.shape(), role == Role::kNorm ? 1.0f : 0.0f);
    });
    // Norm betas are kNorm as well; reset them to zero.
    params.blocks[0].ln1_beta = Tensor({4});
    params.blocks[0].ln2_beta = Tensor({4});
    Tape tape;
    check_close(encoder_block(tape.constant(z), bind(tape, params, false).blocks[0], cfg).value(), z, 1e-6f);
  }

  SUBCASE("matches the step-by-step oracle and stays finite") {
    const VitParams params = random_params(cfg, 15);
    Tape tape;
    const Tensor got = encoder_block(tape.constant(z), bind(tape, params, false).blocks[0], cfg).value();
    CHECK(got.all_finite());
    check_close(got, ref_block(z, params.blocks[0], cfg), 1e-4f);
  }
}

TEST_CASE("encode") {
  VitConfig cfg;
  cfg.image_size = 16;
  cfg.num_layers = 2;
  Rng rng(16);
  const VitParams params = init_vit(cfg, rng);
  const RgbImage a = random_image(16, rng);
  const RgbImage b = random_image(16, rng);
  const Tensor fa = encode(a, params, cfg);
  CHECK(fa.shape() == Shape{64});
  CHECK(encode(a, params, cfg) == fa);
  CHECK_FALSE(encode(b, params, cfg) == fa);
  CHECK_THROWS_AS((void)encode(random_image(8, rng), params, cfg), DimensionError);
}

TEST_CASE("gradient of the encoded feature with respect to each parameter group") {
  VitConfig cfg;
  cfg.image_size = 16;
  cfg.num_layers = 1;
  cfg.projection_dim = 16;
  cfg.mlp_hidden = 32;
  VitParams params = random_params(cfg, 17, 0.2f);
  Rng rng(18);
  const RgbImage img = random_image(16, rng);

  std::vector<std::string> names;
  VitParams::visit(params, "", [&](const std::string& n, Tensor&, Role) { names.push_back(n); });
  for (std::size_t k = 0; k < names.size(); ++k) {
    CAPTURE(names[k]);
    Tensor x;
    std::size_t i = 0;
    VitParams::visit(params, "", [&](const std::string&, Tensor& t, Role) {
      if (i++ == k) x = t;
    });
    auto f = [&](Var p) {
      Tape& tape = p.tape();
      VitVars vars = bind(tape, params, false);
      std::size_t j = 0;
      VitVars::visit(vars, "", [&](const std::string&, auto& slot, Role) {
        if (j++ != k) return;
        if constexpr (std::is_same_v<std::decay_t<decltype(slot)>, WeightVar>) {
          slot.value = p;
        } else {
          slot = p;
        }
      });
      return sum(encode(tape, img, vars, cfg));
    };
    GradCheckOptions options;
    options.max_coordinates = 12;
    options.seed = k;
    CHECK(grad_check(f, x, options) < 1e-2);
  }
}
