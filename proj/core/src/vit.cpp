#include "gccvit/vit.hpp"

#include <cmath>
#include <type_traits>

#include "gccvit/errors.hpp"
#include "gccvit/param_visit.hpp"
#include "gccvit/quantize.hpp"

namespace gccvit {

namespace {
constexpr float kInitStddev = 0.02f;
}

void VitConfig::validate() const {
  if (image_size == 0 || patch_size == 0 || projection_dim == 0 || num_heads == 0 || mlp_hidden == 0) {
    throw ConfigError("ViT dimensions must be positive");
  }
  if (image_size % patch_size != 0) {
    throw ConfigError("image_size " + std::to_string(image_size) + " is not divisible by patch_size " +
                      std::to_string(patch_size));
  }
  if (projection_dim % num_heads != 0) {
    throw ConfigError("projection_dim " + std::to_string(projection_dim) + " is not divisible by num_heads " +
                      std::to_string(num_heads));
  }
  if (!(layer_norm_eps > 0.0f)) throw ConfigError("layer_norm_eps must be positive");
}

VitParams init_vit(const VitConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.projection_dim;
  VitParams p;
  p.patch_weight = truncated_normal_tensor({cfg.patch_dim(), d}, kInitStddev, rng);
  p.patch_bias = Tensor({d});
  p.cls_token = truncated_normal_tensor({1, d}, kInitStddev, rng);
  p.pos_embed = truncated_normal_tensor({cfg.num_patches() + 1, d}, kInitStddev, rng);
  p.blocks.reserve(cfg.num_layers);
  for (std::size_t i = 0; i < cfg.num_layers; ++i) {
    BlockParams b;
    b.ln1_gamma = Tensor({d}, 1.0f);
    b.ln1_beta = Tensor({d});
    b.wq = truncated_normal_tensor({d, d}, kInitStddev, rng);
    b.bq = Tensor({d});
    b.wk = truncated_normal_tensor({d, d}, kInitStddev, rng);
    b.bk = Tensor({d});
    b.wv = truncated_normal_tensor({d, d}, kInitStddev, rng);
    b.bv = Tensor({d});
    b.wo = truncated_normal_tensor({d, d}, kInitStddev, rng);
    b.bo = Tensor({d});
    b.ln2_gamma = Tensor({d}, 1.0f);
    b.ln2_beta = Tensor({d});
    b.w1 = truncated_normal_tensor({d, cfg.mlp_hidden}, kInitStddev, rng);
    b.b1 = Tensor({cfg.mlp_hidden});
    b.w2 = truncated_normal_tensor({cfg.mlp_hidden, d}, kInitStddev, rng);
    b.b2 = Tensor({d});
    p.blocks.push_back(std::move(b));
  }
  p.final_gamma = Tensor({d}, 1.0f);
  p.final_beta = Tensor({d});
  return p;
}

Tensor patchify(const RgbImage& img, std::size_t patch_size) {
  if (patch_size == 0 || img.height() % patch_size != 0 || img.width() % patch_size != 0) {
    throw DimensionError("image " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                         " is not divisible into " + std::to_string(patch_size) + "-pixel patches");
  }
  const std::size_t rows = img.height() / patch_size, cols = img.width() / patch_size;
  const std::size_t len = patch_size * patch_size * 3;
  Tensor out({rows * cols, len});
  for (std::size_t pr = 0; pr < rows; ++pr) {
    for (std::size_t pc = 0; pc < cols; ++pc) {
      float* dst = out.raw() + (pr * cols + pc) * len;
      for (std::size_t y = 0; y < patch_size; ++y)
        for (std::size_t x = 0; x < patch_size; ++x)
          for (std::size_t c = 0; c < 3; ++c) *dst++ = img.at(pr * patch_size + y, pc * patch_size + x, c);
    }
  }
  return out;
}

Var linear(Var x, const WeightVar& w, Var bias) {
  if (w.quantized) return quantized_linear(x, *w.quantized, bias);
  return add_row(matmul(x, w.value), bias);
}

Var embed(Var patches, const VitVars& params) {
  const auto& pw = params.patch_weight.value.value();
  if (patches.value().rank() != 2 || patches.value().dim(1) != pw.dim(0)) {
    throw DimensionError("patch width " + shape_to_string(patches.shape()) + " does not match projection " +
                         shape_to_string(pw.shape()));
  }
  Var projected = linear(patches, params.patch_weight, params.patch_bias);
  Var tokens = concat_rows(params.cls_token, projected);
  return add(tokens, params.pos_embed.value);
}

Var attention_weights(Var q, Var k) {
  if (q.value().rank() != 2 || k.value().rank() != 2 || q.value().dim(1) != k.value().dim(1)) {
    throw DimensionError("attention: Q " + shape_to_string(q.shape()) + " and K " + shape_to_string(k.shape()) +
                         " must share d_k");
  }
  const float inv_sqrt_dk = 1.0f / std::sqrt(static_cast<float>(q.value().dim(1)));
  return softmax(scale(matmul(q, transpose(k)), inv_sqrt_dk), -1);
}

Var attention(Var q, Var k, Var v) {
  if (v.value().rank() != 2 || k.value().dim(0) != v.value().dim(0)) {
    throw DimensionError("attention: K " + shape_to_string(k.shape()) + " and V " + shape_to_string(v.shape()) +
                         " must share the token count");
  }
  return matmul(attention_weights(q, k), v);
}

Var msa(Var z, const BlockVars& block, std::size_t num_heads) {
  const std::size_t d = z.value().dim(1);
  if (num_heads == 0 || d % num_heads != 0) {
    throw ConfigError("projection width " + std::to_string(d) + " is not divisible by " + std::to_string(num_heads) +
                      " heads");
  }
  Var q = linear(z, block.wq, block.bq);
  Var k = linear(z, block.wk, block.bk);
  Var v = linear(z, block.wv, block.bv);
  Var heads;
  if (num_heads == 1) {
    heads = attention(q, k, v);
  } else {
    const std::size_t dk = d / num_heads;
    std::vector<Var> outs;
    outs.reserve(num_heads);
    for (std::size_t h = 0; h < num_heads; ++h) {
      const std::size_t b = h * dk, e = b + dk;
      outs.push_back(attention(slice_cols(q, b, e), slice_cols(k, b, e), slice_cols(v, b, e)));
    }
    heads = concat_cols(outs);
  }
  return linear(heads, block.wo, block.bo);
}

Var mlp(Var z, const BlockVars& block) {
  return linear(gelu(linear(z, block.w1, block.b1)), block.w2, block.b2);
}

Var encoder_block(Var z, const BlockVars& block, const VitConfig& cfg) {
  Var attended = add(z, msa(layer_norm(z, block.ln1_gamma, block.ln1_beta, cfg.layer_norm_eps), block, cfg.num_heads));
  return add(attended, mlp(layer_norm(attended, block.ln2_gamma, block.ln2_beta, cfg.layer_norm_eps), block));
}

Var encode_tokens(Var patches, const VitVars& params, const VitConfig& cfg) {
  Var z = embed(patches, params);
  for (const auto& block : params.blocks) z = encoder_block(z, block, cfg);
  return layer_norm(z, params.final_gamma, params.final_beta, cfg.layer_norm_eps);
}

Var encode(Tape& tape, const RgbImage& img, const VitVars& params, const VitConfig& cfg) {
  if (img.height() != cfg.image_size || img.width() != cfg.image_size) {
    throw DimensionError("image " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                         " does not match configured size " + std::to_string(cfg.image_size));
  }
  Var patches = tape.constant(patchify(img, cfg.patch_size));
  return row(encode_tokens(patches, params, cfg), 0);
}

Tensor encode(const RgbImage& img, const VitParams& params, const VitConfig& cfg) {
  Tape tape;
  return encode(tape, img, bind(tape, params, false), cfg).value();
}

VitVars bind(Tape& tape, const VitParams& params, bool trainable) {
  VitVars vars;
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

}  // namespace gccvit
