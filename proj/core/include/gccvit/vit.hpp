#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "gccvit/autodiff.hpp"
#include "gccvit/image.hpp"
#include "gccvit/random.hpp"
#include "gccvit/tensor.hpp"

namespace gccvit {

struct QuantizedTensor;

struct VitConfig {
  std::size_t image_size = 64;
  std::size_t patch_size = 4;
  std::size_t projection_dim = 64;
  std::size_t num_heads = 4;
  std::size_t num_layers = 8;
  std::size_t mlp_hidden = 128;
  float layer_norm_eps = 1e-6f;

  std::size_t num_patches() const { return (image_size / patch_size) * (image_size / patch_size); }
  std::size_t patch_dim() const { return patch_size * patch_size * 3; }
  std::size_t key_dim() const { return projection_dim / num_heads; }
  /// Throws ConfigError on indivisible sizes or zero dimensions.
  void validate() const;

  friend bool operator==(const VitConfig&, const VitConfig&) = default;
};

/// What a parameter slot holds. Only kWeight and kEmbedding matrices occupy `W` slots.
enum class Role { kWeight, kBias, kNorm, kEmbedding };

/// Parameters of one pre-norm encoder block. `W` holds matrices, `T` everything else.
/// Weight matrices are stored [in × out] and applied as x·W + b.
template <class W, class T>
struct EncoderBlockT {
  T ln1_gamma, ln1_beta;
  W wq;
  T bq;
  W wk;
  T bk;
  W wv;
  T bv;
  W wo;
  T bo;
  T ln2_gamma, ln2_beta;
  W w1;
  T b1;
  W w2;
  T b2;

  template <class Self, class F>
  static void visit(Self& s, const std::string& p, F&& f) {
    f(p + "ln1.gamma", s.ln1_gamma, Role::kNorm);
    f(p + "ln1.beta", s.ln1_beta, Role::kNorm);
    f(p + "attn.q.weight", s.wq, Role::kWeight);
    f(p + "attn.q.bias", s.bq, Role::kBias);
    f(p + "attn.k.weight", s.wk, Role::kWeight);
    f(p + "attn.k.bias", s.bk, Role::kBias);
    f(p + "attn.v.weight", s.wv, Role::kWeight);
    f(p + "attn.v.bias", s.bv, Role::kBias);
    f(p + "attn.out.weight", s.wo, Role::kWeight);
    f(p + "attn.out.bias", s.bo, Role::kBias);
    f(p + "ln2.gamma", s.ln2_gamma, Role::kNorm);
    f(p + "ln2.beta", s.ln2_beta, Role::kNorm);
    f(p + "mlp.fc1.weight", s.w1, Role::kWeight);
    f(p + "mlp.fc1.bias", s.b1, Role::kBias);
    f(p + "mlp.fc2.weight", s.w2, Role::kWeight);
    f(p + "mlp.fc2.bias", s.b2, Role::kBias);
  }
};

template <class W, class T>
struct VitT {
  W patch_weight;  // patch_dim × D
  T patch_bias;    // D
  T cls_token;     // 1 × D
  W pos_embed;     // (num_patches + 1) × D
  std::vector<EncoderBlockT<W, T>> blocks;
  T final_gamma, final_beta;

  template <class Self, class F>
  static void visit(Self& s, const std::string& p, F&& f) {
    f(p + "patch.weight", s.patch_weight, Role::kWeight);
    f(p + "patch.bias", s.patch_bias, Role::kBias);
    f(p + "cls_token", s.cls_token, Role::kEmbedding);
    f(p + "pos_embed", s.pos_embed, Role::kEmbedding);
    for (std::size_t i = 0; i < s.blocks.size(); ++i) {
      EncoderBlockT<W, T>::visit(s.blocks[i], p + "blocks." + std::to_string(i) + ".", f);
    }
    f(p + "final_norm.gamma", s.final_gamma, Role::kNorm);
    f(p + "final_norm.beta", s.final_beta, Role::kNorm);
  }
};

template <class DW, class DT, class SW, class ST>
void match_layout(VitT<DW, DT>& dst, const VitT<SW, ST>& src) {
  dst.blocks.resize(src.blocks.size());
}

/// A weight matrix bound on a tape. `quantized` is set when the matrix is served from int8
/// storage; `value` then holds its dequantized copy as a constant.
struct WeightVar {
  Var value;
  const QuantizedTensor* quantized = nullptr;
};

using VitParams = VitT<Tensor, Tensor>;
using VitVars = VitT<WeightVar, Var>;
using BlockParams = EncoderBlockT<Tensor, Tensor>;
using BlockVars = EncoderBlockT<WeightVar, Var>;

/// Truncated-normal (σ = 0.02) matrices and embeddings, zero biases, unit LayerNorm scales.
VitParams init_vit(const VitConfig& cfg, Rng& rng);

/// Non-overlapping patch_size² patches in row-major patch order, each flattened (y, x, channel).
Tensor patchify(const RgbImage& img, std::size_t patch_size);

/// x·W + b, routed through int8 dynamic-range arithmetic when `w` is quantized.
Var linear(Var x, const WeightVar& w, Var bias);

/// Projects patches, prepends the class token, adds positional embeddings.
Var embed(Var patches, const VitVars& params);

/// softmax(Q·Kᵀ / √d_k) over the key axis.
Var attention_weights(Var q, Var k);
Var attention(Var q, Var k, Var v);

/// Multi-head self-attention: per-head attention on column slices of the Q/K/V projections,
/// concatenated and passed through the output projection.
Var msa(Var z, const BlockVars& block, std::size_t num_heads);
Var mlp(Var z, const BlockVars& block);

/// z' = z + MSA(LN(z)); out = z' + MLP(LN(z')).
Var encoder_block(Var z, const BlockVars& block, const VitConfig& cfg);

/// Token matrix after all encoder blocks and the final LayerNorm.
Var encode_tokens(Var patches, const VitVars& params, const VitConfig& cfg);
/// Class-token feature of `img`, length projection_dim.
Var encode(Tape& tape, const RgbImage& img, const VitVars& params, const VitConfig& cfg);
Tensor encode(const RgbImage& img, const VitParams& params, const VitConfig& cfg);

/// Records every parameter on `tape`: as leaves when `trainable`, otherwise as constants.
VitVars bind(Tape& tape, const VitParams& params, bool trainable);

}  // namespace gccvit
