#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gncaf/autograd.hpp"
#include "gncaf/common.hpp"

namespace gncaf {

enum class FusionVariant { msa, cat, dot };

inline FusionVariant fusion_from_string(const std::string& s) {
  if (s == "msa") return FusionVariant::msa;
  if (s == "cat") return FusionVariant::cat;
  if (s == "dot") return FusionVariant::dot;
  throw ConfigError("unknown fusion variant: " + s);
}

inline std::string to_string(FusionVariant v) {
  switch (v) {
    case FusionVariant::msa: return "msa";
    case FusionVariant::cat: return "cat";
    default: return "dot";
  }
}

struct FusionLayerParams {
  int ln_gamma = -1, ln_beta = -1;
  int wq = -1, bq = -1, wk = -1, bk = -1, wv = -1, bv = -1, wo = -1, bo = -1;
  // optional feed-forward sublayer, off by default
  int ffn_ln_gamma = -1, ffn_ln_beta = -1, ffn_w1 = -1, ffn_b1 = -1, ffn_w2 = -1, ffn_b2 = -1;
};

struct FusionParams {
  FusionVariant variant = FusionVariant::msa;
  int e_pos = -1;             // b^2 x L learned, zero-initialized
  std::vector<FusionLayerParams> layers;
  int heads = 8;
  int local_tokens = 0;       // b^2
  int token_dim = 0;          // L
  bool use_ffn = false;
  int cat_w = -1, cat_b = -1; // cat variant projection 2L -> L
};

inline FusionParams init_fusion(ParamStore& store, Rng& rng, FusionVariant variant, int local_tokens,
                                int token_dim, int n_layers, int heads, bool use_ffn = false) {
  FusionParams p;
  p.variant = variant;
  p.local_tokens = local_tokens;
  p.token_dim = token_dim;
  p.heads = heads;
  p.use_ffn = use_ffn;
  p.e_pos = store.add("fusion.e_pos", Matrix::Zero(local_tokens, token_dim));
  if (variant == FusionVariant::msa) {
    require_config(n_layers >= 1, "fusion variant msa requires at least one attention layer");
    require_config(token_dim % heads == 0, "fusion: token dim not divisible by heads");
    auto init = [&](const std::string& name, int r, int c) {
      double std = std::sqrt(1.0 / r);
      Matrix w(r, c);
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = std * rng.normal();
      return store.add(name, std::move(w));
    };
    for (int l = 0; l < n_layers; ++l) {
      std::string prefix = "fusion.layer" + std::to_string(l) + ".";
      FusionLayerParams lp;
      lp.ln_gamma = store.add(prefix + "ln.gamma", Matrix::Ones(1, token_dim));
      lp.ln_beta = store.add(prefix + "ln.beta", Matrix::Zero(1, token_dim));
      lp.wq = init(prefix + "wq", token_dim, token_dim);
      lp.bq = store.add(prefix + "bq", Matrix::Zero(1, token_dim));
      lp.wk = init(prefix + "wk", token_dim, token_dim);
      lp.bk = store.add(prefix + "bk", Matrix::Zero(1, token_dim));
      lp.wv = init(prefix + "wv", token_dim, token_dim);
      lp.bv = store.add(prefix + "bv", Matrix::Zero(1, token_dim));
      lp.wo = init(prefix + "wo", token_dim, token_dim);
      lp.bo = store.add(prefix + "bo", Matrix::Zero(1, token_dim));
      if (use_ffn) {
        lp.ffn_ln_gamma = store.add(prefix + "ffn.ln.gamma", Matrix::Ones(1, token_dim));
        lp.ffn_ln_beta = store.add(prefix + "ffn.ln.beta", Matrix::Zero(1, token_dim));
        lp.ffn_w1 = init(prefix + "ffn.w1", token_dim, 2 * token_dim);
        lp.ffn_b1 = store.add(prefix + "ffn.b1", Matrix::Zero(1, 2 * token_dim));
        lp.ffn_w2 = init(prefix + "ffn.w2", 2 * token_dim, token_dim);
        lp.ffn_b2 = store.add(prefix + "ffn.b2", Matrix::Zero(1, token_dim));
      }
      p.layers.push_back(lp);
    }
  } else if (variant == FusionVariant::cat) {
    double std = std::sqrt(1.0 / (2 * token_dim));
    Matrix w(2 * token_dim, token_dim);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = std * rng.normal();
    p.cat_w = store.add("fusion.cat.w", std::move(w));
    p.cat_b = store.add("fusion.cat.b", Matrix::Zero(1, token_dim));
  }
  return p;
}

// Token matrix with its layout tag. In the fused layout the context token
// is the LAST row, so token selection is a prefix slice.
struct TokenSequence {
  Var tokens;
  bool fused = false;
  int local_count = 0;
};

inline Var multi_head_self_attention(Tape& t, Var x, const FusionLayerParams& lp, int heads, int token_dim) {
  int dh = token_dim / heads;
  Var q = ag::linear(t, x, t.param(lp.wq), t.param(lp.bq));
  Var k = ag::linear(t, x, t.param(lp.wk), t.param(lp.bk));
  Var v = ag::linear(t, x, t.param(lp.wv), t.param(lp.bv));
  std::vector<Var> out;
  out.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Var qh = ag::slice_cols(t, q, h * dh, dh);
    Var kh = ag::slice_cols(t, k, h * dh, dh);
    Var vh = ag::slice_cols(t, v, h * dh, dh);
    Var scores = ag::scale(t, ag::matmul(t, qh, ag::transpose(t, kh)), 1.0 / std::sqrt(dh));
    out.push_back(ag::matmul(t, ag::softmax_rows(t, scores), vh));
  }
  Var merged = out.size() == 1 ? out[0] : ag::concat_cols(t, out);
  return ag::linear(t, merged, t.param(lp.wo), t.param(lp.bo));
}

inline Var affine_layernorm(Tape& t, Var x, int gamma, int beta) {
  return ag::add_rowvec(t, ag::mul_rowvec(t, ag::layernorm_rows(t, x), t.param(gamma)), t.param(beta));
}

// Fuse local tokens with the context vector. msa: z^(0) = [z_local + e_pos;
// z_context] (the context token carries no positional encoding) through
// pre-norm residual attention layers. cat/dot skip attention and return the
// local-only layout.
inline TokenSequence fuse(Tape& t, Var z_local, Var z_context, const FusionParams& p) {
  require(t.val(z_local).rows() == p.local_tokens && t.val(z_local).cols() == p.token_dim,
          "fuse: z_local shape mismatch");
  require(t.val(z_context).rows() == 1 && t.val(z_context).cols() == p.token_dim,
          "fuse: z_context shape mismatch");

  if (p.variant == FusionVariant::cat) {
    Var rep = ag::broadcast_rows(t, z_context, p.local_tokens);
    Var cat = ag::concat_cols(t, {z_local, rep});
    Var out = ag::linear(t, cat, t.param(p.cat_w), t.param(p.cat_b));
    return TokenSequence{out, false, p.local_tokens};
  }
  if (p.variant == FusionVariant::dot) {
    Var rep = ag::broadcast_rows(t, z_context, p.local_tokens);
    return TokenSequence{ag::cwise_mul(t, z_local, rep), false, p.local_tokens};
  }

  require_config(!p.layers.empty(), "fuse: msa variant with zero attention layers");
  Var z = ag::concat_rows(t, {ag::add(t, z_local, t.param(p.e_pos)), z_context});
  for (const FusionLayerParams& lp : p.layers) {
    Var h = affine_layernorm(t, z, lp.ln_gamma, lp.ln_beta);
    z = ag::add(t, z, multi_head_self_attention(t, h, lp, p.heads, p.token_dim));
    if (p.use_ffn) {
      Var h2 = affine_layernorm(t, z, lp.ffn_ln_gamma, lp.ffn_ln_beta);
      Var ff = ag::linear(t, ag::relu(t, ag::linear(t, h2, t.param(lp.ffn_w1), t.param(lp.ffn_b1))),
                          t.param(lp.ffn_w2), t.param(lp.ffn_b2));
      z = ag::add(t, z, ff);
    }
  }
  return TokenSequence{z, true, p.local_tokens};
}

// Drop the context token, keeping the b^2 local tokens in order.
inline Var select_local_tokens(Tape& t, const TokenSequence& seq) {
  require(seq.fused, "select_local_tokens: sequence has no context token");
  return ag::slice_rows(t, seq.tokens, 0, seq.local_count);
}

}  // namespace gncaf
