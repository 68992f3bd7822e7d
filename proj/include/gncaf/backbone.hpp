#pragma once

#include <concepts>
#include <memory>
#include <string>
#include <vector>

#include "gncaf/autograd.hpp"
#include "gncaf/common.hpp"
#include "gncaf/encoders.hpp"
#include "gncaf/image.hpp"

namespace gncaf {

// Uniform surface a segmentation model must expose to plug into the fusion
// block: patch -> b^2 x L tokens, tokens -> c x (H*W) logits.
template <typename B>
concept BackboneAdapter = requires(const B& b, Tape& t, const ImageU8& patch, Var tokens, int h, int w) {
  { b.token_stride() } -> std::convertible_to<int>;
  { b.token_dim() } -> std::convertible_to<int>;
  { b.num_classes() } -> std::convertible_to<int>;
  { b.encode(t, patch) } -> std::same_as<Var>;
  { b.decode(t, tokens, h, w) } -> std::same_as<Var>;
};

// Pixel-shuffle map: token matrix b^2 x (l*l*c) -> logits c x (H*W).
inline std::shared_ptr<const std::vector<int>> pixel_shuffle_indices(int h, int w, int stride, int classes) {
  int bw = w / stride;
  int cell = stride * stride * classes;
  auto idx = std::make_shared<std::vector<int>>(static_cast<std::size_t>(classes) * h * w);
  for (int ch = 0; ch < classes; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        int token = (y / stride) * bw + (x / stride);
        int src = token * cell + (ch * stride + y % stride) * stride + x % stride;
        (*idx)[static_cast<std::size_t>(ch) * h * w + static_cast<std::size_t>(y) * w + x] = src;
      }
  return idx;
}

// Minimal token backbone: 3x3 conv stem, l x l patchify conv into tokens;
// decoder is a per-token linear to l^2*c, pixel rearrangement, and one 3x3
// refinement conv.
class MiniBackbone {
public:
  MiniBackbone() = default;

  MiniBackbone(ParamStore& store, Rng& rng, int token_stride, int token_dim, int classes, int stem_channels = 12) {
    stride_ = token_stride;
    dim_ = token_dim;
    classes_ = classes;
    stem_channels_ = stem_channels;
    auto init = [&](const std::string& name, int r, int c, double std) {
      Matrix w(r, c);
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = std * rng.normal();
      return store.add(name, std::move(w));
    };
    stem_w_ = init("backbone.stem.w", stem_channels, 3 * 9, std::sqrt(2.0 / (3 * 9)));
    stem_b_ = store.add("backbone.stem.b", Matrix::Zero(stem_channels, 1));
    int patch_in = stem_channels * token_stride * token_stride;
    patchify_w_ = init("backbone.patchify.w", token_dim, patch_in, std::sqrt(2.0 / patch_in));
    patchify_b_ = store.add("backbone.patchify.b", Matrix::Zero(token_dim, 1));
    head_w_ = init("backbone.head.w", token_dim, token_stride * token_stride * classes,
                   std::sqrt(2.0 / token_dim));
    head_b_ = store.add("backbone.head.b", Matrix::Zero(1, token_stride * token_stride * classes));
    refine_w_ = init("backbone.refine.w", classes, classes * 9, std::sqrt(2.0 / (classes * 9)));
    refine_b_ = store.add("backbone.refine.b", Matrix::Zero(classes, 1));
  }

  int token_stride() const { return stride_; }
  int token_dim() const { return dim_; }
  int num_classes() const { return classes_; }

  Var encode(Tape& t, const ImageU8& patch) const {
    require(patch.height % stride_ == 0 && patch.width % stride_ == 0,
            "backbone_encode: patch dims not divisible by token stride");
    Var x = t.input(patch_to_input(patch));
    ag::ConvShape stem{3, patch.height, patch.width, stem_channels_, 3, 1, 1};
    x = ag::relu(t, ag::conv2d(t, x, t.param(stem_w_), t.param(stem_b_), stem));
    ag::ConvShape patchify{stem_channels_, patch.height, patch.width, dim_, stride_, stride_, 0};
    x = ag::conv2d(t, x, t.param(patchify_w_), t.param(patchify_b_), patchify);
    return ag::transpose(t, x);  // b^2 x L, tokens in row-major spatial order
  }

  Var decode(Tape& t, Var tokens, int h, int w) const {
    require(h % stride_ == 0 && w % stride_ == 0, "backbone_decode: dims not divisible by token stride");
    require(t.val(tokens).rows() == static_cast<Eigen::Index>(h / stride_) * (w / stride_) &&
                t.val(tokens).cols() == dim_,
            "backbone_decode: token shape mismatch");
    Var cells = ag::linear(t, tokens, t.param(head_w_), t.param(head_b_));
    Var logits = ag::gather(t, cells, pixel_shuffle_indices(h, w, stride_, classes_), classes_, h * w);
    ag::ConvShape refine{classes_, h, w, classes_, 3, 1, 1};
    Var out = ag::conv2d(t, logits, t.param(refine_w_), t.param(refine_b_), refine);
    ensure_finite(t.val(out), "backbone_decode logits");
    return out;  // c x (H*W)
  }

private:
  int stride_ = 8, dim_ = 64, classes_ = 4, stem_channels_ = 12;
  int stem_w_ = -1, stem_b_ = -1, patchify_w_ = -1, patchify_b_ = -1;
  int head_w_ = -1, head_b_ = -1, refine_w_ = -1, refine_b_ = -1;
};

static_assert(BackboneAdapter<MiniBackbone>);

// Per-pixel argmax over channels; ties break toward the LOWEST class index.
inline LabelMask predict_class_mask(const Matrix& logits, int h, int w) {
  ensure_finite(logits, "predict_class_mask logits");
  require(logits.cols() == static_cast<Eigen::Index>(h) * w, "predict_class_mask: shape mismatch");
  LabelMask mask(h, w);
  for (Eigen::Index px = 0; px < logits.cols(); ++px) {
    int best = 0;
    double best_v = logits(0, px);
    for (Eigen::Index ch = 1; ch < logits.rows(); ++ch)
      if (logits(ch, px) > best_v) {
        best_v = logits(ch, px);
        best = static_cast<int>(ch);
      }
    mask.labels[static_cast<std::size_t>(px)] = static_cast<std::uint8_t>(best);
  }
  return mask;
}

}  // namespace gncaf
