#pragma once

#include "vmseg/vmunet.hpp"

namespace vmseg {

// Valid cross-correlation of a single-channel map with a small kernel (no
// kernel flip); output is (M-m+1) x (N-n+1).
template <typename T>
Tensor<T> conv2d_valid(const Tensor<T>& image, const Tensor<T>& kernel);

// Tokenize an image into p x p patches, project them, prepend a class token,
// and add position embeddings: z0 = [x_class; x_p1 E; ...; x_pN E] + E_pos.
template <typename T>
Tensor<T> vit_embed(const Tensor<T>& image, int64_t p, const Tensor<T>& proj,
                    const Tensor<T>& pos, const Tensor<T>& cls);

// softmax(Q K^T / sqrt(d_k)) V
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int64_t d_k);

// Pre-norm transformer block: z' = MSA(LN(z)) + z, out = MLP(LN(z')) + z'.
// Single-head attention with learned q/k/v/out maps and a GELU MLP.
template <typename T>
struct ViTBlockParams {
  LayerNormParams<T> norm1;
  LinearLayer<T> wq, wk, wv, wo;
  LayerNormParams<T> norm2;
  LinearLayer<T> fc1, fc2;

  static ViTBlockParams init(int64_t width, int64_t mlp_width, Rng& rng);
  Tensor<T> forward(const Tensor<T>& z) const;
};

}  // namespace vmseg
