#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "vmseg/ss2d.hpp"

namespace vmseg {

struct VMUNetConfig {
  static constexpr int64_t patch_size = 4;
  static constexpr int64_t num_classes = 1;

  int64_t embed_dim = 96;
  int64_t state_dim = 16;
  std::array<int64_t, 4> depths = {2, 2, 9, 2};
  std::array<int64_t, 4> dec_depths = {2, 2, 2, 2};
  double expansion = 2.0;
  bool share_projections = false;
  DiscretizeMode mode = DiscretizeMode::exact;
  int64_t in_h = 448;
  int64_t in_w = 448;

  // Channel width of encoder stage s (decoder stage 3-s).
  int64_t stage_dim(int s) const { return embed_dim << s; }
  // Inner width of a VSS block operating at c channels.
  int64_t hidden_dim(int64_t c) const;
  void validate() const;

  static VMUNetConfig full_scale();
  static VMUNetConfig tiny();
};

// [c,h,w] feature map <-> [h*w,c] row-major token sequence.
template <typename T> Tensor<T> to_seq(const Tensor<T>& fm);
template <typename T> Tensor<T> to_map(const Tensor<T>& seq, int64_t h, int64_t w);

template <typename T>
struct LinearLayer {
  Tensor<T> w;
  Tensor<T> b;

  static LinearLayer init(int64_t in, int64_t out, bool bias, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x) const;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "_w", w);
    if (b.defined()) f(prefix + "_b", b);
  }
};

template <typename T>
struct LayerNormParams {
  Tensor<T> g;
  Tensor<T> b;

  static LayerNormParams init(int64_t d);
  Tensor<T> forward(const Tensor<T>& x) const { return layer_norm(x, g, b); }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "_g", g);
    f(prefix + "_b", b);
  }
};

// 4x4x3 patches to embed_dim tokens, then normalization.
template <typename T>
struct PatchEmbed {
  LinearLayer<T> proj;
  LayerNormParams<T> norm;

  static PatchEmbed init(int64_t embed_dim, Rng& rng);
  Tensor<T> forward(const Tensor<T>& image) const;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    proj.visit(prefix, f);
    norm.visit(prefix + ".ln", f);
  }
};

// Concatenate 2x2 neighborhoods, normalize, project 4c -> 2c.
template <typename T>
struct PatchMerge {
  LayerNormParams<T> norm;
  Tensor<T> w;

  static PatchMerge init(int64_t c, Rng& rng);
  Tensor<T> forward(const Tensor<T>& fm) const;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    norm.visit(prefix + ".ln", f);
    f(prefix + ".w", w);
  }
};

// Non-final: project c -> 2c and spread over a 2x doubled grid at c/2 channels.
// Final: project c -> 16c and spread 4x in each direction keeping c channels.
template <typename T>
struct PatchExpand {
  Tensor<T> w;
  bool final_stage = false;

  static PatchExpand init(int64_t c, bool final_stage, Rng& rng);
  Tensor<T> forward(const Tensor<T>& fm) const;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".w", w);
  }
};

// Two-pathway residual unit: a SiLU gate and a conv+SS2D pathway merged by
// elementwise product, then projected back to the block width.
template <typename T>
struct VSSBlock {
  LayerNormParams<T> norm1;
  LinearLayer<T> gate;
  LinearLayer<T> inp;
  Tensor<T> conv;
  Ss2d<T> ss;
  LayerNormParams<T> norm2;
  LinearLayer<T> out;

  static VSSBlock init(int64_t c, int64_t hidden, int64_t state_dim, DiscretizeMode mode,
                       bool share_projections, Rng& rng);
  Tensor<T> forward(const Tensor<T>& fm) const;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    norm1.visit(prefix + ".ln1", f);
    gate.visit(prefix + ".gate", f);
    inp.visit(prefix + ".in", f);
    f(prefix + ".conv", conv);
    ss.visit(prefix + ".ss", f);
    norm2.visit(prefix + ".ln2", f);
    out.visit(prefix + ".out", f);
  }
};

template <typename T>
struct VMUNet {
  VMUNetConfig cfg;
  PatchEmbed<T> embed;
  std::array<std::vector<VSSBlock<T>>, 4> enc;
  std::array<PatchMerge<T>, 3> merges;
  std::array<std::vector<VSSBlock<T>>, 4> dec;
  std::array<PatchExpand<T>, 3> expands;
  PatchExpand<T> final_expand;
  LinearLayer<T> head;

  static VMUNet init(const VMUNetConfig& cfg, Rng& rng);
  // [3, in_h, in_w] image -> [1, in_h, in_w] logits.
  Tensor<T> forward(const Tensor<T>& image) const;

  template <typename F>
  void visit(F&& f) {
    embed.visit("embed", f);
    for (int s = 0; s < 4; ++s) {
      for (size_t i = 0; i < enc[size_t(s)].size(); ++i)
        enc[size_t(s)][i].visit("enc" + std::to_string(s) + ".b" + std::to_string(i), f);
      if (s < 3) merges[size_t(s)].visit("merge" + std::to_string(s), f);
    }
    for (int s = 0; s < 4; ++s) {
      for (size_t i = 0; i < dec[size_t(s)].size(); ++i)
        dec[size_t(s)][i].visit("dec" + std::to_string(s) + ".b" + std::to_string(i), f);
      if (s < 3) expands[size_t(s)].visit("expand" + std::to_string(s), f);
    }
    final_expand.visit("final_expand", f);
    head.visit("head", f);
  }

  // Named trainable tensors in visit order, deduplicated by node identity so
  // shared projections appear once.
  std::vector<std::pair<std::string, Tensor<T>>> parameters();
  int64_t param_count();
};

#define VMSEG_DECLARE_VMUNET(T)                      \
  extern template struct LinearLayer<T>;             \
  extern template struct LayerNormParams<T>;          \
  extern template struct PatchEmbed<T>;               \
  extern template struct PatchMerge<T>;              \
  extern template struct PatchExpand<T>;              \
  extern template struct VSSBlock<T>;                 \
  extern template struct VMUNet<T>;

VMSEG_DECLARE_VMUNET(float)
VMSEG_DECLARE_VMUNET(double)

#undef VMSEG_DECLARE_VMUNET

}  // namespace vmseg
