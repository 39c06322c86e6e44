#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vmseg/vmunet.hpp"

namespace vmseg {

// Analytic FLOPs accounting under the flopcount convention (MAC = 2 ops, other
// scalar arithmetic and per-element norm/activation work = 1 op, data movement
// free). Layer descriptors use the same cost formulas as the instrumented
// counter, so summing a spec that mirrors a network's op sequence reproduces
// the instrumented execution count exactly.

enum class LayerKind {
  conv,
  depthwise_conv,
  linear,
  attention,
  scan,
  norm,
  activation,
  merge,
  expand
};

struct LayerDesc {
  LayerKind kind = LayerKind::linear;
  std::string label;
  int64_t L = 0;     // output positions / tokens
  int64_t cin = 0;   // input channels (width for attention/norm/activation)
  int64_t cout = 0;  // output channels (conv, linear)
  int64_t k = 0;     // kernel element count (conv kinds)
  int64_t H = 0;     // scan state size
  bool exact = true; // scan discretization mode
  bool bias = false; // linear/conv bias add
  bool final_stage = false;  // expand flavor
};

struct ArchSpec {
  std::string name;
  int64_t resolution = 0;
  std::vector<LayerDesc> layers;
};

uint64_t flops_layer(const LayerDesc& d);
uint64_t flops_network(const ArchSpec& spec);

// Dense convolution over L output positions with k kernel elements.
uint64_t flops_conv(int64_t L, int64_t k, int64_t cin, int64_t cout);
// Single-head self-attention over L tokens of width d, including the four
// width-preserving q/k/v/out projections with biases.
uint64_t flops_attention(int64_t L, int64_t d);
// The quadratic part of flops_attention (QK^T, softmax+scale, attention*V).
uint64_t flops_attention_quadratic(int64_t L, int64_t d);
// Selective scan over L steps at d channels and H states, including the
// low-rank step-size path (rank max(1, d/16)) and the B/C projections,
// exact discretization.
uint64_t flops_scan(int64_t L, int64_t d, int64_t H);

// Mirrors VMUNet<T>::forward op for op at resolution S (S divisible by 32).
ArchSpec build_vmunet_arch(const VMUNetConfig& cfg, int64_t S);
// Approximate comparison stacks with published dimension choices; these exist
// for the FLOPs-vs-resolution curves, not as runnable models.
ArchSpec build_vit_arch(int64_t S);
ArchSpec build_cnn_arch(int64_t S);
ArchSpec build_hybrid_arch(int64_t S);
// names: vmunet (full-scale config), vit-core, cnn-core, hybrid-core
ArchSpec build_arch(const std::string& name, int64_t S);

// R^2 of the least-squares polynomial of the given degree fitted to (xs, ys);
// used to classify FLOPs-vs-pixel-count curves as linear or quadratic.
double poly_fit_r2(const std::vector<double>& xs, const std::vector<double>& ys, int degree);

}  // namespace vmseg
