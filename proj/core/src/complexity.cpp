#include "vmseg/complexity.hpp"

#include <algorithm>
#include <cmath>

#include "vmseg/errors.hpp"
#include "vmseg/flopcount.hpp"

namespace vmseg {

namespace {

uint64_t u(int64_t v) { return uint64_t(v); }

int64_t scan_rank(int64_t d) { return std::max<int64_t>(1, d / 16); }

}  // namespace

uint64_t flops_layer(const LayerDesc& d) {
  switch (d.kind) {
    case LayerKind::conv:
      return flops_conv(d.L, d.k, d.cin, d.cout) + (d.bias ? u(d.L) * u(d.cout) : 0);
    case LayerKind::depthwise_conv:
      return 2 * u(d.L) * u(d.k) * u(d.cin);
    case LayerKind::linear:
      return flopcount::cost_matmul(d.L, d.cin, d.cout) +
             (d.bias ? flopcount::cost_bias(d.L, d.cout) : 0);
    case LayerKind::attention:
      return flops_attention(d.L, d.cin);
    case LayerKind::scan:
      return flopcount::cost_scan(d.L, d.cin, d.H, d.exact);
    case LayerKind::norm:
      return flopcount::cost_norm(d.L * d.cin);
    case LayerKind::activation:
      return flopcount::cost_activation(d.L * d.cin);
    case LayerKind::merge:
      // normalize the grouped 4c features, then project 4c -> 2c, per output row
      return u(d.L) * u(4 * d.cin) + flopcount::cost_matmul(d.L, 4 * d.cin, 2 * d.cin);
    case LayerKind::expand:
      return flopcount::cost_matmul(d.L, d.cin, (d.final_stage ? 16 : 2) * d.cin);
  }
  throw ConfigError("unknown layer kind in descriptor '" + d.label + "'");
}

uint64_t flops_network(const ArchSpec& spec) {
  uint64_t total = 0;
  for (const auto& layer : spec.layers) total += flops_layer(layer);
  return total;
}

uint64_t flops_conv(int64_t L, int64_t k, int64_t cin, int64_t cout) {
  return 2 * u(L) * u(k) * u(cin) * u(cout);
}

uint64_t flops_attention_quadratic(int64_t L, int64_t d) {
  return 4 * u(L) * u(L) * u(d) + 2 * u(L) * u(L);
}

uint64_t flops_attention(int64_t L, int64_t d) {
  uint64_t projections = 4 * (flopcount::cost_matmul(L, d, d) + flopcount::cost_bias(L, d));
  return flops_attention_quadratic(L, d) + projections;
}

uint64_t flops_scan(int64_t L, int64_t d, int64_t H) {
  int64_t r = scan_rank(d);
  uint64_t dt_path = flopcount::cost_matmul(L, d, r) + flopcount::cost_matmul(L, r, d) +
                     flopcount::cost_bias(L, d) + flopcount::cost_activation(L * d);
  uint64_t bc_proj = 2 * flopcount::cost_matmul(L, d, H);
  return dt_path + bc_proj + flopcount::cost_scan(L, d, H, true);
}

// ---- architecture builders ----------------------------------------------------

namespace {

void vss_block_layers(ArchSpec& spec, const std::string& label, int64_t L, int64_t c, int64_t d,
                      int64_t H, bool exact) {
  int64_t r = scan_rank(d);
  auto push = [&](LayerDesc desc) {
    desc.label = label + "." + desc.label;
    spec.layers.push_back(std::move(desc));
  };
  push({LayerKind::norm, "ln1", L, c});
  push({LayerKind::linear, "gate", L, c, d, 0, 0, true, true});
  push({LayerKind::activation, "gate_silu", L, d});
  push({LayerKind::linear, "in", L, c, d, 0, 0, true, true});
  push({LayerKind::depthwise_conv, "conv", L, d, d, 9});
  push({LayerKind::activation, "conv_silu", L, d});
  for (int route = 1; route <= 4; ++route) {
    std::string rp = "route" + std::to_string(route) + ".";
    push({LayerKind::linear, rp + "dt_down", L, d, r});
    push({LayerKind::linear, rp + "dt_up", L, r, d, 0, 0, true, true});
    push({LayerKind::activation, rp + "dt_softplus", L, d});
    push({LayerKind::linear, rp + "proj_b", L, d, H});
    push({LayerKind::linear, rp + "proj_c", L, d, H});
    push({LayerKind::activation, rp + "a_exp", d, H});
    push({LayerKind::activation, rp + "a_neg", d, H});
    push({LayerKind::scan, rp + "scan", L, d, 0, 0, H, exact});
  }
  push({LayerKind::activation, "route_sum", 3 * L, d});
  push({LayerKind::norm, "ln2", L, d});
  push({LayerKind::activation, "gate_mul", L, d});
  push({LayerKind::linear, "out", L, d, c, 0, 0, true, true});
  push({LayerKind::activation, "residual", L, c});
}

}  // namespace

ArchSpec build_vmunet_arch(const VMUNetConfig& cfg, int64_t S) {
  VMUNetConfig at = cfg;
  at.in_h = at.in_w = S;
  at.validate();
  ArchSpec spec{"vmunet", S, {}};
  bool exact = cfg.mode == DiscretizeMode::exact;
  int64_t g = S / 4;
  int64_t L = g * g;
  spec.layers.push_back({LayerKind::linear, "embed", L, 48, cfg.embed_dim, 0, 0, true, true});
  spec.layers.push_back({LayerKind::norm, "embed.ln", L, cfg.embed_dim});

  std::array<int64_t, 4> stage_len;
  for (int s = 0; s < 4; ++s) {
    int64_t side = g >> s;
    int64_t Ls = side * side;
    stage_len[size_t(s)] = Ls;
    int64_t c = cfg.stage_dim(s);
    for (int64_t i = 0; i < cfg.depths[size_t(s)]; ++i)
      vss_block_layers(spec, "enc" + std::to_string(s) + ".b" + std::to_string(i), Ls, c,
                       cfg.hidden_dim(c), cfg.state_dim, exact);
    if (s < 3)
      spec.layers.push_back({LayerKind::merge, "merge" + std::to_string(s), Ls / 4, c});
  }

  for (int s = 0; s < 4; ++s) {
    int64_t c = cfg.stage_dim(3 - s);
    int64_t Ls = stage_len[size_t(3 - s)];
    if (s > 0) {
      spec.layers.push_back(
          {LayerKind::expand, "expand" + std::to_string(s - 1), Ls / 4, 2 * c});
      spec.layers.push_back({LayerKind::activation, "skip" + std::to_string(s), Ls, c});
    }
    for (int64_t i = 0; i < cfg.dec_depths[size_t(s)]; ++i)
      vss_block_layers(spec, "dec" + std::to_string(s) + ".b" + std::to_string(i), Ls, c,
                       cfg.hidden_dim(c), cfg.state_dim, exact);
  }

  spec.layers.push_back({LayerKind::expand, "final_expand", L, cfg.embed_dim, 0, 0, 0, true,
                         false, true});
  spec.layers.push_back({LayerKind::linear, "head", S * S, cfg.embed_dim, 1, 0, 0, true, true});
  return spec;
}

ArchSpec build_vit_arch(int64_t S) {
  if (S < 16 || S % 16 != 0)
    throw ConfigError("vit-core resolution must be divisible by 16, got " + std::to_string(S));
  constexpr int64_t width = 768, mlp = 3072, blocks = 12;
  int64_t L = (S / 16) * (S / 16);
  ArchSpec spec{"vit-core", S, {}};
  spec.layers.push_back({LayerKind::linear, "embed", L, 768, width, 0, 0, true, true});
  for (int64_t b = 0; b < blocks; ++b) {
    std::string p = "block" + std::to_string(b) + ".";
    spec.layers.push_back({LayerKind::norm, p + "ln1", L, width});
    spec.layers.push_back({LayerKind::attention, p + "msa", L, width});
    spec.layers.push_back({LayerKind::activation, p + "residual1", L, width});
    spec.layers.push_back({LayerKind::norm, p + "ln2", L, width});
    spec.layers.push_back({LayerKind::linear, p + "fc1", L, width, mlp, 0, 0, true, true});
    spec.layers.push_back({LayerKind::activation, p + "gelu", L, mlp});
    spec.layers.push_back({LayerKind::linear, p + "fc2", L, mlp, width, 0, 0, true, true});
    spec.layers.push_back({LayerKind::activation, p + "residual2", L, width});
  }
  spec.layers.push_back({LayerKind::norm, "ln_final", L, width});
  return spec;
}

namespace {

void unet_conv(ArchSpec& spec, const std::string& label, int64_t L, int64_t k, int64_t cin,
               int64_t cout) {
  spec.layers.push_back({LayerKind::conv, label, L, cin, cout, k, 0, true, true});
  spec.layers.push_back({LayerKind::activation, label + ".relu", L, cout});
}

void unet_encoder(ArchSpec& spec, int64_t S) {
  int64_t cin = 3;
  for (int s = 0; s <= 4; ++s) {
    int64_t side = S >> s;
    int64_t c = 64 << s;
    unet_conv(spec, "enc" + std::to_string(s) + ".conv1", side * side, 9, cin, c);
    unet_conv(spec, "enc" + std::to_string(s) + ".conv2", side * side, 9, c, c);
    cin = c;
  }
}

void unet_decoder(ArchSpec& spec, int64_t S) {
  for (int s = 3; s >= 0; --s) {
    int64_t side = S >> s;
    int64_t c = 64 << s;
    std::string p = "dec" + std::to_string(s) + ".";
    spec.layers.push_back({LayerKind::conv, p + "up", side * side, 2 * c, c, 4, 0, true, true});
    unet_conv(spec, p + "conv1", side * side, 9, 2 * c, c);
    unet_conv(spec, p + "conv2", side * side, 9, c, c);
  }
  spec.layers.push_back({LayerKind::conv, "head", S * S, 64, 1, 1, 0, true, true});
}

}  // namespace

ArchSpec build_cnn_arch(int64_t S) {
  if (S < 16 || S % 16 != 0)
    throw ConfigError("cnn-core resolution must be divisible by 16, got " + std::to_string(S));
  ArchSpec spec{"cnn-core", S, {}};
  unet_encoder(spec, S);
  unet_decoder(spec, S);
  return spec;
}

ArchSpec build_hybrid_arch(int64_t S) {
  if (S < 16 || S % 16 != 0)
    throw ConfigError("hybrid-core resolution must be divisible by 16, got " + std::to_string(S));
  ArchSpec spec{"hybrid-core", S, {}};
  unet_encoder(spec, S);
  constexpr int64_t width = 768, mlp = 3072, blocks = 12;
  int64_t L = (S / 16) * (S / 16);
  spec.layers.push_back({LayerKind::linear, "tokenize", L, 1024, width, 0, 0, true, true});
  for (int64_t b = 0; b < blocks; ++b) {
    std::string p = "block" + std::to_string(b) + ".";
    spec.layers.push_back({LayerKind::norm, p + "ln1", L, width});
    spec.layers.push_back({LayerKind::attention, p + "msa", L, width});
    spec.layers.push_back({LayerKind::activation, p + "residual1", L, width});
    spec.layers.push_back({LayerKind::norm, p + "ln2", L, width});
    spec.layers.push_back({LayerKind::linear, p + "fc1", L, width, mlp, 0, 0, true, true});
    spec.layers.push_back({LayerKind::activation, p + "gelu", L, mlp});
    spec.layers.push_back({LayerKind::linear, p + "fc2", L, mlp, width, 0, 0, true, true});
    spec.layers.push_back({LayerKind::activation, p + "residual2", L, width});
  }
  spec.layers.push_back({LayerKind::linear, "detokenize", L, width, 1024, 0, 0, true, true});
  unet_decoder(spec, S);
  return spec;
}

ArchSpec build_arch(const std::string& name, int64_t S) {
  if (name == "vmunet") return build_vmunet_arch(VMUNetConfig::full_scale(), S);
  if (name == "vit-core") return build_vit_arch(S);
  if (name == "cnn-core") return build_cnn_arch(S);
  if (name == "hybrid-core") return build_hybrid_arch(S);
  throw ConfigError("unknown architecture '" + name +
                    "' (expected vmunet, vit-core, cnn-core, hybrid-core)");
}

double poly_fit_r2(const std::vector<double>& xs, const std::vector<double>& ys, int degree) {
  if (degree < 0 || xs.size() != ys.size() || xs.size() < size_t(degree) + 1)
    throw ConfigError("polynomial fit needs at least degree+1 points");
  int m = degree + 1;
  // normal equations sum_j (sum_i x^(a+b)) c_b = sum_i x^a y
  std::vector<double> ata(size_t(m * m), 0.0), aty(size_t(m), 0.0);
  for (size_t i = 0; i < xs.size(); ++i) {
    double pa = 1.0;
    for (int a = 0; a < m; ++a) {
      double pb = pa * pa;  // x^(a+b) starting at b = a
      for (int b = a; b < m; ++b) {
        ata[size_t(a * m + b)] += pb;
        pb *= xs[i];
      }
      aty[size_t(a)] += pa * ys[i];
      pa *= xs[i];
    }
  }
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < a; ++b) ata[size_t(a * m + b)] = ata[size_t(b * m + a)];
  // Gaussian elimination with partial pivoting
  std::vector<double> coef = aty;
  for (int col = 0; col < m; ++col) {
    int pivot = col;
    for (int r = col + 1; r < m; ++r)
      if (std::abs(ata[size_t(r * m + col)]) > std::abs(ata[size_t(pivot * m + col)])) pivot = r;
    for (int c = 0; c < m; ++c) std::swap(ata[size_t(col * m + c)], ata[size_t(pivot * m + c)]);
    std::swap(coef[size_t(col)], coef[size_t(pivot)]);
    double d = ata[size_t(col * m + col)];
    if (d == 0.0) throw NumericError("singular normal equations in polynomial fit");
    for (int r = 0; r < m; ++r) {
      if (r == col) continue;
      double f = ata[size_t(r * m + col)] / d;
      for (int c = col; c < m; ++c) ata[size_t(r * m + c)] -= f * ata[size_t(col * m + c)];
      coef[size_t(r)] -= f * coef[size_t(col)];
    }
  }
  for (int a = 0; a < m; ++a) coef[size_t(a)] /= ata[size_t(a * m + a)];

  double mean = 0.0;
  for (double y : ys) mean += y;
  mean /= double(ys.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    double fit = 0.0, p = 1.0;
    for (int a = 0; a < m; ++a) {
      fit += coef[size_t(a)] * p;
      p *= xs[i];
    }
    ss_res += (ys[i] - fit) * (ys[i] - fit);
    ss_tot += (ys[i] - mean) * (ys[i] - mean);
  }
  if (ss_tot == 0.0) return 1.0;
  return 1.0 - ss_res / ss_tot;
}

}  // namespace vmseg
