#include "vmseg/vmunet.hpp"

#include <cmath>
#include <memory>
#include <unordered_set>

#include "vmseg/errors.hpp"

namespace vmseg {

namespace {

template <typename T>
Tensor<T> init_weight(Shape shape, Rng& rng) {
  std::vector<T> v(size_t(shape_numel(shape)));
  for (auto& x : v) x = T(rng.normal(0.0, 0.02));
  return Tensor<T>::from_data(std::move(shape), std::move(v), true);
}

template <typename T>
std::array<int64_t, 3> fm_dims(const Tensor<T>& fm, const char* who) {
  if (!fm.defined()) throw ContractError(std::string(who) + ": undefined feature map");
  if (fm.shape().size() != 3)
    throw ShapeError(std::string(who) + " expects a [c,h,w] feature map, got " +
                     shape_str(fm.shape()));
  return {fm.dim(0), fm.dim(1), fm.dim(2)};
}

using IndexVec = std::shared_ptr<std::vector<int64_t>>;

IndexVec make_index(int64_t n) { return std::make_shared<std::vector<int64_t>>(size_t(n)); }

}  // namespace

// ---- config -----------------------------------------------------------------

int64_t VMUNetConfig::hidden_dim(int64_t c) const {
  int64_t d = int64_t(std::llround(double(c) * expansion));
  if (d < 1)
    throw ConfigError("block expansion " + std::to_string(expansion) + " at width " +
                      std::to_string(c) + " gives an empty hidden width");
  return d;
}

void VMUNetConfig::validate() const {
  if (embed_dim < 1) throw ConfigError("embed_dim must be positive");
  if (state_dim < 1) throw ConfigError("state_dim must be positive");
  for (auto d : depths)
    if (d < 1) throw ConfigError("encoder depths must be positive");
  for (auto d : dec_depths)
    if (d < 1) throw ConfigError("decoder depths must be positive");
  if (!(expansion > 0)) throw ConfigError("expansion must be positive");
  if (in_h < 32 || in_w < 32 || in_h % 32 != 0 || in_w % 32 != 0)
    throw ConfigError("input size " + std::to_string(in_h) + "x" + std::to_string(in_w) +
                      " must be divisible by 32");
  for (int s = 0; s < 4; ++s) (void)hidden_dim(stage_dim(s));
}

VMUNetConfig VMUNetConfig::full_scale() {
  VMUNetConfig cfg;
  cfg.embed_dim = 96;
  cfg.state_dim = 16;
  cfg.depths = {2, 2, 9, 2};
  cfg.dec_depths = {2, 2, 2, 2};
  cfg.expansion = 1.25;
  cfg.share_projections = false;
  cfg.in_h = 448;
  cfg.in_w = 448;
  return cfg;
}

VMUNetConfig VMUNetConfig::tiny() {
  VMUNetConfig cfg;
  cfg.embed_dim = 24;
  cfg.state_dim = 8;
  cfg.depths = {1, 1, 2, 1};
  cfg.dec_depths = {2, 2, 2, 2};
  cfg.expansion = 1.0;
  cfg.share_projections = true;
  cfg.in_h = 64;
  cfg.in_w = 64;
  return cfg;
}

// ---- layout helpers ----------------------------------------------------------

template <typename T>
Tensor<T> to_seq(const Tensor<T>& fm) {
  auto [c, h, w] = fm_dims(fm, "to_seq");
  return transpose(reshape(fm, {c, h * w}));
}

template <typename T>
Tensor<T> to_map(const Tensor<T>& seq, int64_t h, int64_t w) {
  if (!seq.defined() || seq.shape().size() != 2)
    throw ShapeError("to_map expects a [L,c] sequence");
  if (seq.dim(0) != h * w)
    throw ShapeError("to_map: sequence length " + std::to_string(seq.dim(0)) +
                     " does not cover a " + std::to_string(h) + "x" + std::to_string(w) + " grid");
  return reshape(transpose(seq), {seq.dim(1), h, w});
}

// ---- layers ------------------------------------------------------------------

template <typename T>
LinearLayer<T> LinearLayer<T>::init(int64_t in, int64_t out, bool bias, Rng& rng) {
  LinearLayer<T> l;
  l.w = init_weight<T>({in, out}, rng);
  if (bias) l.b = Tensor<T>::zeros({out}, true);
  return l;
}

template <typename T>
Tensor<T> LinearLayer<T>::forward(const Tensor<T>& x) const {
  auto y = matmul(x, w);
  return b.defined() ? add_bias(y, b) : y;
}

template <typename T>
LayerNormParams<T> LayerNormParams<T>::init(int64_t d) {
  return {Tensor<T>::full({d}, T(1), true), Tensor<T>::zeros({d}, true)};
}

template <typename T>
PatchEmbed<T> PatchEmbed<T>::init(int64_t embed_dim, Rng& rng) {
  PatchEmbed<T> e;
  e.proj = LinearLayer<T>::init(48, embed_dim, true, rng);
  e.norm = LayerNormParams<T>::init(embed_dim);
  return e;
}

template <typename T>
Tensor<T> PatchEmbed<T>::forward(const Tensor<T>& image) const {
  auto [ch, ih, iw] = fm_dims(image, "patch_embed");
  if (ch != 3) throw ShapeError("patch_embed expects 3 channels, got " + std::to_string(ch));
  constexpr int64_t P = VMUNetConfig::patch_size;
  if (ih % P != 0 || iw % P != 0)
    throw ConfigError("patch_embed: image " + std::to_string(ih) + "x" + std::to_string(iw) +
                      " is not divisible into " + std::to_string(P) + "x" + std::to_string(P) +
                      " patches");
  int64_t h = ih / P, w = iw / P, L = h * w;
  auto idx = make_index(L * 48);
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < w; ++c)
      for (int64_t pc = 0; pc < 3; ++pc)
        for (int64_t dr = 0; dr < P; ++dr)
          for (int64_t dc = 0; dc < P; ++dc)
            (*idx)[size_t((r * w + c) * 48 + pc * 16 + dr * P + dc)] =
                pc * ih * iw + (r * P + dr) * iw + (c * P + dc);
  auto patches = gather(image, std::move(idx), {L, 48});
  return to_map(norm.forward(proj.forward(patches)), h, w);
}

template <typename T>
PatchMerge<T> PatchMerge<T>::init(int64_t c, Rng& rng) {
  PatchMerge<T> m;
  m.norm = LayerNormParams<T>::init(4 * c);
  m.w = init_weight<T>({4 * c, 2 * c}, rng);
  return m;
}

template <typename T>
Tensor<T> PatchMerge<T>::forward(const Tensor<T>& fm) const {
  auto [c, gh, gw] = fm_dims(fm, "patch_merge");
  if (4 * c != norm.g.dim(0))
    throw ShapeError("patch_merge built for " + std::to_string(norm.g.dim(0) / 4) +
                     " channels, got " + std::to_string(c));
  if (gh % 2 != 0 || gw % 2 != 0)
    throw ShapeError("patch_merge needs even grid sides, got " + std::to_string(gh) + "x" +
                     std::to_string(gw));
  int64_t h2 = gh / 2, w2 = gw / 2, L2 = h2 * w2;
  auto idx = make_index(L2 * 4 * c);
  for (int64_t r = 0; r < h2; ++r)
    for (int64_t col = 0; col < w2; ++col)
      for (int64_t q = 0; q < 4; ++q)
        for (int64_t ch = 0; ch < c; ++ch)
          (*idx)[size_t((r * w2 + col) * 4 * c + q * c + ch)] =
              ch * gh * gw + (2 * r + q / 2) * gw + (2 * col + q % 2);
  auto grouped = gather(fm, std::move(idx), {L2, 4 * c});
  return to_map(matmul(norm.forward(grouped), w), h2, w2);
}

template <typename T>
PatchExpand<T> PatchExpand<T>::init(int64_t c, bool final_stage, Rng& rng) {
  PatchExpand<T> e;
  e.final_stage = final_stage;
  if (!final_stage && c % 2 != 0)
    throw ConfigError("patch_expand needs an even channel count, got " + std::to_string(c));
  e.w = init_weight<T>({c, final_stage ? 16 * c : 2 * c}, rng);
  return e;
}

template <typename T>
Tensor<T> PatchExpand<T>::forward(const Tensor<T>& fm) const {
  auto [c, gh, gw] = fm_dims(fm, "patch_expand");
  if (c != w.dim(0))
    throw ShapeError("patch_expand built for " + std::to_string(w.dim(0)) + " channels, got " +
                     std::to_string(c));
  int64_t f = final_stage ? 4 : 2;
  int64_t cout = final_stage ? c : c / 2;
  auto t = matmul(to_seq(fm), w);
  int64_t wide = f * f * cout;
  auto idx = make_index(gh * gw * wide);
  for (int64_t r = 0; r < gh; ++r)
    for (int64_t col = 0; col < gw; ++col)
      for (int64_t qr = 0; qr < f; ++qr)
        for (int64_t qc = 0; qc < f; ++qc)
          for (int64_t ch = 0; ch < cout; ++ch)
            (*idx)[size_t(((r * f + qr) * f * gw + col * f + qc) * cout + ch)] =
                (r * gw + col) * wide + (qr * f + qc) * cout + ch;
  auto spread = gather(t, std::move(idx), {f * f * gh * gw, cout});
  return to_map(spread, f * gh, f * gw);
}

// ---- VSS block ----------------------------------------------------------------

template <typename T>
VSSBlock<T> VSSBlock<T>::init(int64_t c, int64_t hidden, int64_t state_dim, DiscretizeMode mode,
                              bool share_projections, Rng& rng) {
  VSSBlock<T> blk;
  blk.norm1 = LayerNormParams<T>::init(c);
  blk.gate = LinearLayer<T>::init(c, hidden, true, rng);
  blk.inp = LinearLayer<T>::init(c, hidden, true, rng);
  blk.conv = init_weight<T>({hidden, 3, 3}, rng);
  Ss2dConfig scfg;
  scfg.d = hidden;
  scfg.H = state_dim;
  scfg.share_projections = share_projections;
  scfg.mode = mode;
  blk.ss = Ss2d<T>::init(scfg, rng);
  blk.norm2 = LayerNormParams<T>::init(hidden);
  blk.out = LinearLayer<T>::init(hidden, c, true, rng);
  return blk;
}

template <typename T>
Tensor<T> VSSBlock<T>::forward(const Tensor<T>& fm) const {
  auto [c, h, w] = fm_dims(fm, "vss_block");
  if (c != norm1.g.dim(0))
    throw ShapeError("vss_block built for " + std::to_string(norm1.g.dim(0)) +
                     " channels, got " + std::to_string(c));
  auto tokens = to_seq(fm);
  auto normed = norm1.forward(tokens);
  auto gated = silu(gate.forward(normed));
  auto path = to_map(inp.forward(normed), h, w);
  auto conved = silu(depthwise_conv2d(path, conv));
  auto scanned = norm2.forward(to_seq(ss.forward(conved)));
  auto merged = out.forward(mul(gated, scanned));
  return add(fm, to_map(merged, h, w));
}

// ---- full network --------------------------------------------------------------

template <typename T>
VMUNet<T> VMUNet<T>::init(const VMUNetConfig& cfg, Rng& rng) {
  cfg.validate();
  VMUNet<T> net;
  net.cfg = cfg;
  net.embed = PatchEmbed<T>::init(cfg.embed_dim, rng);
  auto make_blocks = [&](int64_t c, int64_t count) {
    std::vector<VSSBlock<T>> blocks;
    blocks.reserve(size_t(count));
    for (int64_t i = 0; i < count; ++i)
      blocks.push_back(VSSBlock<T>::init(c, cfg.hidden_dim(c), cfg.state_dim, cfg.mode,
                                         cfg.share_projections, rng));
    return blocks;
  };
  for (int s = 0; s < 4; ++s) {
    net.enc[size_t(s)] = make_blocks(cfg.stage_dim(s), cfg.depths[size_t(s)]);
    if (s < 3) net.merges[size_t(s)] = PatchMerge<T>::init(cfg.stage_dim(s), rng);
  }
  for (int s = 0; s < 4; ++s) {
    net.dec[size_t(s)] = make_blocks(cfg.stage_dim(3 - s), cfg.dec_depths[size_t(s)]);
    if (s < 3) net.expands[size_t(s)] = PatchExpand<T>::init(cfg.stage_dim(3 - s), false, rng);
  }
  net.final_expand = PatchExpand<T>::init(cfg.embed_dim, true, rng);
  net.head = LinearLayer<T>::init(cfg.embed_dim, VMUNetConfig::num_classes, true, rng);
  return net;
}

template <typename T>
Tensor<T> VMUNet<T>::forward(const Tensor<T>& image) const {
  auto [c, h, w] = fm_dims(image, "vmunet");
  if (c != 3 || h != cfg.in_h || w != cfg.in_w)
    throw ConfigError("vmunet configured for 3x" + std::to_string(cfg.in_h) + "x" +
                      std::to_string(cfg.in_w) + " input, got " + shape_str(image.shape()));
  auto fm = embed.forward(image);
  std::array<Tensor<T>, 4> enc_out;
  for (int s = 0; s < 4; ++s) {
    for (const auto& blk : enc[size_t(s)]) fm = blk.forward(fm);
    enc_out[size_t(s)] = fm;
    if (s < 3) fm = merges[size_t(s)].forward(fm);
  }
  auto up = enc_out[3];
  for (const auto& blk : dec[0]) up = blk.forward(up);
  for (int s = 1; s < 4; ++s) {
    up = add(expands[size_t(s - 1)].forward(up), enc_out[size_t(3 - s)]);
    for (const auto& blk : dec[size_t(s)]) up = blk.forward(up);
  }
  auto full = final_expand.forward(up);
  return to_map(head.forward(to_seq(full)), cfg.in_h, cfg.in_w);
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> VMUNet<T>::parameters() {
  std::vector<std::pair<std::string, Tensor<T>>> named;
  std::unordered_set<int64_t> seen;
  visit([&](const std::string& name, Tensor<T>& t) {
    if (seen.insert(t.id()).second) named.emplace_back(name, t);
  });
  return named;
}

template <typename T>
int64_t VMUNet<T>::param_count() {
  int64_t n = 0;
  for (auto& [name, t] : parameters()) n += t.numel();
  return n;
}

#define VMSEG_INSTANTIATE_VMUNET(T)                                         \
  template Tensor<T> to_seq<T>(const Tensor<T>&);                           \
  template Tensor<T> to_map<T>(const Tensor<T>&, int64_t, int64_t);         \
  template struct LinearLayer<T>;                                          \
  template struct LayerNormParams<T>;                                      \
  template struct PatchEmbed<T>;                                           \
  template struct PatchMerge<T>;                                           \
  template struct PatchExpand<T>;                                          \
  template struct VSSBlock<T>;                                             \
  template struct VMUNet<T>;

VMSEG_INSTANTIATE_VMUNET(float)
VMSEG_INSTANTIATE_VMUNET(double)

#undef VMSEG_INSTANTIATE_VMUNET

}  // namespace vmseg
