#include "vmseg/ss2d.hpp"

#include <algorithm>
#include <memory>

#include "vmseg/errors.hpp"

namespace vmseg {

namespace {

template <typename T>
const Tensor<T>& checked_map(const Tensor<T>& fm, const char* who) {
  if (!fm.defined()) throw ContractError(std::string(who) + ": undefined feature map");
  if (fm.rank() != 3)
    throw ShapeError(std::string(who) + ": feature map must be [C,h,w], got " +
                     shape_str(fm.shape()));
  return fm;
}

// out [L,C]: out[i,c] = fm[c, perm[i]]
template <typename T>
Tensor<T> expand_one(const Tensor<T>& fm, const RouteOrder& ro) {
  int64_t C = fm.dim(0), L = ro.h * ro.w;
  auto idx = std::make_shared<std::vector<int64_t>>(size_t(L * C));
  for (int64_t i = 0; i < L; ++i) {
    int64_t g = ro.perm[size_t(i)];
    for (int64_t c = 0; c < C; ++c) (*idx)[size_t(i * C + c)] = c * L + g;
  }
  return gather(fm, std::shared_ptr<const std::vector<int64_t>>(idx), Shape{L, C});
}

// out [C,h,w]: out[c,g] = seq[inv[g], c]
template <typename T>
Tensor<T> merge_one(const Tensor<T>& seq, const RouteOrder& ro) {
  int64_t C = seq.dim(1), L = ro.h * ro.w;
  auto idx = std::make_shared<std::vector<int64_t>>(size_t(L * C));
  for (int64_t c = 0; c < C; ++c)
    for (int64_t g = 0; g < L; ++g) (*idx)[size_t(c * L + g)] = ro.inv[size_t(g)] * C + c;
  return gather(seq, std::shared_ptr<const std::vector<int64_t>>(idx), Shape{C, ro.h, ro.w});
}

}  // namespace

RouteOrder route_order(int id, int64_t h, int64_t w) {
  if (id < 1 || id > 4) throw ConfigError("route id must be in 1..4, got " + std::to_string(id));
  if (h < 1 || w < 1)
    throw ConfigError("route grid must be at least 1x1, got " + std::to_string(h) + "x" +
                      std::to_string(w));
  int64_t L = h * w;
  RouteOrder ro;
  ro.id = id;
  ro.h = h;
  ro.w = w;
  ro.perm.resize(size_t(L));
  switch (id) {
    case 1:
      for (int64_t i = 0; i < L; ++i) ro.perm[size_t(i)] = i;
      break;
    case 2:
      for (int64_t c = 0; c < w; ++c)
        for (int64_t r = 0; r < h; ++r) ro.perm[size_t(c * h + r)] = r * w + c;
      break;
    case 3: {
      auto fwd = route_order(2, h, w);
      for (int64_t i = 0; i < L; ++i) ro.perm[size_t(i)] = fwd.perm[size_t(L - 1 - i)];
      break;
    }
    case 4:
      for (int64_t i = 0; i < L; ++i) ro.perm[size_t(i)] = L - 1 - i;
      break;
  }
  ro.inv.resize(size_t(L));
  for (int64_t i = 0; i < L; ++i) ro.inv[size_t(ro.perm[size_t(i)])] = i;
  return ro;
}

std::array<RouteOrder, 4> all_routes(int64_t h, int64_t w) {
  return {route_order(1, h, w), route_order(2, h, w), route_order(3, h, w),
          route_order(4, h, w)};
}

template <typename T>
std::array<Tensor<T>, 4> scan_expand(const Tensor<T>& fm) {
  checked_map(fm, "scan_expand");
  auto orders = all_routes(fm.dim(1), fm.dim(2));
  return {expand_one(fm, orders[0]), expand_one(fm, orders[1]), expand_one(fm, orders[2]),
          expand_one(fm, orders[3])};
}

template <typename T>
Tensor<T> scan_merge(const std::array<Tensor<T>, 4>& seqs,
                     const std::array<RouteOrder, 4>& orders) {
  int64_t L = orders[0].h * orders[0].w;
  for (int r = 0; r < 4; ++r) {
    const auto& s = seqs[size_t(r)];
    if (!s.defined() || s.rank() != 2 || s.dim(0) != L)
      throw ShapeError("scan_merge: route " + std::to_string(r + 1) + " sequence must be [" +
                       std::to_string(L) + ",C], got " +
                       (s.defined() ? shape_str(s.shape()) : std::string("undefined")));
    if (orders[size_t(r)].h != orders[0].h || orders[size_t(r)].w != orders[0].w)
      throw ShapeError("scan_merge: route orders disagree on the grid size");
    if (s.dim(1) != seqs[0].dim(1))
      throw ShapeError("scan_merge: route sequences disagree on the channel count");
  }
  auto m1 = merge_one(seqs[0], orders[0]);
  auto m2 = merge_one(seqs[1], orders[1]);
  auto m3 = merge_one(seqs[2], orders[2]);
  auto m4 = merge_one(seqs[3], orders[3]);
  return add(add(m1, m2), add(m3, m4));
}

template <typename T>
Ss2d<T> Ss2d<T>::init(Ss2dConfig cfg, Rng& rng) {
  if (cfg.d <= 0 || cfg.H <= 0) throw ConfigError("Ss2d::init: d and H must be positive");
  if (cfg.dt_rank <= 0) cfg.dt_rank = std::max<int64_t>(1, cfg.d / 16);
  Ss2d<T> s;
  s.cfg = cfg;
  for (int r = 0; r < 4; ++r)
    s.routes[size_t(r)] = ScanParams<T>::init(cfg.d, cfg.H, cfg.dt_rank, rng);
  if (cfg.share_projections) {
    for (int r = 1; r < 4; ++r) {
      s.routes[size_t(r)].wb = s.routes[0].wb;
      s.routes[size_t(r)].wc = s.routes[0].wc;
      s.routes[size_t(r)].dt_down = s.routes[0].dt_down;
      s.routes[size_t(r)].dt_up = s.routes[0].dt_up;
      s.routes[size_t(r)].dt_bias = s.routes[0].dt_bias;
    }
  }
  return s;
}

template <typename T>
Tensor<T> Ss2d<T>::forward(const Tensor<T>& fm) const {
  checked_map(fm, "Ss2d::forward");
  if (fm.dim(0) != cfg.d)
    throw ShapeError("Ss2d::forward: expected " + std::to_string(cfg.d) + " channels, got " +
                     shape_str(fm.shape()));
  auto orders = all_routes(fm.dim(1), fm.dim(2));
  std::array<Tensor<T>, 4> outs;
  for (int r = 0; r < 4; ++r) {
    auto seq = expand_one(fm, orders[size_t(r)]);
    const auto& p = routes[size_t(r)];
    ScanInputs<T> in;
    in.x = seq;
    in.delta = p.delta(seq);
    in.B = p.proj_B(seq);
    in.C = p.proj_C(seq);
    outs[size_t(r)] = scan_recurrence(in, p.A(), p.D, cfg.mode).y;
  }
  return scan_merge(outs, orders);
}

#define VMSEG_INSTANTIATE_SS2D(T)                                     \
  template struct Ss2d<T>;                                            \
  template std::array<Tensor<T>, 4> scan_expand(const Tensor<T>&);   \
  template Tensor<T> scan_merge(const std::array<Tensor<T>, 4>&,     \
                                const std::array<RouteOrder, 4>&);

VMSEG_INSTANTIATE_SS2D(float)
VMSEG_INSTANTIATE_SS2D(double)

}  // namespace vmseg
