#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vmseg/scan.hpp"
#include "vmseg/tensor.hpp"

namespace vmseg {

// one of the four grid traversals: 1 = row-major from the top-left,
// 2 = column-major from the top-left, 3 = reverse of 2, 4 = reverse of 1
struct RouteOrder {
  int id = 1;
  int64_t h = 0;
  int64_t w = 0;
  std::vector<int64_t> perm;  // sequence index -> flat grid index
  std::vector<int64_t> inv;   // flat grid index -> sequence index
};

RouteOrder route_order(int id, int64_t h, int64_t w);
std::array<RouteOrder, 4> all_routes(int64_t h, int64_t w);

// fm [C,h,w] -> four sequences [L,C] with L = h*w, one per route
template <typename T>
std::array<Tensor<T>, 4> scan_expand(const Tensor<T>& fm);

// inverse-permute each route's sequence back onto the grid and sum
template <typename T>
Tensor<T> scan_merge(const std::array<Tensor<T>, 4>& seqs,
                     const std::array<RouteOrder, 4>& orders);

struct Ss2dConfig {
  int64_t d = 0;                           // channel count
  int64_t H = 16;                          // state size
  int64_t dt_rank = 0;                     // 0 picks max(1, d/16)
  bool share_projections = false;          // one delta/B/C projection reused by
                                           // all routes; A and D stay per-route
  DiscretizeMode mode = DiscretizeMode::exact;
};

// four-route selective scan over a feature map: expand, per-route projections
// plus recurrence, merge
template <typename T>
struct Ss2d {
  Ss2dConfig cfg;
  std::array<ScanParams<T>, 4> routes;

  static Ss2d init(Ss2dConfig cfg, Rng& rng);

  Tensor<T> forward(const Tensor<T>& fm) const;  // [d,h,w] -> [d,h,w]

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    for (int r = 0; r < 4; ++r)
      routes[size_t(r)].visit(prefix + ".route" + std::to_string(r + 1), f);
  }
};

}  // namespace vmseg
