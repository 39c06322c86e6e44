#pragma once

#include <cstdint>
#include <vector>

#include "vmseg/tensor.hpp"

namespace vmseg {

// Row-major binary mask; every entry must be 0 or 1.
struct BinaryMask {
  int64_t h = 0;
  int64_t w = 0;
  std::vector<uint8_t> v;
};

// Hard region-overlap metrics. The both-empty pair scores 1; every other pair
// uses the exact count ratio, so dice = 2*iou/(1+iou) holds to rounding.
double dice_score(const BinaryMask& pred, const BinaryMask& truth);
double iou(const BinaryMask& pred, const BinaryMask& truth);

struct MeanMetrics {
  double mds = 0.0;
  double miou = 0.0;
};
MeanMetrics mean_metrics(const std::vector<std::pair<BinaryMask, BinaryMask>>& pairs);

// Soft Dice loss, 1 - (2*sum(p*t) + 1) / (sum(p) + sum(t) + 1); differentiable
// in probs. probs must lie in [0,1] and truth must be exactly binary.
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& probs, const Tensor<T>& truth);

// Threshold sigmoid probabilities at 0.5 into a mask; probs is [1,h,w] or [h,w].
template <typename T>
BinaryMask binarize(const Tensor<T>& probs);

template <typename T>
Tensor<T> mask_to_tensor(const BinaryMask& m);

}  // namespace vmseg
