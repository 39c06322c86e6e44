#include "vmseg/metrics.hpp"

#include <string>

#include "vmseg/errors.hpp"

namespace vmseg {

namespace {

struct Counts {
  int64_t inter = 0;
  int64_t p = 0;
  int64_t t = 0;
};

Counts overlap_counts(const BinaryMask& pred, const BinaryMask& truth, const char* who) {
  if (pred.h != truth.h || pred.w != truth.w)
    throw ShapeError(std::string(who) + ": mask sizes differ, " + std::to_string(pred.h) + "x" +
                     std::to_string(pred.w) + " vs " + std::to_string(truth.h) + "x" +
                     std::to_string(truth.w));
  size_t n = size_t(pred.h * pred.w);
  if (pred.v.size() != n || truth.v.size() != n)
    throw ContractError(std::string(who) + ": mask buffer does not match its stated size");
  Counts c;
  for (size_t i = 0; i < n; ++i) {
    uint8_t a = pred.v[i], b = truth.v[i];
    if (a > 1 || b > 1)
      throw ContractError(std::string(who) + ": masks must be strictly binary");
    c.inter += a & b;
    c.p += a;
    c.t += b;
  }
  return c;
}

}  // namespace

double dice_score(const BinaryMask& pred, const BinaryMask& truth) {
  auto c = overlap_counts(pred, truth, "dice_score");
  if (c.p + c.t == 0) return 1.0;
  return 2.0 * double(c.inter) / double(c.p + c.t);
}

double iou(const BinaryMask& pred, const BinaryMask& truth) {
  auto c = overlap_counts(pred, truth, "iou");
  int64_t uni = c.p + c.t - c.inter;
  if (uni == 0) return 1.0;
  return double(c.inter) / double(uni);
}

MeanMetrics mean_metrics(const std::vector<std::pair<BinaryMask, BinaryMask>>& pairs) {
  if (pairs.empty()) throw ContractError("mean_metrics: empty pair list");
  MeanMetrics m;
  for (const auto& [pred, truth] : pairs) {
    m.mds += dice_score(pred, truth);
    m.miou += iou(pred, truth);
  }
  m.mds /= double(pairs.size());
  m.miou /= double(pairs.size());
  return m;
}

template <typename T>
Tensor<T> dice_loss(const Tensor<T>& probs, const Tensor<T>& truth) {
  if (!probs.defined() || !truth.defined())
    throw ContractError("dice_loss: undefined tensor argument");
  if (probs.shape() != truth.shape())
    throw ShapeError("dice_loss shape mismatch: " + shape_str(probs.shape()) + " vs " +
                     shape_str(truth.shape()));
  for (T v : probs.data())
    if (!(v >= T(0) && v <= T(1)))
      throw ContractError("dice_loss: probabilities must lie in [0,1]");
  for (T v : truth.data())
    if (v != T(0) && v != T(1))
      throw ContractError("dice_loss: truth mask must be strictly binary");
  auto num = add_scalar(scale(sum(mul(probs, truth)), T(2)), T(1));
  auto den = add_scalar(add(sum(probs), sum(truth)), T(1));
  return add_scalar(neg(div(num, den)), T(1));
}

template <typename T>
BinaryMask binarize(const Tensor<T>& probs) {
  if (!probs.defined()) throw ContractError("binarize: undefined tensor");
  auto sh = probs.shape();
  if (sh.size() == 3 && sh[0] == 1) sh = {sh[1], sh[2]};
  if (sh.size() != 2)
    throw ShapeError("binarize expects [h,w] or [1,h,w], got " + shape_str(probs.shape()));
  BinaryMask m;
  m.h = sh[0];
  m.w = sh[1];
  m.v.resize(probs.data().size());
  for (size_t i = 0; i < m.v.size(); ++i) m.v[i] = probs.data()[i] > T(0.5) ? 1 : 0;
  return m;
}

template <typename T>
Tensor<T> mask_to_tensor(const BinaryMask& m) {
  std::vector<T> v(m.v.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = T(m.v[i]);
  return Tensor<T>::from_data({m.h, m.w}, std::move(v));
}

#define VMSEG_INSTANTIATE_METRICS(T)                          \
  template Tensor<T> dice_loss<T>(const Tensor<T>&, const Tensor<T>&); \
  template BinaryMask binarize<T>(const Tensor<T>&);          \
  template Tensor<T> mask_to_tensor<T>(const BinaryMask&);

VMSEG_INSTANTIATE_METRICS(float)
VMSEG_INSTANTIATE_METRICS(double)

#undef VMSEG_INSTANTIATE_METRICS

}  // namespace vmseg
