#include "vmseg/baselines.hpp"

#include <cmath>
#include <memory>

#include "vmseg/errors.hpp"

namespace vmseg {

template <typename T>
Tensor<T> conv2d_valid(const Tensor<T>& image, const Tensor<T>& kernel) {
  if (!image.defined() || !kernel.defined())
    throw ContractError("conv2d_valid: undefined argument");
  if (image.shape().size() != 2 || kernel.shape().size() != 2)
    throw ShapeError("conv2d_valid expects 2-D map and kernel, got " + shape_str(image.shape()) +
                     " and " + shape_str(kernel.shape()));
  int64_t M = image.dim(0), N = image.dim(1), m = kernel.dim(0), n = kernel.dim(1);
  if (m > M || n > N)
    throw ShapeError("conv2d_valid kernel " + shape_str(kernel.shape()) +
                     " exceeds the input " + shape_str(image.shape()));
  int64_t Mo = M - m + 1, No = N - n + 1;
  auto idx = std::make_shared<std::vector<int64_t>>(size_t(Mo * No * m * n));
  for (int64_t i = 0; i < Mo; ++i)
    for (int64_t j = 0; j < No; ++j)
      for (int64_t ki = 0; ki < m; ++ki)
        for (int64_t kj = 0; kj < n; ++kj)
          (*idx)[size_t((i * No + j) * m * n + ki * n + kj)] = (i + ki) * N + (j + kj);
  auto windows = gather(image, std::move(idx), {Mo * No, m * n});
  auto col = matmul(windows, reshape(kernel, {m * n, 1}));
  return reshape(col, {Mo, No});
}

template <typename T>
Tensor<T> vit_embed(const Tensor<T>& image, int64_t p, const Tensor<T>& proj,
                    const Tensor<T>& pos, const Tensor<T>& cls) {
  if (!image.defined() || image.shape().size() != 3)
    throw ShapeError("vit_embed expects a [c,h,w] image");
  int64_t c = image.dim(0), ih = image.dim(1), iw = image.dim(2);
  if (p < 1 || ih % p != 0 || iw % p != 0)
    throw ConfigError("vit_embed: image " + std::to_string(ih) + "x" + std::to_string(iw) +
                      " is not divisible into " + std::to_string(p) + "x" + std::to_string(p) +
                      " patches");
  int64_t gh = ih / p, gw = iw / p, n = gh * gw, pd = c * p * p;
  if (proj.shape().size() != 2 || proj.dim(0) != pd)
    throw ShapeError("vit_embed projection must be [" + std::to_string(pd) + ",D], got " +
                     shape_str(proj.shape()));
  int64_t D = proj.dim(1);
  if (cls.shape() != Shape{1, D})
    throw ShapeError("vit_embed class token must be [1," + std::to_string(D) + "]");
  if (pos.shape() != Shape{n + 1, D})
    throw ShapeError("vit_embed position table must be [" + std::to_string(n + 1) + "," +
                     std::to_string(D) + "], got " + shape_str(pos.shape()));
  auto idx = std::make_shared<std::vector<int64_t>>(size_t(n * pd));
  for (int64_t r = 0; r < gh; ++r)
    for (int64_t col = 0; col < gw; ++col)
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t dr = 0; dr < p; ++dr)
          for (int64_t dc = 0; dc < p; ++dc)
            (*idx)[size_t((r * gw + col) * pd + ch * p * p + dr * p + dc)] =
                ch * ih * iw + (r * p + dr) * iw + (col * p + dc);
  auto patches = gather(image, std::move(idx), {n, pd});
  return add(concat_rows(cls, matmul(patches, proj)), pos);
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int64_t d_k) {
  if (!q.defined() || !k.defined() || !v.defined())
    throw ContractError("attention: undefined argument");
  if (q.shape().size() != 2 || k.shape().size() != 2 || v.shape().size() != 2)
    throw ShapeError("attention expects 2-D q/k/v");
  if (q.dim(1) != d_k || k.dim(1) != d_k)
    throw ShapeError("attention: q/k width must equal d_k=" + std::to_string(d_k) + ", got " +
                     shape_str(q.shape()) + " and " + shape_str(k.shape()));
  if (k.dim(0) != v.dim(0))
    throw ShapeError("attention: k and v lengths differ, " + shape_str(k.shape()) + " vs " +
                     shape_str(v.shape()));
  auto scores = scale(matmul(q, transpose(k)), T(1.0 / std::sqrt(double(d_k))));
  return matmul(softmax_rows(scores), v);
}

template <typename T>
ViTBlockParams<T> ViTBlockParams<T>::init(int64_t width, int64_t mlp_width, Rng& rng) {
  ViTBlockParams<T> p;
  p.norm1 = LayerNormParams<T>::init(width);
  p.wq = LinearLayer<T>::init(width, width, true, rng);
  p.wk = LinearLayer<T>::init(width, width, true, rng);
  p.wv = LinearLayer<T>::init(width, width, true, rng);
  p.wo = LinearLayer<T>::init(width, width, true, rng);
  p.norm2 = LayerNormParams<T>::init(width);
  p.fc1 = LinearLayer<T>::init(width, mlp_width, true, rng);
  p.fc2 = LinearLayer<T>::init(mlp_width, width, true, rng);
  return p;
}

template <typename T>
Tensor<T> ViTBlockParams<T>::forward(const Tensor<T>& z) const {
  if (!z.defined() || z.shape().size() != 2 || z.dim(1) != norm1.g.dim(0))
    throw ShapeError("vit_block expects [L," + std::to_string(norm1.g.dim(0)) + "] tokens");
  auto a = norm1.forward(z);
  auto msa = wo.forward(attention(wq.forward(a), wk.forward(a), wv.forward(a), z.dim(1)));
  auto z1 = add(z, msa);
  auto mlp = fc2.forward(gelu(fc1.forward(norm2.forward(z1))));
  return add(z1, mlp);
}

#define VMSEG_INSTANTIATE_BASELINES(T)                                                       \
  template Tensor<T> conv2d_valid<T>(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> vit_embed<T>(const Tensor<T>&, int64_t, const Tensor<T>&,               \
                                  const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> attention<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                  int64_t);                                                  \
  template struct ViTBlockParams<T>;

VMSEG_INSTANTIATE_BASELINES(float)
VMSEG_INSTANTIATE_BASELINES(double)

#undef VMSEG_INSTANTIATE_BASELINES

}  // namespace vmseg
