#include "vmseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "vmseg/errors.hpp"
#include "vmseg/metrics.hpp"
#include "vmseg/rng.hpp"

namespace vmseg {

void TrainConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("learning rate must be > 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (weight_decay < 0) throw ConfigError("weight decay must be >= 0");
  if (clip_norm < 0) throw ConfigError("clip norm must be >= 0 (0 disables)");
  if (val_fraction < 0 || val_fraction >= 1)
    throw ConfigError("validation fraction must lie in [0, 1)");
}

template <typename T>
AdamW<T> AdamW<T>::init(std::vector<std::pair<std::string, Tensor<T>>> params, double lr,
                        double weight_decay, double beta1, double beta2, double eps) {
  AdamW<T> opt;
  opt.lr = lr;
  opt.weight_decay = weight_decay;
  opt.beta1 = beta1;
  opt.beta2 = beta2;
  opt.eps = eps;
  opt.params = std::move(params);
  opt.m.reserve(opt.params.size());
  opt.v.reserve(opt.params.size());
  for (auto& [name, p] : opt.params) {
    opt.m.emplace_back(size_t(p.numel()), T(0));
    opt.v.emplace_back(size_t(p.numel()), T(0));
  }
  return opt;
}

template <typename T>
void AdamW<T>::step() {
  ++step_count;
  double bc1 = 1.0 - std::pow(beta1, double(step_count));
  double bc2 = 1.0 - std::pow(beta2, double(step_count));
  double decay = 1.0 - lr * weight_decay;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& [name, p] = params[pi];
    auto grad = p.grad();
    auto data = p.mut_data();
    auto& mi = m[pi];
    auto& vi = v[pi];
    for (size_t i = 0; i < data.size(); ++i) {
      double g = grad.empty() ? 0.0 : double(grad[i]);
      if (!std::isfinite(g))
        throw NumericError("non-finite gradient in parameter '" + name + "'");
      double mn = beta1 * double(mi[i]) + (1.0 - beta1) * g;
      double vn = beta2 * double(vi[i]) + (1.0 - beta2) * g * g;
      mi[i] = T(mn);
      vi[i] = T(vn);
      double update = (mn / bc1) / (std::sqrt(vn / bc2) + eps);
      data[i] = T(double(data[i]) * decay - lr * update);
    }
  }
}

template <typename T>
double clip_global_norm(std::vector<std::pair<std::string, Tensor<T>>>& params, double max_norm) {
  double sq = 0;
  for (auto& [name, p] : params)
    for (T g : p.grad()) sq += double(g) * double(g);
  double norm = std::sqrt(sq);
  if (norm > max_norm && max_norm > 0) {
    double s = max_norm / norm;
    for (auto& [name, p] : params) {
      if (!p.has_grad()) continue;
      for (auto& g : p.mut_grad()) g = T(double(g) * s);
    }
  }
  return norm;
}

std::string epoch_csv_header() { return "epoch,train_loss,val_mds,val_miou"; }

std::string epoch_csv_row(const EpochLog& e) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%lld,%.8g,%.8g,%.8g", static_cast<long long>(e.epoch),
                e.train_loss, e.val_mds, e.val_miou);
  return buf;
}

namespace {

template <typename T>
Tensor<T> to_precision(const Tensor<float>& x) {
  if constexpr (std::is_same_v<T, float>) {
    return x;
  } else {
    std::vector<T> v(x.data().begin(), x.data().end());
    return Tensor<T>::from_data(x.shape(), std::move(v));
  }
}

template <typename T>
Tensor<T> sample_loss(const VMUNet<T>& net, const SegSample& s) {
  auto probs = sigmoid(net.forward(to_precision<T>(s.image)));
  return dice_loss(reshape(probs, {s.mask.h, s.mask.w}), mask_to_tensor<T>(s.mask));
}

void check_sample_dims(const VMUNetConfig& cfg, const SegSample& s) {
  if (s.image.rank() != 3 || s.image.dim(0) != 3 || s.image.dim(1) != cfg.in_h ||
      s.image.dim(2) != cfg.in_w)
    throw ConfigError("sample '" + s.id + "' is " + shape_str(s.image.shape()) +
                      ", model expects [3," + std::to_string(cfg.in_h) + "," +
                      std::to_string(cfg.in_w) + "]");
  if (s.mask.h != cfg.in_h || s.mask.w != cfg.in_w)
    throw ConfigError("sample '" + s.id + "' mask size does not match the model input");
}

}  // namespace

template <typename T>
EvalResult evaluate(const VMUNet<T>& net, const std::vector<SegSample>& data) {
  if (data.empty()) throw ContractError("evaluate needs at least one sample");
  EvalResult res;
  res.rows.reserve(data.size());
  for (const auto& s : data) {
    check_sample_dims(net.cfg, s);
    auto probs = sigmoid(net.forward(to_precision<T>(s.image)));
    auto pred = binarize(probs);
    EvalRow row{s.id, dice_score(pred, s.mask), iou(pred, s.mask)};
    res.mds += row.ds;
    res.miou += row.iou;
    res.rows.push_back(std::move(row));
  }
  res.mds /= double(res.rows.size());
  res.miou /= double(res.rows.size());
  return res;
}

template <typename T>
TrainResult<T> train(const VMUNetConfig& mcfg, const std::vector<SegSample>& data,
                     const TrainConfig& tc) {
  tc.validate();
  mcfg.validate();
  if (data.empty()) throw ContractError("train requires a nonempty dataset");
  for (const auto& s : data) check_sample_dims(mcfg, s);

  Rng root(tc.seed);
  auto init_rng = root.child(1);
  auto split_rng = root.child(2);

  std::vector<size_t> perm(data.size());
  std::iota(perm.begin(), perm.end(), size_t(0));
  split_rng.shuffle(perm);
  int64_t val_n = 0;
  if (tc.val_fraction > 0 && data.size() >= 2) {
    val_n = std::llround(tc.val_fraction * double(data.size()));
    val_n = std::clamp<int64_t>(val_n, 1, int64_t(data.size()) - 1);
  }
  std::vector<SegSample> val_set;
  std::vector<size_t> train_idx;
  for (size_t i = 0; i < perm.size(); ++i) {
    if (int64_t(i) < val_n)
      val_set.push_back(data[perm[i]]);
    else
      train_idx.push_back(perm[i]);
  }

  TrainResult<T> res;
  res.model = VMUNet<T>::init(mcfg, init_rng);
  auto params = res.model.parameters();
  auto opt = AdamW<T>::init(params, tc.lr, tc.weight_decay, tc.beta1, tc.beta2, tc.eps);

  std::ofstream csv;
  if (!tc.log_path.empty()) {
    csv.open(tc.log_path, std::ios::trunc);
    if (!csv) throw IoError("cannot write training log " + tc.log_path);
    csv << epoch_csv_header() << "\n" << std::flush;
  }

  double best_score = -1;
  for (int64_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    auto order = train_idx;
    root.child(3).child(uint64_t(epoch)).shuffle(order);

    double loss_sum = 0;
    for (size_t start = 0; start < order.size(); start += size_t(tc.batch_size)) {
      size_t batch_n = std::min(size_t(tc.batch_size), order.size() - start);
      for (auto& [name, p] : params) p.zero_grad();
      for (size_t j = 0; j < batch_n; ++j) {
        const auto& base = data[order[start + j]];
        SegSample samp =
            tc.augment_data
                ? augment(base,
                          root.child(4).child(uint64_t(epoch)).child(uint64_t(start + j)).next_u64())
                : base;
        auto loss = sample_loss(res.model, samp);
        double lv = double(loss.item());
        if (!std::isfinite(lv))
          throw NumericError("dice loss is not finite at epoch " + std::to_string(epoch) +
                             " on sample '" + samp.id + "'");
        loss_sum += lv;
        backward(scale(loss, T(1.0 / double(batch_n))));
      }
      if (tc.clip_norm > 0) clip_global_norm(params, tc.clip_norm);
      opt.step();
    }

    EpochLog row;
    row.epoch = epoch;
    row.train_loss = order.empty() ? 0.0 : loss_sum / double(order.size());
    double score = -row.train_loss;
    if (val_n > 0) {
      auto ev = evaluate(res.model, val_set);
      row.val_mds = ev.mds;
      row.val_miou = ev.miou;
      score = ev.mds;
    } else {
      row.val_mds = std::nan("");
      row.val_miou = std::nan("");
    }
    if (score > best_score) {
      best_score = score;
      res.best = vmunet_checkpoint(res.model);
      res.best_epoch = epoch;
      res.best_val_mds = val_n > 0 ? row.val_mds : std::nan("");
      if (!tc.checkpoint_path.empty()) save_checkpoint(tc.checkpoint_path, res.best);
    }
    res.log.push_back(row);
    if (csv.is_open()) csv << epoch_csv_row(row) << "\n" << std::flush;
  }
  return res;
}

#define VMSEG_INSTANTIATE_TRAINER(T)                                                          \
  template struct AdamW<T>;                                                                   \
  template double clip_global_norm<T>(std::vector<std::pair<std::string, Tensor<T>>>&,        \
                                      double);                                               \
  template EvalResult evaluate<T>(const VMUNet<T>&, const std::vector<SegSample>&);          \
  template TrainResult<T> train<T>(const VMUNetConfig&, const std::vector<SegSample>&,       \
                                   const TrainConfig&);

VMSEG_INSTANTIATE_TRAINER(float)
VMSEG_INSTANTIATE_TRAINER(double)

#undef VMSEG_INSTANTIATE_TRAINER

}  // namespace vmseg
