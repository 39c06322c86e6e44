#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vmseg/checkpoint.hpp"
#include "vmseg/data.hpp"
#include "vmseg/vmunet.hpp"

namespace vmseg {

enum class Precision { f32, f64 };

struct TrainConfig {
  double lr = 5e-5;
  int64_t batch_size = 2;
  int64_t epochs = 30;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;     // global-norm gradient clip; 0 disables
  double val_fraction = 0.1;  // held out of the training data for model selection
  bool augment_data = true;
  uint64_t seed = 0;
  Precision precision = Precision::f32;
  std::string checkpoint_path;  // best-by-validation snapshot; empty keeps it in memory
  std::string log_path;         // per-epoch CSV; empty disables

  void validate() const;
};

// Decoupled weight decay: every step first scales parameters by
// (1 - lr*weight_decay), then applies the bias-corrected Adam update.
template <typename T>
struct AdamW {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  int64_t step_count = 0;
  std::vector<std::pair<std::string, Tensor<T>>> params;
  std::vector<std::vector<T>> m, v;

  static AdamW init(std::vector<std::pair<std::string, Tensor<T>>> params, double lr,
                    double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
                    double eps = 1e-8);
  // Reads grads (missing buffers count as zero), updates parameter data in
  // place. A non-finite gradient raises a numeric error naming the parameter.
  void step();
};

// Scales all gradients so their joint L2 norm is at most max_norm; returns the
// pre-clip norm.
template <typename T>
double clip_global_norm(std::vector<std::pair<std::string, Tensor<T>>>& params, double max_norm);

struct EpochLog {
  int64_t epoch = 0;  // 1-based
  double train_loss = 0;
  double val_mds = 0;  // NaN when no validation split
  double val_miou = 0;
};

std::string epoch_csv_header();
std::string epoch_csv_row(const EpochLog& e);

struct EvalRow {
  std::string id;
  double ds = 0;
  double iou = 0;
};

struct EvalResult {
  double mds = 0;
  double miou = 0;
  std::vector<EvalRow> rows;
};

// Forward, sigmoid, threshold at 0.5, then hard overlap metrics per sample.
template <typename T>
EvalResult evaluate(const VMUNet<T>& net, const std::vector<SegSample>& data);

template <typename T>
struct TrainResult {
  std::vector<EpochLog> log;
  VMUNet<T> model;  // weights after the final epoch
  Checkpoint best;  // snapshot from the best validation epoch
  int64_t best_epoch = 0;
  double best_val_mds = 0;
};

// Per epoch: seeded shuffle, per-sample augmentation, sequential batch
// accumulation of Dice loss gradients, clip, AdamW step, then validation.
// The best epoch is picked by validation mDS (train loss when no split).
template <typename T>
TrainResult<T> train(const VMUNetConfig& mcfg, const std::vector<SegSample>& data,
                     const TrainConfig& tc);

#define VMSEG_DECLARE_TRAINER(T)                                                              \
  extern template struct AdamW<T>;                                                           \
  extern template double clip_global_norm<T>(                                                \
      std::vector<std::pair<std::string, Tensor<T>>>&, double);                              \
  extern template EvalResult evaluate<T>(const VMUNet<T>&, const std::vector<SegSample>&);   \
  extern template TrainResult<T> train<T>(const VMUNetConfig&, const std::vector<SegSample>&, \
                                          const TrainConfig&);

VMSEG_DECLARE_TRAINER(float)
VMSEG_DECLARE_TRAINER(double)

#undef VMSEG_DECLARE_TRAINER

}  // namespace vmseg
