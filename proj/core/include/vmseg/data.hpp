#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vmseg/kvconfig.hpp"
#include "vmseg/metrics.hpp"
#include "vmseg/tensor.hpp"

namespace vmseg {

// One image/mask pair. Image values live in [0,1]; the mask is strictly
// binary and spatially aligned with the image.
struct SegSample {
  std::string id;
  Tensor<float> image;  // [3,S,S]
  BinaryMask mask;      // S x S
};

struct SynthConfig {
  int64_t count = 200;
  int64_t size = 64;
  double width_min = 1.0;  // crack stroke width, px
  double width_max = 3.0;
  int64_t cracks_min = 1;  // cracks per image; 0 allowed for blank samples
  int64_t cracks_max = 3;
  double texture = 0.08;  // low-frequency background amplitude
  double noise = 0.02;    // per-pixel uniform noise amplitude
  uint64_t seed = 0;

  void validate() const;
  KvMap to_kv() const;
  static SynthConfig from_kv(const KvMap& kv);
};

// Textured backgrounds with dark random-walk polyline cracks; the mask is the
// exact set of pixels the strokes touched. Sample i depends only on
// (cfg minus count, seed, i), so growing the count extends the dataset
// without changing existing samples.
std::vector<SegSample> generate_synthetic(const SynthConfig& cfg);

// <root>/images/*.png + <root>/masks/*.png matched by filename stem, plus a
// gen_config.txt record of the generator settings.
void write_dataset(const std::string& root, const std::vector<SegSample>& data,
                   const KvMap& gen_config);
std::vector<SegSample> load_folder(const std::string& images_dir, const std::string& masks_dir);
std::vector<SegSample> load_dataset(const std::string& root);

// Horizontal flip applied jointly to image and mask.
SegSample flip_horizontal(const SegSample& s);
// Brightness/contrast/saturation scaling, image only, clamped to [0,1];
// all scales 1 is the identity.
Tensor<float> colour_jitter(const Tensor<float>& image, double brightness, double contrast,
                            double saturation);
// Flip with probability 0.5, then jitter with scales uniform in [0.8, 1.2].
SegSample augment(const SegSample& s, uint64_t seed);

}  // namespace vmseg
