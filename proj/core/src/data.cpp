#include "vmseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "vmseg/errors.hpp"
#include "vmseg/png_io.hpp"
#include "vmseg/rng.hpp"

namespace fs = std::filesystem;

namespace vmseg {

void SynthConfig::validate() const {
  if (count < 0) throw ConfigError("synth count must be >= 0");
  if (size < 8) throw ConfigError("synth size must be >= 8, got " + std::to_string(size));
  if (!(width_min > 0) || width_max < width_min)
    throw ConfigError("synth crack width range must satisfy 0 < min <= max");
  if (cracks_min < 0 || cracks_max < cracks_min)
    throw ConfigError("synth cracks-per-image range must satisfy 0 <= min <= max");
  if (texture < 0 || noise < 0) throw ConfigError("synth texture and noise must be >= 0");
}

KvMap SynthConfig::to_kv() const {
  KvMap kv;
  kv["count"] = std::to_string(count);
  kv["size"] = std::to_string(size);
  kv["width_min"] = std::to_string(width_min);
  kv["width_max"] = std::to_string(width_max);
  kv["cracks_min"] = std::to_string(cracks_min);
  kv["cracks_max"] = std::to_string(cracks_max);
  kv["texture"] = std::to_string(texture);
  kv["noise"] = std::to_string(noise);
  kv["seed"] = std::to_string(seed);
  return kv;
}

SynthConfig SynthConfig::from_kv(const KvMap& kv) {
  SynthConfig cfg;
  cfg.count = kv_int(kv, "count", cfg.count);
  cfg.size = kv_int(kv, "size", cfg.size);
  cfg.width_min = kv_double(kv, "width_min", cfg.width_min);
  cfg.width_max = kv_double(kv, "width_max", cfg.width_max);
  cfg.cracks_min = kv_int(kv, "cracks_min", cfg.cracks_min);
  cfg.cracks_max = kv_int(kv, "cracks_max", cfg.cracks_max);
  cfg.texture = kv_double(kv, "texture", cfg.texture);
  cfg.noise = kv_double(kv, "noise", cfg.noise);
  cfg.seed = uint64_t(kv_int(kv, "seed", int64_t(cfg.seed)));
  cfg.validate();
  return cfg;
}

namespace {

struct Wave {
  double amp, fx, fy, phase;
};

// stamp a filled disk; the radius floor guarantees at least the nearest pixel
void stamp(std::vector<uint8_t>& stroke, std::vector<float>& depth, int64_t S, double x,
           double y, double radius, float darkness) {
  double rad = std::max(0.5, radius);
  int64_t r0 = std::max<int64_t>(0, int64_t(std::ceil(y - rad)));
  int64_t r1 = std::min<int64_t>(S - 1, int64_t(std::floor(y + rad)));
  int64_t c0 = std::max<int64_t>(0, int64_t(std::ceil(x - rad)));
  int64_t c1 = std::min<int64_t>(S - 1, int64_t(std::floor(x + rad)));
  for (int64_t r = r0; r <= r1; ++r)
    for (int64_t c = c0; c <= c1; ++c) {
      double dx = double(c) - x, dy = double(r) - y;
      if (dx * dx + dy * dy > rad * rad) continue;
      size_t i = size_t(r * S + c);
      stroke[i] = 1;
      depth[i] = std::max(depth[i], darkness);
    }
}

SegSample make_sample(const SynthConfig& cfg, Rng rng, std::string id) {
  int64_t S = cfg.size;
  double base = 0.5 + 0.3 * rng.uniform();
  std::array<Wave, 3> waves;
  for (auto& wv : waves)
    wv = {cfg.texture * rng.uniform(0.5, 1.0), rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0),
          rng.uniform(0.0, 2.0 * std::numbers::pi)};
  std::array<double, 3> tint;
  for (auto& t : tint) t = cfg.texture * rng.uniform(-0.25, 0.25);

  std::vector<uint8_t> stroke(size_t(S * S), 0);
  std::vector<float> depth(size_t(S * S), 0.0f);
  int64_t cracks = cfg.cracks_min + rng.uniform_int(cfg.cracks_max - cfg.cracks_min + 1);
  for (int64_t k = 0; k < cracks; ++k) {
    double width = rng.uniform(cfg.width_min, cfg.width_max);
    float darkness = float(rng.uniform(0.25, 0.45));
    double x = rng.uniform(0.1, 0.9) * double(S);
    double y = rng.uniform(0.1, 0.9) * double(S);
    double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
    int64_t steps = int64_t(double(S) * rng.uniform(0.6, 1.4));
    for (int64_t t = 0; t < steps; ++t) {
      heading += rng.normal(0.0, 0.22);
      double nx = x + std::cos(heading), ny = y + std::sin(heading);
      if (nx < 1 || nx > double(S - 2) || ny < 1 || ny > double(S - 2)) {
        heading += std::numbers::pi / 2 + rng.uniform(0.0, std::numbers::pi);
        continue;
      }
      // sub-steps keep thin strokes connected between integer positions
      stamp(stroke, depth, S, (x + nx) / 2, (y + ny) / 2, width / 2, darkness);
      stamp(stroke, depth, S, nx, ny, width / 2, darkness);
      x = nx;
      y = ny;
    }
  }

  std::vector<float> img(size_t(3 * S * S));
  for (int64_t r = 0; r < S; ++r)
    for (int64_t c = 0; c < S; ++c) {
      size_t i = size_t(r * S + c);
      double tex = 0;
      for (const auto& wv : waves)
        tex += wv.amp * std::cos(2.0 * std::numbers::pi * (wv.fx * double(c) + wv.fy * double(r)) /
                                     double(S) +
                                 wv.phase);
      double gray = base + tex - (stroke[i] ? double(depth[i]) : 0.0);
      for (int64_t ch = 0; ch < 3; ++ch) {
        double v = gray + tint[size_t(ch)] + cfg.noise * rng.uniform(-1.0, 1.0);
        img[size_t(ch * S * S + r * S + c)] = float(std::clamp(v, 0.0, 1.0));
      }
    }

  SegSample s;
  s.id = std::move(id);
  s.image = Tensor<float>::from_data({3, S, S}, std::move(img));
  s.mask = BinaryMask{S, S, std::move(stroke)};
  return s;
}

std::string sample_id(int64_t i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "synth%05lld", static_cast<long long>(i));
  return buf;
}

Tensor<float> mask_image(const BinaryMask& m) {
  std::vector<float> v(m.v.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = m.v[i] ? 1.0f : 0.0f;
  return Tensor<float>::from_data({m.h, m.w}, std::move(v));
}

}  // namespace

std::vector<SegSample> generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Rng root(cfg.seed);
  std::vector<SegSample> out;
  out.reserve(size_t(cfg.count));
  for (int64_t i = 0; i < cfg.count; ++i)
    out.push_back(make_sample(cfg, root.child(uint64_t(i)), sample_id(i)));
  return out;
}

void write_dataset(const std::string& root, const std::vector<SegSample>& data,
                   const KvMap& gen_config) {
  std::error_code ec;
  fs::create_directories(fs::path(root) / "images", ec);
  fs::create_directories(fs::path(root) / "masks", ec);
  if (ec) throw IoError("cannot create dataset directories under " + root + ": " + ec.message());
  for (const auto& s : data) {
    write_png_rgb((fs::path(root) / "images" / (s.id + ".png")).string(), s.image);
    write_png_gray((fs::path(root) / "masks" / (s.id + ".png")).string(), mask_image(s.mask));
  }
  write_kv_file((fs::path(root) / "gen_config.txt").string(), gen_config);
}

std::vector<SegSample> load_folder(const std::string& images_dir, const std::string& masks_dir) {
  if (!fs::is_directory(images_dir)) throw IoError("image directory not found: " + images_dir);
  if (!fs::is_directory(masks_dir)) throw IoError("mask directory not found: " + masks_dir);
  std::vector<std::string> stems;
  for (const auto& entry : fs::directory_iterator(images_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".png")
      stems.push_back(entry.path().stem().string());
  std::sort(stems.begin(), stems.end());

  std::vector<SegSample> out;
  out.reserve(stems.size());
  for (const auto& stem : stems) {
    auto ipath = (fs::path(images_dir) / (stem + ".png")).string();
    auto mpath = (fs::path(masks_dir) / (stem + ".png")).string();
    if (!fs::exists(mpath)) throw IoError("no mask for image " + ipath + " (expected " + mpath + ")");
    auto raw = read_png(ipath);
    int64_t h = raw.dim(1), w = raw.dim(2);
    Tensor<float> image;
    if (raw.dim(0) == 3) {
      image = raw;
    } else {
      std::vector<float> v(size_t(3 * h * w));
      for (int64_t i = 0; i < h * w; ++i)
        v[size_t(i)] = v[size_t(h * w + i)] = v[size_t(2 * h * w + i)] = raw.data()[size_t(i)];
      image = Tensor<float>::from_data({3, h, w}, std::move(v));
    }
    auto mraw = read_png(mpath);
    if (mraw.dim(1) != h || mraw.dim(2) != w)
      throw IoError("size mismatch: " + ipath + " is " + std::to_string(h) + "x" +
                    std::to_string(w) + " but " + mpath + " is " + std::to_string(mraw.dim(1)) +
                    "x" + std::to_string(mraw.dim(2)));
    BinaryMask mask{h, w, std::vector<uint8_t>(size_t(h * w), 0)};
    int64_t mc = mraw.dim(0);
    for (int64_t i = 0; i < h * w; ++i) {
      float g = 0;
      for (int64_t ch = 0; ch < mc; ++ch) g += mraw.data()[size_t(ch * h * w + i)];
      mask.v[size_t(i)] = g / float(mc) >= 0.5f ? 1 : 0;
    }
    out.push_back({stem, std::move(image), std::move(mask)});
  }
  return out;
}

std::vector<SegSample> load_dataset(const std::string& root) {
  return load_folder((fs::path(root) / "images").string(), (fs::path(root) / "masks").string());
}

SegSample flip_horizontal(const SegSample& s) {
  int64_t h = s.mask.h, w = s.mask.w;
  std::vector<float> img(size_t(3 * h * w));
  auto v = s.image.data();
  for (int64_t ch = 0; ch < 3; ++ch)
    for (int64_t r = 0; r < h; ++r)
      for (int64_t c = 0; c < w; ++c)
        img[size_t(ch * h * w + r * w + c)] = v[size_t(ch * h * w + r * w + (w - 1 - c))];
  BinaryMask mask{h, w, std::vector<uint8_t>(size_t(h * w))};
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < w; ++c)
      mask.v[size_t(r * w + c)] = s.mask.v[size_t(r * w + (w - 1 - c))];
  return {s.id, Tensor<float>::from_data({3, h, w}, std::move(img)), std::move(mask)};
}

Tensor<float> colour_jitter(const Tensor<float>& image, double brightness, double contrast,
                            double saturation) {
  if (!image.defined() || image.rank() != 3 || image.dim(0) != 3)
    throw ShapeError("colour_jitter expects a [3,h,w] image");
  int64_t px = image.dim(1) * image.dim(2);
  std::vector<float> v(image.data().begin(), image.data().end());
  auto luma = [&](int64_t i) {
    return 0.299 * v[size_t(i)] + 0.587 * v[size_t(px + i)] + 0.114 * v[size_t(2 * px + i)];
  };
  if (brightness != 1.0)
    for (auto& x : v) x = float(x * brightness);
  if (contrast != 1.0) {
    double mean = 0;
    for (int64_t i = 0; i < px; ++i) mean += luma(i);
    mean /= double(px);
    for (auto& x : v) x = float(mean + (x - mean) * contrast);
  }
  if (saturation != 1.0) {
    for (int64_t i = 0; i < px; ++i) {
      double g = luma(i);
      for (int64_t ch = 0; ch < 3; ++ch) {
        auto& x = v[size_t(ch * px + i)];
        x = float(g + (x - g) * saturation);
      }
    }
  }
  for (auto& x : v) x = std::clamp(x, 0.0f, 1.0f);
  return Tensor<float>::from_data(image.shape(), std::move(v));
}

SegSample augment(const SegSample& s, uint64_t seed) {
  Rng rng(seed);
  bool flip = rng.uniform() < 0.5;
  double b = rng.uniform(0.8, 1.2);
  double c = rng.uniform(0.8, 1.2);
  double sat = rng.uniform(0.8, 1.2);
  SegSample out = flip ? flip_horizontal(s) : s;
  out.image = colour_jitter(out.image, b, c, sat);
  return out;
}

}  // namespace vmseg
