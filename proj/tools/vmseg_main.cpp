#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "vmseg/checkpoint.hpp"
#include "vmseg/complexity.hpp"
#include "vmseg/data.hpp"
#include "vmseg/errors.hpp"
#include "vmseg/gradcheck.hpp"
#include "vmseg/metrics.hpp"
#include "vmseg/png_io.hpp"
#include "vmseg/trainer.hpp"

using namespace vmseg;
namespace fs = std::filesystem;

namespace {

uint64_t env_seed() {
  const char* s = std::getenv("VMSEG_SEED");
  if (!s || !*s) return 0;
  char* end = nullptr;
  unsigned long long v = std::strtoull(s, &end, 10);
  if (end == s || *end != '\0') throw ConfigError("VMSEG_SEED is not an integer");
  return v;
}

std::string double_str(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

// Resolution order for every setting: built-in default, then the --config
// file, then an explicit flag; the winners are echoed as key=value text.
class FlagLayer {
 public:
  void load_file(const std::string& path) {
    if (!path.empty()) file_ = read_kv_file(path);
  }
  const KvMap& file() const { return file_; }

  void resolve(bool flagged, const std::string& key, int64_t& v) {
    if (!flagged) v = kv_int(file_, key, v);
    effective_[key] = std::to_string(v);
  }
  void resolve(bool flagged, const std::string& key, uint64_t& v) {
    int64_t s = int64_t(v);
    if (!flagged) s = kv_int(file_, key, s);
    v = uint64_t(s);
    effective_[key] = std::to_string(v);
  }
  void resolve(bool flagged, const std::string& key, double& v) {
    if (!flagged) v = kv_double(file_, key, v);
    effective_[key] = double_str(v);
  }
  void resolve(bool flagged, const std::string& key, bool& v) {
    if (!flagged) v = kv_bool(file_, key, v);
    effective_[key] = v ? "true" : "false";
  }
  void resolve(bool flagged, const std::string& key, std::string& v) {
    if (!flagged) v = kv_str(file_, key, v);
    effective_[key] = v;
  }

  void note(const std::string& key, const std::string& value) { effective_[key] = value; }
  void note_all(const KvMap& kv) {
    for (const auto& [k, v] : kv) effective_[k] = v;
  }

  void echo() const {
    std::fputs("# effective config\n", stdout);
    std::fputs(serialize_kv(effective_).c_str(), stdout);
    std::fflush(stdout);
  }

 private:
  KvMap file_;
  KvMap effective_;
};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    size_t a = item.find_first_not_of(" \t");
    size_t b = item.find_last_not_of(" \t");
    if (a == std::string::npos) continue;
    out.push_back(item.substr(a, b - a + 1));
  }
  return out;
}

std::array<int64_t, 4> parse_depths(const std::string& text) {
  auto parts = split_list(text);
  if (parts.size() != 4) throw ConfigError("depths need exactly 4 comma-separated integers");
  std::array<int64_t, 4> out{};
  for (size_t i = 0; i < 4; ++i) {
    char* end = nullptr;
    out[i] = std::strtoll(parts[i].c_str(), &end, 10);
    if (end == parts[i].c_str() || *end != '\0')
      throw ConfigError("bad depth entry '" + parts[i] + "'");
  }
  return out;
}

std::string depths_str(const std::array<int64_t, 4>& d) {
  std::string s;
  for (size_t i = 0; i < 4; ++i) s += (i ? "," : "") + std::to_string(d[i]);
  return s;
}

// ---- generate ---------------------------------------------------------------

struct GenerateCmd {
  std::string config;
  std::string out = "crack-data";
  SynthConfig cfg;
  int64_t cracks = -1;  // sets cracks_min = cracks_max when >= 0
};

int run_generate(CLI::App* cmd, GenerateCmd& a) {
  FlagLayer layer;
  layer.load_file(a.config);
  layer.resolve(cmd->count("--out") > 0, "out", a.out);
  layer.resolve(cmd->count("--count") > 0, "count", a.cfg.count);
  layer.resolve(cmd->count("--size") > 0, "size", a.cfg.size);
  layer.resolve(cmd->count("--width_min") > 0, "width_min", a.cfg.width_min);
  layer.resolve(cmd->count("--width_max") > 0, "width_max", a.cfg.width_max);
  layer.resolve(cmd->count("--cracks_min") > 0, "cracks_min", a.cfg.cracks_min);
  layer.resolve(cmd->count("--cracks_max") > 0, "cracks_max", a.cfg.cracks_max);
  layer.resolve(cmd->count("--texture") > 0, "texture", a.cfg.texture);
  layer.resolve(cmd->count("--noise") > 0, "noise", a.cfg.noise);
  layer.resolve(cmd->count("--seed") > 0, "seed", a.cfg.seed);
  if (cmd->count("--cracks") == 0) a.cracks = kv_int(layer.file(), "cracks", a.cracks);
  if (a.cracks >= 0) {
    a.cfg.cracks_min = a.cfg.cracks_max = a.cracks;
    layer.note("cracks_min", std::to_string(a.cracks));
    layer.note("cracks_max", std::to_string(a.cracks));
  }
  a.cfg.validate();
  layer.echo();

  auto data = generate_synthetic(a.cfg);
  write_dataset(a.out, data, a.cfg.to_kv());
  std::printf("wrote %lld image/mask pairs to %s\n", static_cast<long long>(a.cfg.count),
              a.out.c_str());
  return 0;
}

// ---- train ------------------------------------------------------------------

struct TrainCmd {
  std::string config;
  std::string data;
  std::string out = "run";
  std::string preset = "tiny";
  // model overrides; only consulted when flagged or present in the file
  int64_t embed_dim = 0;
  int64_t state_dim = 0;
  std::string depths, dec_depths;
  double expansion = 0;
  bool share = false;
  std::string mode;
  // trainer settings
  TrainConfig tc;
  std::string precision = "f32";
  bool no_augment = false;
};

template <typename V, typename Parse>
void apply_override(bool flagged, const KvMap& file, const std::string& key, const V& flag_value,
                    V& field, Parse&& parse) {
  if (flagged)
    field = flag_value;
  else if (file.count(key))
    field = parse(file.at(key));
}

template <typename T>
int finish_train(const VMUNetConfig& mcfg, const std::vector<SegSample>& data,
                 const TrainConfig& tc, const std::string& out_dir) {
  auto res = train<T>(mcfg, data, tc);
  std::puts(epoch_csv_header().c_str());
  for (const auto& row : res.log) std::puts(epoch_csv_row(row).c_str());

  auto final_path = (fs::path(out_dir) / "final.ckpt").string();
  save_checkpoint(final_path, vmunet_checkpoint(res.model));
  std::printf("# best epoch %lld", static_cast<long long>(res.best_epoch));
  if (!std::isnan(res.best_val_mds)) std::printf(" (val mDS %.8g)", res.best_val_mds);
  std::printf("\n# wrote %s and %s\n", tc.checkpoint_path.c_str(), final_path.c_str());
  return 0;
}

int run_train(CLI::App* cmd, TrainCmd& a) {
  FlagLayer layer;
  layer.load_file(a.config);
  layer.resolve(cmd->count("--data") > 0, "data", a.data);
  layer.resolve(cmd->count("--out") > 0, "out", a.out);
  layer.resolve(cmd->count("--preset") > 0, "preset", a.preset);
  layer.resolve(cmd->count("--lr") > 0, "lr", a.tc.lr);
  layer.resolve(cmd->count("--batch_size") > 0, "batch_size", a.tc.batch_size);
  layer.resolve(cmd->count("--epochs") > 0, "epochs", a.tc.epochs);
  layer.resolve(cmd->count("--weight_decay") > 0, "weight_decay", a.tc.weight_decay);
  layer.resolve(cmd->count("--clip_norm") > 0, "clip_norm", a.tc.clip_norm);
  layer.resolve(cmd->count("--val_fraction") > 0, "val_fraction", a.tc.val_fraction);
  layer.resolve(cmd->count("--seed") > 0, "seed", a.tc.seed);
  layer.resolve(cmd->count("--precision") > 0, "precision", a.precision);
  bool augment = !a.no_augment;
  layer.resolve(cmd->count("--no_augment") > 0, "augment", augment);
  a.tc.augment_data = augment;

  if (a.data.empty()) throw ConfigError("train needs --data (or a 'data' config entry)");
  if (a.preset != "tiny" && a.preset != "full")
    throw ConfigError("unknown preset '" + a.preset + "' (expected tiny or full)");
  if (a.precision == "f32")
    a.tc.precision = Precision::f32;
  else if (a.precision == "f64")
    a.tc.precision = Precision::f64;
  else
    throw ConfigError("unknown precision '" + a.precision + "' (expected f32 or f64)");

  auto data = load_dataset(a.data);
  if (data.empty()) throw ConfigError("dataset " + a.data + " holds no samples");

  auto mcfg = a.preset == "full" ? VMUNetConfig::full_scale() : VMUNetConfig::tiny();
  const auto& file = layer.file();
  auto to_int = [](const std::string& s) {
    KvMap one{{"v", s}};
    return kv_int(one, "v", 0);
  };
  auto to_double = [](const std::string& s) {
    KvMap one{{"v", s}};
    return kv_double(one, "v", 0);
  };
  apply_override(cmd->count("--embed_dim") > 0, file, "embed_dim", a.embed_dim, mcfg.embed_dim,
                 to_int);
  apply_override(cmd->count("--state_dim") > 0, file, "state_dim", a.state_dim, mcfg.state_dim,
                 to_int);
  apply_override(cmd->count("--expansion") > 0, file, "expansion", a.expansion, mcfg.expansion,
                 to_double);
  if (cmd->count("--depths") > 0)
    mcfg.depths = parse_depths(a.depths);
  else if (file.count("depths"))
    mcfg.depths = parse_depths(file.at("depths"));
  if (cmd->count("--dec_depths") > 0)
    mcfg.dec_depths = parse_depths(a.dec_depths);
  else if (file.count("dec_depths"))
    mcfg.dec_depths = parse_depths(file.at("dec_depths"));
  if (cmd->count("--share_projections") > 0)
    mcfg.share_projections = a.share;
  else if (file.count("share_projections"))
    mcfg.share_projections = kv_bool(file, "share_projections", mcfg.share_projections);
  if (cmd->count("--mode") > 0 || file.count("mode")) {
    std::string m = cmd->count("--mode") > 0 ? a.mode : file.at("mode");
    if (m == "exact")
      mcfg.mode = DiscretizeMode::exact;
    else if (m == "simplified")
      mcfg.mode = DiscretizeMode::simplified;
    else
      throw ConfigError("unknown mode '" + m + "' (expected exact or simplified)");
  }
  mcfg.in_h = data[0].image.dim(1);
  mcfg.in_w = data[0].image.dim(2);
  mcfg.validate();
  a.tc.validate();

  fs::create_directories(a.out);
  a.tc.checkpoint_path = (fs::path(a.out) / "best.ckpt").string();
  a.tc.log_path = (fs::path(a.out) / "train_log.csv").string();

  layer.note_all(vmunet_config_kv(mcfg));
  layer.echo();
  if (a.tc.precision == Precision::f64)
    return finish_train<double>(mcfg, data, a.tc, a.out);
  return finish_train<float>(mcfg, data, a.tc, a.out);
}

// ---- eval -------------------------------------------------------------------

struct EvalCmd {
  std::string config;
  std::string data;
  std::string checkpoint;
  std::string out;
};

template <typename T>
EvalResult eval_with(const Checkpoint& ck, const std::vector<SegSample>& data) {
  auto net = vmunet_from_checkpoint<T>(ck);
  return evaluate(net, data);
}

int run_eval(CLI::App* cmd, EvalCmd& a) {
  FlagLayer layer;
  layer.load_file(a.config);
  layer.resolve(cmd->count("--data") > 0, "data", a.data);
  layer.resolve(cmd->count("--checkpoint") > 0, "checkpoint", a.checkpoint);
  layer.resolve(cmd->count("--out") > 0, "out", a.out);
  if (a.data.empty()) throw ConfigError("eval needs --data");
  if (a.checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
  layer.echo();

  auto data = load_dataset(a.data);
  if (data.empty()) throw ConfigError("dataset " + a.data + " holds no samples");
  auto ck = load_checkpoint(a.checkpoint);
  auto res = checkpoint_dtype(ck) == dtype_tag<double>() ? eval_with<double>(ck, data)
                                                         : eval_with<float>(ck, data);

  std::string text = "id,dice,iou\n";
  char buf[160];
  for (const auto& row : res.rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.8g,%.8g\n", row.id.c_str(), row.ds, row.iou);
    text += buf;
  }
  std::snprintf(buf, sizeof(buf), "mean,%.8g,%.8g\n", res.mds, res.miou);
  text += buf;
  std::fputs(text.c_str(), stdout);
  if (!a.out.empty()) {
    std::ofstream f(a.out, std::ios::trunc);
    if (!f) throw IoError("cannot write " + a.out);
    f << text;
  }
  return 0;
}

// ---- segment ----------------------------------------------------------------

struct SegmentCmd {
  std::string config;
  std::string checkpoint;
  std::string input;
  std::string out = "masks";
};

template <typename T>
void segment_with(const Checkpoint& ck, const std::vector<fs::path>& files,
                  const fs::path& out_dir) {
  auto net = vmunet_from_checkpoint<T>(ck);
  for (const auto& file : files) {
    auto img = read_png(file.string());
    if (img.dim(0) == 1) {
      std::vector<float> three;
      three.reserve(size_t(3 * img.numel()));
      for (int c = 0; c < 3; ++c) three.insert(three.end(), img.data().begin(), img.data().end());
      img = Tensor<float>::from_data({3, img.dim(1), img.dim(2)}, std::move(three));
    }
    if (img.dim(1) != net.cfg.in_h || img.dim(2) != net.cfg.in_w)
      throw ConfigError(file.string() + " is " + shape_str(img.shape()) +
                        ", the checkpoint expects [3," + std::to_string(net.cfg.in_h) + "," +
                        std::to_string(net.cfg.in_w) + "]");
    std::vector<T> px(img.data().begin(), img.data().end());
    auto probs = sigmoid(net.forward(Tensor<T>::from_data(img.shape(), std::move(px))));
    auto mask = binarize(reshape(probs, {net.cfg.in_h, net.cfg.in_w}));
    write_png_gray((out_dir / file.filename()).string(), mask_to_tensor<float>(mask));
  }
}

int run_segment(CLI::App* cmd, SegmentCmd& a) {
  FlagLayer layer;
  layer.load_file(a.config);
  layer.resolve(cmd->count("--checkpoint") > 0, "checkpoint", a.checkpoint);
  layer.resolve(cmd->count("--input") > 0, "input", a.input);
  layer.resolve(cmd->count("--out") > 0, "out", a.out);
  if (a.checkpoint.empty()) throw ConfigError("segment needs --checkpoint");
  if (a.input.empty()) throw ConfigError("segment needs --input");
  layer.echo();

  std::vector<fs::path> files;
  if (fs::is_directory(a.input)) {
    for (const auto& e : fs::directory_iterator(a.input))
      if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
  } else if (fs::exists(a.input)) {
    files.push_back(a.input);
  } else {
    throw IoError("input " + a.input + " does not exist");
  }
  if (files.empty()) throw ConfigError("no .png inputs under " + a.input);

  fs::create_directories(a.out);
  auto ck = load_checkpoint(a.checkpoint);
  if (checkpoint_dtype(ck) == dtype_tag<double>())
    segment_with<double>(ck, files, a.out);
  else
    segment_with<float>(ck, files, a.out);
  std::printf("wrote %zu masks to %s\n", files.size(), a.out.c_str());
  return 0;
}

// ---- flops ------------------------------------------------------------------

struct FlopsCmd {
  std::string config;
  std::string arch = "vmunet,vit-core,cnn-core,hybrid-core";
  std::string resolutions = "224,448,896,1792";
  std::string out;
};

int run_flops(CLI::App* cmd, FlopsCmd& a) {
  FlagLayer layer;
  layer.load_file(a.config);
  layer.resolve(cmd->count("--arch") > 0, "arch", a.arch);
  layer.resolve(cmd->count("--resolutions") > 0, "resolutions", a.resolutions);
  layer.resolve(cmd->count("--out") > 0, "out", a.out);

  auto arch_names = split_list(a.arch);
  if (arch_names.empty()) throw ConfigError("no architectures requested");
  for (const auto& name : arch_names)
    if (name != "vmunet" && name != "vit-core" && name != "cnn-core" && name != "hybrid-core")
      throw CLI::ValidationError(
          "--arch", "unknown architecture '" + name +
                        "' (expected vmunet, vit-core, cnn-core, hybrid-core)");
  std::vector<int64_t> res_list;
  for (const auto& r : split_list(a.resolutions)) {
    char* end = nullptr;
    int64_t v = std::strtoll(r.c_str(), &end, 10);
    if (end == r.c_str() || *end != '\0' || v <= 0)
      throw CLI::ValidationError("--resolutions", "bad resolution '" + r + "'");
    res_list.push_back(v);
  }
  if (res_list.empty()) throw ConfigError("no resolutions requested");
  layer.echo();

  std::string text = "resolution,arch,gflops\n";
  char buf[96];
  for (int64_t S : res_list)
    for (const auto& name : arch_names) {
      double g = double(flops_network(build_arch(name, S))) / 1e9;
      std::snprintf(buf, sizeof(buf), "%lld,%s,%.6g\n", static_cast<long long>(S), name.c_str(),
                    g);
      text += buf;
    }
  std::fputs(text.c_str(), stdout);
  if (!a.out.empty()) {
    std::ofstream f(a.out, std::ios::trunc);
    if (!f) throw IoError("cannot write " + a.out);
    f << text;
  }
  return 0;
}

// ---- verify -----------------------------------------------------------------

template <typename T>
Tensor<T> verify_randn(Shape shape, Rng& rng, double stddev = 1.0, bool rg = false) {
  std::vector<T> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = T(rng.normal(0.0, stddev));
  return Tensor<T>::from_data(std::move(shape), std::move(v), rg);
}

// stddev 0.5 keeps the scan outputs near unit scale so the absolute
// equivalence tolerances are meaningful for 32-bit runs
template <typename T>
ScanInputs<T> verify_scan_inputs(int64_t L, int64_t d, int64_t H, Rng& rng, bool rg) {
  ScanInputs<T> in;
  in.x = verify_randn<T>({L, d}, rng, 0.5, rg);
  std::vector<T> dt(static_cast<size_t>(L * d));
  for (auto& v : dt) v = T(rng.uniform(0.05, 1.05));
  in.delta = Tensor<T>::from_data({L, d}, std::move(dt), rg);
  in.B = verify_randn<T>({L, H}, rng, 0.5, rg);
  in.C = verify_randn<T>({L, H}, rng, 0.5, rg);
  in.h0 = verify_randn<T>({d, H}, rng, 0.5, rg);
  return in;
}

template <typename T>
Tensor<T> verify_neg_A(int64_t d, int64_t H, Rng& rng, bool rg = false) {
  std::vector<T> v(static_cast<size_t>(d * H));
  for (auto& x : v) x = T(-std::exp(rng.normal(0.0, 0.4)));
  return Tensor<T>::from_data({d, H}, std::move(v), rg);
}

template <typename T>
double equivalence_max_err(int64_t instances, Rng& rng) {
  double worst = 0;
  for (int64_t it = 0; it < instances; ++it) {
    int64_t L = 1 + int64_t(rng.uniform_int(64));
    int64_t d = 1 + int64_t(rng.uniform_int(8));
    int64_t H = 1 + int64_t(rng.uniform_int(16));
    auto in = verify_scan_inputs<T>(L, d, H, rng, false);
    auto A = verify_neg_A<T>(d, H, rng);
    auto D = Tensor<T>::zeros({d});
    auto rec = scan_recurrence(in, A, D, DiscretizeMode::simplified);
    auto mf = scan_matrix_form(in, A, DiscretizeMode::simplified);
    for (int64_t i = 0; i < L * d; ++i)
      worst = std::max(worst, std::abs(double(rec.y.data()[size_t(i)]) -
                                       double(mf.data()[size_t(i)])));
  }
  return worst;
}

bool suite_equivalence(uint64_t seed) {
  Rng rng(seed);
  auto r64 = rng.child(1);
  auto r32 = rng.child(2);
  double e64 = equivalence_max_err<double>(1000, r64);
  double e32 = equivalence_max_err<float>(1000, r32);
  std::printf("[equivalence] 1000 64-bit instances, max |recurrence - matrix| = %.3g (tol 1e-10)\n",
              e64);
  std::printf("[equivalence] 1000 32-bit instances, max |recurrence - matrix| = %.3g (tol 1e-5)\n",
              e32);
  bool ok = e64 < 1e-10 && e32 < 1e-5;
  std::printf("[equivalence] %s\n", ok ? "PASS" : "FAIL");
  return ok;
}

bool suite_gradients(uint64_t seed) {
  Rng rng(seed);
  double worst = 0;
  auto report = [&](const char* name, const GradCheckReport& rep) {
    std::printf("[gradients] %-16s rel err %.3g over %lld coords\n", name, rep.max_rel_err,
                static_cast<long long>(rep.checked));
    worst = std::max(worst, rep.max_rel_err);
  };

  {
    auto a = verify_randn<double>({5, 4}, rng, 1.0, true);
    auto b = verify_randn<double>({4, 3}, rng, 1.0, true);
    auto r = verify_randn<double>({5, 3}, rng);
    report("matmul", grad_check<double>([&] { return sum(mul(matmul(a, b), r)); }, {a, b},
                                        rng.child(1)));
  }
  {
    auto x = verify_randn<double>({6, 5}, rng, 1.0, true);
    auto g = verify_randn<double>({5}, rng, 0.3, true);
    auto be = verify_randn<double>({5}, rng, 0.3, true);
    auto r = verify_randn<double>({6, 5}, rng);
    report("layer_norm", grad_check<double>([&] { return sum(mul(layer_norm(x, g, be), r)); },
                                            {x, g, be}, rng.child(2)));
  }
  {
    auto x = verify_randn<double>({4, 6}, rng, 1.0, true);
    auto r = verify_randn<double>({4, 6}, rng);
    report("silu", grad_check<double>([&] { return sum(mul(silu(x), r)); }, {x}, rng.child(3)));
  }
  {
    auto x = verify_randn<double>({3, 5, 5}, rng, 1.0, true);
    auto k = verify_randn<double>({3, 3, 3}, rng, 0.5, true);
    auto r = verify_randn<double>({3, 5, 5}, rng);
    report("depthwise_conv",
           grad_check<double>([&] { return sum(mul(depthwise_conv2d(x, k), r)); }, {x, k},
                              rng.child(4)));
  }
  {
    int64_t L = 5, d = 3, H = 4;
    auto in = verify_scan_inputs<double>(L, d, H, rng, true);
    auto A = verify_neg_A<double>(d, H, rng, true);
    auto D = verify_randn<double>({d}, rng, 1.0, true);
    auto ry = verify_randn<double>({L, d}, rng);
    auto rh = verify_randn<double>({d, H}, rng);
    auto fn = [&] {
      auto out = scan_recurrence(in, A, D, DiscretizeMode::exact);
      return add(sum(mul(out.y, ry)), sum(mul(out.h_final, rh)));
    };
    report("scan", grad_check<double>(fn, {in.x, in.delta, in.B, in.C, in.h0, A, D},
                                      rng.child(5)));
  }
  {
    Ss2dConfig cfg;
    cfg.d = 2;
    cfg.H = 3;
    auto layer = Ss2d<double>::init(cfg, rng);
    auto fm = verify_randn<double>({2, 4, 4}, rng, 1.0, true);
    auto r = verify_randn<double>({2, 4, 4}, rng);
    report("ss2d", grad_check<double>([&] { return sum(mul(layer.forward(fm), r)); },
                                      {fm, layer.routes[0].a_log, layer.routes[0].wb,
                                       layer.routes[2].wc, layer.routes[3].dt_bias},
                                      rng.child(6)));
  }
  {
    auto block = VSSBlock<double>::init(4, 4, 3, DiscretizeMode::exact, false, rng);
    auto fm = verify_randn<double>({4, 3, 4}, rng, 1.0, true);
    auto r = verify_randn<double>({4, 3, 4}, rng);
    report("vss_block", grad_check<double>([&] { return sum(mul(block.forward(fm), r)); },
                                           {fm, block.gate.w, block.conv, block.norm2.g},
                                           rng.child(7)));
  }
  {
    VMUNetConfig cfg;
    cfg.embed_dim = 8;
    cfg.state_dim = 2;
    cfg.depths = {1, 1, 1, 1};
    cfg.dec_depths = {1, 1, 1, 1};
    cfg.expansion = 1.0;
    cfg.share_projections = true;
    cfg.in_h = cfg.in_w = 32;
    auto net = VMUNet<double>::init(cfg, rng);
    auto image = verify_randn<double>({3, 32, 32}, rng, 0.5, true);
    auto r = verify_randn<double>({1, 32, 32}, rng);
    auto params = net.parameters();
    auto fn = [&] { return sum(mul(net.forward(image), r)); };
    report("vmunet", grad_check<double>(fn, {image, params[0].second, params.back().second},
                                        rng.child(8), 1e-5, 12));
  }
  {
    auto z = verify_randn<double>({5, 6}, rng, 1.0, true);
    std::vector<double> tv(30);
    for (auto& t : tv) t = rng.uniform() < 0.4 ? 1.0 : 0.0;
    auto truth = Tensor<double>::from_data({5, 6}, std::move(tv));
    report("dice_loss", grad_check<double>([&] { return dice_loss(sigmoid(z), truth); }, {z},
                                           rng.child(9)));
  }

  bool ok = worst < 1e-4;
  std::printf("[gradients] max rel err %.3g (tol 1e-4) %s\n", worst, ok ? "PASS" : "FAIL");
  return ok;
}

bool suite_metrics(uint64_t seed) {
  Rng rng(seed);
  double worst = 0;
  for (int it = 0; it < 1000; ++it) {
    int64_t h = 1 + int64_t(rng.uniform_int(24));
    int64_t w = 1 + int64_t(rng.uniform_int(24));
    BinaryMask p{h, w, std::vector<uint8_t>(size_t(h * w), 0)};
    BinaryMask t{h, w, std::vector<uint8_t>(size_t(h * w), 0)};
    double dp = rng.uniform(0.05, 0.95), dt = rng.uniform(0.05, 0.95);
    for (auto& v : p.v) v = rng.uniform() < dp ? 1 : 0;
    for (auto& v : t.v) v = rng.uniform() < dt ? 1 : 0;
    p.v[0] = 1;  // keep the pair nonempty
    t.v[size_t(h * w - 1)] = 1;
    double i = iou(p, t);
    worst = std::max(worst, std::abs(dice_score(p, t) - 2.0 * i / (1.0 + i)));
  }
  std::printf("[metrics] 1000 nonempty pairs, max |DS - 2*IoU/(1+IoU)| = %.3g (tol 1e-12)\n",
              worst);

  BinaryMask p{1, 3, {1, 1, 0}};
  BinaryMask t{1, 3, {0, 1, 1}};
  double hand_ds = std::abs(dice_score(p, t) - 0.5);
  double hand_iou = std::abs(iou(p, t) - 1.0 / 3.0);
  std::printf("[metrics] hand-counted pair: |DS - 0.5| = %.3g, |IoU - 1/3| = %.3g\n", hand_ds,
              hand_iou);
  bool ok = worst < 1e-12 && hand_ds < 1e-12 && hand_iou < 1e-12;
  std::printf("[metrics] %s\n", ok ? "PASS" : "FAIL");
  return ok;
}

bool suite_complexity() {
  double scan_err = 0;
  for (int64_t L : {64, 256, 1024})
    for (int64_t d : {8, 32})
      scan_err = std::max(scan_err, std::abs(double(flops_scan(2 * L, d, 16)) /
                                                 double(flops_scan(L, d, 16)) -
                                             2.0));
  double attn_err = 0;
  for (int64_t L : {256, 1024})
    attn_err = std::max(attn_err, std::abs(double(flops_attention_quadratic(2 * L, 64)) /
                                               double(flops_attention_quadratic(L, 64)) -
                                           4.0));
  std::printf("[complexity] scan doubling ratio error %.3g, attention quadratic ratio error %.3g\n",
              scan_err, attn_err);

  std::vector<double> px, vm, vit;
  for (int64_t S : {224, 448, 896, 1792}) {
    px.push_back(double(S) * double(S) / 1e6);
    vm.push_back(double(flops_network(build_arch("vmunet", S))) / 1e9);
    vit.push_back(double(flops_network(build_arch("vit-core", S))) / 1e9);
  }
  double r2_vm = poly_fit_r2(px, vm, 1);
  double r2_vit = poly_fit_r2(px, vit, 2);
  std::printf("[complexity] linear fit R^2(vmunet) = %.6f, quadratic fit R^2(vit-core) = %.6f\n",
              r2_vm, r2_vit);

  double vm_top = double(flops_network(build_arch("vmunet", 1792)));
  double hybrid_top = double(flops_network(build_arch("hybrid-core", 1792)));
  double ratio = vm_top / hybrid_top;
  std::printf("[complexity] vmunet / hybrid-core at 1792 = %.4f (bound 0.15)\n", ratio);

  bool ok = scan_err == 0.0 && attn_err == 0.0 && r2_vm > 0.999 && r2_vit > 0.999 &&
            ratio <= 0.15;
  std::printf("[complexity] %s\n", ok ? "PASS" : "FAIL");
  return ok;
}

struct VerifyCmd {
  std::string config;
  std::string suite = "equivalence,gradients,metrics,complexity";
  uint64_t seed = 0;
};

int run_verify(CLI::App* cmd, VerifyCmd& a) {
  FlagLayer layer;
  layer.load_file(a.config);
  layer.resolve(cmd->count("--suite") > 0, "suite", a.suite);
  layer.resolve(cmd->count("--seed") > 0, "seed", a.seed);
  layer.echo();

  bool all_ok = true;
  for (const auto& name : split_list(a.suite)) {
    bool ok;
    if (name == "equivalence")
      ok = suite_equivalence(a.seed);
    else if (name == "gradients")
      ok = suite_gradients(a.seed);
    else if (name == "metrics")
      ok = suite_metrics(a.seed);
    else if (name == "complexity")
      ok = suite_complexity();
    else
      throw CLI::ValidationError(
          "--suite",
          "unknown suite '" + name + "' (expected equivalence, gradients, metrics, complexity)");
    all_ok = all_ok && ok;
  }
  std::printf("verify: %s\n", all_ok ? "PASS" : "FAIL");
  return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"selective-scan U-Net crack segmentation toolkit"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "cap worker threads (1 = fully deterministic order)");

  GenerateCmd gen;
  gen.cfg.seed = 0;
  auto* c_gen = app.add_subcommand("generate", "write a synthetic crack dataset");
  c_gen->add_option("--config", gen.config, "key=value config file");
  c_gen->add_option("--out", gen.out, "output directory");
  c_gen->add_option("--count", gen.cfg.count, "number of samples");
  c_gen->add_option("--size", gen.cfg.size, "square image size in pixels");
  c_gen->add_option("--width_min", gen.cfg.width_min, "minimum crack width");
  c_gen->add_option("--width_max", gen.cfg.width_max, "maximum crack width");
  c_gen->add_option("--cracks_min", gen.cfg.cracks_min, "minimum cracks per image");
  c_gen->add_option("--cracks_max", gen.cfg.cracks_max, "maximum cracks per image");
  c_gen->add_option("--cracks", gen.cracks, "fixed cracks per image (sets both bounds)");
  c_gen->add_option("--texture", gen.cfg.texture, "background texture amplitude");
  c_gen->add_option("--noise", gen.cfg.noise, "per-pixel noise amplitude");
  c_gen->add_option("--seed", gen.cfg.seed, "generator seed");

  TrainCmd tr;
  auto* c_train = app.add_subcommand("train", "train a model on an image/mask dataset");
  c_train->add_option("--config", tr.config, "key=value config file");
  c_train->add_option("--data", tr.data, "dataset directory (images/ + masks/)");
  c_train->add_option("--out", tr.out, "run directory for checkpoints and the log");
  c_train->add_option("--preset", tr.preset, "model preset: tiny or full");
  c_train->add_option("--embed_dim", tr.embed_dim, "stage-0 channel count");
  c_train->add_option("--state_dim", tr.state_dim, "scan state size");
  c_train->add_option("--depths", tr.depths, "encoder blocks per stage, e.g. 2,2,9,2");
  c_train->add_option("--dec_depths", tr.dec_depths, "decoder blocks per stage");
  c_train->add_option("--expansion", tr.expansion, "block hidden expansion factor");
  c_train->add_flag("--share_projections,!--no-share_projections", tr.share,
                    "share delta/B/C projections across scan routes");
  c_train->add_option("--mode", tr.mode, "discretization: exact or simplified");
  c_train->add_option("--lr", tr.tc.lr, "learning rate");
  c_train->add_option("--batch_size", tr.tc.batch_size, "samples per optimizer step");
  c_train->add_option("--epochs", tr.tc.epochs, "training epochs");
  c_train->add_option("--weight_decay", tr.tc.weight_decay, "decoupled weight decay");
  c_train->add_option("--clip_norm", tr.tc.clip_norm, "global gradient norm cap (0 disables)");
  c_train->add_option("--val_fraction", tr.tc.val_fraction, "held-out validation fraction");
  c_train->add_flag("--no_augment", tr.no_augment, "disable flip/jitter augmentation");
  c_train->add_option("--precision", tr.precision, "f32 or f64");
  c_train->add_option("--seed", tr.tc.seed, "training seed");

  EvalCmd ev;
  auto* c_eval = app.add_subcommand("eval", "score a checkpoint against a dataset");
  c_eval->add_option("--config", ev.config, "key=value config file");
  c_eval->add_option("--data", ev.data, "dataset directory (images/ + masks/)");
  c_eval->add_option("--checkpoint", ev.checkpoint, "checkpoint file");
  c_eval->add_option("--out", ev.out, "also write the CSV here");

  SegmentCmd seg;
  auto* c_seg = app.add_subcommand("segment", "write predicted masks for input images");
  c_seg->add_option("--config", seg.config, "key=value config file");
  c_seg->add_option("--checkpoint", seg.checkpoint, "checkpoint file");
  c_seg->add_option("--input", seg.input, "input .png file or directory");
  c_seg->add_option("--out", seg.out, "output directory for mask PNGs");

  FlopsCmd fl;
  auto* c_flops = app.add_subcommand("flops", "tabulate analytic FLOPs per architecture");
  c_flops->add_option("--config", fl.config, "key=value config file");
  c_flops->add_option("--arch", fl.arch, "comma list of architectures");
  c_flops->add_option("--resolutions", fl.resolutions, "comma list of input sizes");
  c_flops->add_option("--out", fl.out, "also write the CSV here");

  VerifyCmd vf;
  auto* c_verify = app.add_subcommand("verify", "run the numeric self-check suites");
  c_verify->add_option("--config", vf.config, "key=value config file");
  c_verify->add_option("--suite", vf.suite, "comma list of suites");
  c_verify->add_option("--seed", vf.seed, "instance generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#endif
  if (gen.cfg.seed == 0 && c_gen->count("--seed") == 0) gen.cfg.seed = env_seed();
  if (tr.tc.seed == 0 && c_train->count("--seed") == 0) tr.tc.seed = env_seed();
  if (vf.seed == 0 && c_verify->count("--seed") == 0) vf.seed = env_seed();

  try {
    if (app.got_subcommand(c_gen)) return run_generate(c_gen, gen);
    if (app.got_subcommand(c_train)) return run_train(c_train, tr);
    if (app.got_subcommand(c_eval)) return run_eval(c_eval, ev);
    if (app.got_subcommand(c_seg)) return run_segment(c_seg, seg);
    if (app.got_subcommand(c_flops)) return run_flops(c_flops, fl);
    if (app.got_subcommand(c_verify)) return run_verify(c_verify, vf);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
