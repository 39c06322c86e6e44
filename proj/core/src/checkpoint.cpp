#include "vmseg/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "vmseg/errors.hpp"
#include "vmseg/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

namespace vmseg {

namespace {

constexpr char kMagic[8] = {'V', 'M', 'S', 'G', '0', '0', '0', '1'};

void write_bytes(std::ofstream& out, const void* p, size_t n, const std::string& path) {
  out.write(reinterpret_cast<const char*>(p), std::streamsize(n));
  if (!out) throw IoError("short write to checkpoint " + path);
}

template <typename U>
void write_pod(std::ofstream& out, U v, const std::string& path) {
  write_bytes(out, &v, sizeof(v), path);
}

void read_bytes(std::ifstream& in, void* p, size_t n, const std::string& path) {
  in.read(reinterpret_cast<char*>(p), std::streamsize(n));
  if (in.gcount() != std::streamsize(n)) throw IoError("truncated checkpoint " + path);
}

template <typename U>
U read_pod(std::ifstream& in, const std::string& path) {
  U v;
  read_bytes(in, &v, sizeof(v), path);
  return v;
}

std::string join_dims(const std::array<int64_t, 4>& a) {
  std::string s;
  for (int i = 0; i < 4; ++i) {
    if (i) s += ',';
    s += std::to_string(a[size_t(i)]);
  }
  return s;
}

std::array<int64_t, 4> split_dims(const std::string& s, const std::string& key) {
  std::array<int64_t, 4> out{};
  size_t pos = 0;
  for (int i = 0; i < 4; ++i) {
    size_t next = i < 3 ? s.find(',', pos) : s.size();
    if (next == std::string::npos)
      throw ConfigError("config key '" + key + "' needs 4 comma-separated values: " + s);
    try {
      out[size_t(i)] = std::stoll(s.substr(pos, next - pos));
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' has a bad entry: " + s);
    }
    pos = next + 1;
  }
  return out;
}

std::string double_str(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create checkpoint " + path);
  write_bytes(out, kMagic, sizeof(kMagic), path);
  std::string header = serialize_kv(ck.config);
  write_pod<uint64_t>(out, header.size(), path);
  write_bytes(out, header.data(), header.size(), path);
  write_pod<uint64_t>(out, ck.tensors.size(), path);
  for (const auto& t : ck.tensors) {
    if (t.dtype != 1 && t.dtype != 2)
      throw ContractError("checkpoint tensor '" + t.name + "' has bad dtype tag " +
                          std::to_string(int(t.dtype)));
    write_pod<uint32_t>(out, uint32_t(t.name.size()), path);
    write_bytes(out, t.name.data(), t.name.size(), path);
    write_pod<uint8_t>(out, t.dtype, path);
    write_pod<uint8_t>(out, uint8_t(t.shape.size()), path);
    for (int64_t d : t.shape) write_pod<uint64_t>(out, uint64_t(d), path);
    size_t elem = t.dtype == 1 ? 4 : 8;
    size_t expect = size_t(shape_numel(t.shape)) * elem;
    if (t.raw.size() != expect)
      throw ContractError("checkpoint tensor '" + t.name + "' payload is " +
                          std::to_string(t.raw.size()) + " bytes, shape needs " +
                          std::to_string(expect));
    write_bytes(out, t.raw.data(), t.raw.size(), path);
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  char magic[8];
  read_bytes(in, magic, sizeof(magic), path);
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError(path + " is not a checkpoint (bad magic)");
  Checkpoint ck;
  auto header_len = read_pod<uint64_t>(in, path);
  std::string header(header_len, '\0');
  read_bytes(in, header.data(), header.size(), path);
  ck.config = parse_kv(header);
  auto count = read_pod<uint64_t>(in, path);
  ck.tensors.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    TensorRecord t;
    auto name_len = read_pod<uint32_t>(in, path);
    t.name.resize(name_len);
    read_bytes(in, t.name.data(), t.name.size(), path);
    t.dtype = read_pod<uint8_t>(in, path);
    if (t.dtype != 1 && t.dtype != 2)
      throw IoError("checkpoint " + path + " tensor '" + t.name + "' has unknown dtype tag " +
                    std::to_string(int(t.dtype)));
    auto rank = read_pod<uint8_t>(in, path);
    t.shape.resize(rank);
    for (auto& d : t.shape) d = int64_t(read_pod<uint64_t>(in, path));
    size_t elem = t.dtype == 1 ? 4 : 8;
    t.raw.resize(size_t(shape_numel(t.shape)) * elem);
    read_bytes(in, t.raw.data(), t.raw.size(), path);
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

uint8_t checkpoint_dtype(const Checkpoint& ck) {
  if (ck.tensors.empty()) return 0;
  uint8_t tag = ck.tensors.front().dtype;
  for (const auto& t : ck.tensors)
    if (t.dtype != tag)
      throw ConfigError("checkpoint mixes dtypes ('" + ck.tensors.front().name + "' vs '" +
                        t.name + "')");
  return tag;
}

KvMap vmunet_config_kv(const VMUNetConfig& cfg) {
  KvMap kv;
  kv["embed_dim"] = std::to_string(cfg.embed_dim);
  kv["state_dim"] = std::to_string(cfg.state_dim);
  kv["depths"] = join_dims(cfg.depths);
  kv["dec_depths"] = join_dims(cfg.dec_depths);
  kv["expansion"] = double_str(cfg.expansion);
  kv["share_projections"] = cfg.share_projections ? "true" : "false";
  kv["mode"] = cfg.mode == DiscretizeMode::exact ? "exact" : "simplified";
  kv["in_h"] = std::to_string(cfg.in_h);
  kv["in_w"] = std::to_string(cfg.in_w);
  return kv;
}

VMUNetConfig vmunet_config_from_kv(const KvMap& kv) {
  VMUNetConfig cfg;
  cfg.embed_dim = kv_int(kv, "embed_dim", cfg.embed_dim);
  cfg.state_dim = kv_int(kv, "state_dim", cfg.state_dim);
  if (kv.count("depths")) cfg.depths = split_dims(kv.at("depths"), "depths");
  if (kv.count("dec_depths")) cfg.dec_depths = split_dims(kv.at("dec_depths"), "dec_depths");
  cfg.expansion = kv_double(kv, "expansion", cfg.expansion);
  cfg.share_projections = kv_bool(kv, "share_projections", cfg.share_projections);
  auto mode = kv_str(kv, "mode", "exact");
  if (mode == "exact")
    cfg.mode = DiscretizeMode::exact;
  else if (mode == "simplified")
    cfg.mode = DiscretizeMode::simplified;
  else
    throw ConfigError("config key 'mode' must be exact or simplified, got " + mode);
  cfg.in_h = kv_int(kv, "in_h", cfg.in_h);
  cfg.in_w = kv_int(kv, "in_w", cfg.in_w);
  cfg.validate();
  return cfg;
}

template <typename T>
Checkpoint vmunet_checkpoint(VMUNet<T>& net) {
  Checkpoint ck;
  ck.config = vmunet_config_kv(net.cfg);
  for (auto& [name, t] : net.parameters()) {
    TensorRecord rec;
    rec.name = name;
    rec.dtype = dtype_tag<T>();
    rec.shape = t.shape();
    rec.raw.resize(size_t(t.numel()) * sizeof(T));
    std::memcpy(rec.raw.data(), t.data().data(), rec.raw.size());
    ck.tensors.push_back(std::move(rec));
  }
  return ck;
}

template <typename T>
VMUNet<T> vmunet_from_checkpoint(const Checkpoint& ck) {
  auto cfg = vmunet_config_from_kv(ck.config);
  Rng rng(0);
  auto net = VMUNet<T>::init(cfg, rng);
  std::unordered_map<std::string, const TensorRecord*> by_name;
  for (const auto& t : ck.tensors) {
    if (!by_name.emplace(t.name, &t).second)
      throw ConfigError("checkpoint has duplicate tensor '" + t.name + "'");
  }
  for (auto& [name, param] : net.parameters()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("checkpoint is missing tensor '" + name + "'");
    const auto& rec = *it->second;
    if (rec.dtype != dtype_tag<T>())
      throw ConfigError("checkpoint tensor '" + name + "' dtype tag " +
                        std::to_string(int(rec.dtype)) + " does not match the requested precision");
    if (rec.shape != param.shape())
      throw ConfigError("checkpoint tensor '" + name + "' has shape " + shape_str(rec.shape) +
                        ", model expects " + shape_str(param.shape()));
    std::memcpy(param.mut_data().data(), rec.raw.data(), rec.raw.size());
    by_name.erase(it);
  }
  if (!by_name.empty())
    throw ConfigError("checkpoint has unexpected tensor '" + by_name.begin()->first + "'");
  return net;
}

template Checkpoint vmunet_checkpoint<float>(VMUNet<float>&);
template Checkpoint vmunet_checkpoint<double>(VMUNet<double>&);
template VMUNet<float> vmunet_from_checkpoint<float>(const Checkpoint&);
template VMUNet<double> vmunet_from_checkpoint<double>(const Checkpoint&);

}  // namespace vmseg
