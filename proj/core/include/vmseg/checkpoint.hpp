#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vmseg/kvconfig.hpp"
#include "vmseg/vmunet.hpp"

namespace vmseg {

// Flat binary container of named tensors plus a key=value config header.
// Layout (all integers little-endian):
//   8 bytes magic "VMSG0001"
//   u64 header length, header bytes (key=value text)
//   u64 tensor count
//   per tensor: u32 name length, name bytes, u8 dtype (1=f32, 2=f64),
//               u8 rank, u64 dims[rank], raw element data

struct TensorRecord {
  std::string name;
  uint8_t dtype = 0;
  Shape shape;
  std::vector<unsigned char> raw;
};

struct Checkpoint {
  KvMap config;
  std::vector<TensorRecord> tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

template <typename T> constexpr uint8_t dtype_tag();
template <> constexpr uint8_t dtype_tag<float>() { return 1; }
template <> constexpr uint8_t dtype_tag<double>() { return 2; }

// Tag shared by every tensor in the container (0 when it holds none).
uint8_t checkpoint_dtype(const Checkpoint& ck);

KvMap vmunet_config_kv(const VMUNetConfig& cfg);
VMUNetConfig vmunet_config_from_kv(const KvMap& kv);

template <typename T>
Checkpoint vmunet_checkpoint(VMUNet<T>& net);

// Rebuilds the network from the stored config and loads every parameter;
// missing, extra, or reshaped tensors and dtype mismatches are errors.
template <typename T>
VMUNet<T> vmunet_from_checkpoint(const Checkpoint& ck);

}  // namespace vmseg
