#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tss/model.hpp"

namespace tss {

struct NamedTensor {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;

  bool operator==(const NamedTensor&) const = default;
};

// Named-tensor container with a JSON metadata blob. On disk:
//   "TSSCKPT\0" | u32 version | u32 meta bytes | meta | u32 tensor count |
//   per tensor: u32 name bytes | name | u64 rows | u64 cols | f32 payload
// all little-endian.
struct Checkpoint {
  std::string meta_json = "{}";
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(std::string_view name) const;
  const NamedTensor& at(std::string_view name) const;
  void put(const std::string& name, const ad::Tensor& t);
  void put(NamedTensor t);

  bool operator==(const Checkpoint&) const = default;
};

void capture(Checkpoint& ckpt, const ParamList& params);
// Overwrites each parameter's values from the checkpoint tensor of the same
// name (shape must match).
void restore(const ParamList& params, const Checkpoint& ckpt);
// Adapter stored under "<prefix>.down.*" / "<prefix>.up.*".
Adapter adapter_from_checkpoint(const Checkpoint& ckpt, const std::string& prefix = "adapter");

std::string checkpoint_to_bytes(const Checkpoint& ckpt);
Checkpoint checkpoint_from_bytes(std::string_view bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tss
