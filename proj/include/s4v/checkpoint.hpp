#pragma once

#include <map>
#include <string>

#include "s4v/nn.hpp"
#include "s4v/tensor.hpp"

namespace s4v {

// Tensor archive, magic "S4V1":
//   "S4V1" | u32 tensor count | per tensor:
//   u32 name length | UTF-8 name | u8 dtype (0=f32, 1=f64) | u8 rank |
//   rank x u64 dims | raw little-endian data
// Entries are written in name order, so save -> load -> save is
// byte-identical.
using TensorArchive = std::map<std::string, Tensor>;

void save_archive(const TensorArchive& archive, const std::string& path);
TensorArchive load_archive(const std::string& path);

// Copies archived buffers into the registry's existing tensors. Missing and
// unexpected names are both reported with full lists; per-tensor shape/dtype
// mismatches name the offending tensor.
void load_into_store(nn::ParamStore& store, const std::string& path);
void save_store(const nn::ParamStore& store, const std::string& path);

}  // namespace s4v
