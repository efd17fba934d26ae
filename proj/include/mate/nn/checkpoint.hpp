#pragma once

#include "mate/nn/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

// Binary container:
//   "MATE" | u32 version | { u32 name_len | name | u8 dtype | u32 rank | u64 extents[rank] | values }*
// All integers and values little-endian; dtype 1 = f64, 2 = f32. Entries run to end of file.
namespace mate::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f64 = 1, f32 = 2 };

struct NamedTensor {
  std::string name;
  Tensor tensor;
  DType dtype = DType::f64;
};

using TensorList = std::vector<NamedTensor>;

std::vector<std::uint8_t> encode_checkpoint(const TensorList& tensors);
TensorList decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const std::filesystem::path& path, const TensorList& tensors);
TensorList read_checkpoint(const std::filesystem::path& path);

TensorList snapshot(std::span<Parameter* const> params);
// Loads by name. Throws DataError naming the first parameter that is missing or has a different shape.
void restore(std::span<Parameter* const> params, const TensorList& tensors);

}  // namespace mate::nn
