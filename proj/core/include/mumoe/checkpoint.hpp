#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mumoe/model.hpp"
#include "mumoe/optimizer.hpp"

namespace mumoe {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
constexpr DType dtype_of() {
  return sizeof(T) == 4 ? DType::f32 : DType::f64;
}

struct CheckpointArray {
  std::string name;
  Shape shape;
  std::vector<double> values;  // exact for both storage types
};

/// Little-endian container:
///   "MUMO" | u32 version (1) | u8 dtype | u32 count
///   per array: u16 name length | name | u8 order | u64 extents | scalars
struct CheckpointFile {
  DType dtype = DType::f64;
  std::vector<CheckpointArray> arrays;

  const CheckpointArray* find(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& file);
/// FormatError on bad magic, unsupported version or dtype, truncated or
/// trailing bytes, and duplicate names.
CheckpointFile decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint_file(const std::filesystem::path& path, const CheckpointFile& file);
CheckpointFile read_checkpoint_file(const std::filesystem::path& path);

/// Arrays: model.meta, layer{k}.config, layer{k}.mask{e} (when masked),
/// every parameter under layer{k}.<name>, batch-norm running statistics,
/// and with an optimizer optim.state plus optim.slot{1,2}.<param>.
/// Metadata scalars are split into 16-bit words so they survive an f32
/// file exactly.
template <typename T>
CheckpointFile model_to_checkpoint(const Model<T>& model, const OptimState<T>* optim = nullptr);

/// Rebuilds the model; every array must be consumed and match its shape.
template <typename T>
Model<T> model_from_checkpoint(const CheckpointFile& file, OptimState<T>* optim = nullptr);

template <typename T>
void save_checkpoint(const Model<T>& model, const std::filesystem::path& path, const OptimState<T>* optim = nullptr);

template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path, OptimState<T>* optim = nullptr);

}  // namespace mumoe
