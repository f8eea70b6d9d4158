#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dpanet/model.hpp"

namespace dpanet {

/// Named array carried alongside the parameters (e.g. dataset scaler).
struct ExtraArray {
  std::string name;
  numerics::Shape shape;
  std::vector<double> values;
};

/// Layout: magic "DPANETCK", u32 version, u64 config fingerprint, u32 length +
/// canonical config text, u32 array count, manifest (u32 name length, name,
/// u8 dtype, u32 ndim, u64 dims...), then every array's little-endian data in
/// manifest order. Parameters carry the model dtype; extras are float64.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const DpaNet<T>& model,
                     const std::vector<ExtraArray>& extras = {});

/// Config stored in a checkpoint, for rebuilding the model before loading.
ModelConfig read_checkpoint_config(const std::filesystem::path& path);

/// Overwrites the model's parameters. Throws IncompatibleCheckpointError on
/// fingerprint, name, dtype or shape mismatch and MalformedCheckpointError on
/// a damaged file. Returns the extra arrays.
template <typename T>
std::vector<ExtraArray> load_checkpoint(const std::filesystem::path& path, DpaNet<T>& model);

}  // namespace dpanet
