#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hunet/model.hpp"
#include "hunet/optim.hpp"

namespace hunet {

// Binary checkpoint. All integers little-endian, payloads 32-bit floats:
//
//   magic "UHKT" | u32 version | u32 config_len + config text (manifest)
//   u64 training step | u8 has_optimizer | u32 tensor_count
//   per tensor: u32 name_len + name | u32 rank (=4) | 4x u32 extents | f32 payload
//   optimizer (if flagged): u64 t, then per parameter two unnamed tensor
//   records (first moment, second moment) in registry order
//   u32 CRC-32 (IEEE, reflected) of every preceding byte
struct CheckpointTensor {
    std::string name;
    Tensor<float> value;
};

struct Checkpoint {
    std::uint32_t version = 1;
    std::string config_text;  // fully-resolved manifest
    std::uint64_t step = 0;
    std::vector<CheckpointTensor> tensors;
    std::optional<AdamState<float>> optimizer;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::uint32_t crc32(const std::uint8_t* data, std::size_t len, std::uint32_t seed = 0);

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin);

void save_checkpoint(const std::filesystem::path& path, HybridUNet<float>& model,
                     const std::string& config_text, std::uint64_t step,
                     const AdamState<float>* optimizer = nullptr);

Checkpoint read_checkpoint(const std::filesystem::path& path);

// Fills an existing model's parameters from a checkpoint; the tensor list
// must match the registry name-for-name and shape-for-shape.
void load_into(HybridUNet<float>& model, const Checkpoint& ck);

}  // namespace hunet
