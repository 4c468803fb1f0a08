#pragma once

#include <filesystem>
#include <string>

#include "hunet/data.hpp"
#include "hunet/model.hpp"
#include "hunet/train.hpp"

namespace hunet {

// Plain-text experiment configuration: `key = value` lines under [model],
// [train] and [data] sections. Every key has a default, so an empty manifest
// is valid; unknown sections or keys are rejected.
struct Manifest {
    ModelConfig model;
    TrainConfig train;
    SyntheticSpec data;
};

Manifest parse_manifest(const std::string& text);
Manifest load_manifest(const std::filesystem::path& path);

// Canonical serialization with every default filled in; parsing it back
// reproduces the manifest exactly.
std::string manifest_to_text(const Manifest& m);

}  // namespace hunet
