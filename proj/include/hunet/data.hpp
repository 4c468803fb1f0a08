#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hunet/metrics.hpp"
#include "hunet/rng.hpp"
#include "hunet/tensor.hpp"

namespace hunet {

// One image/mask training pair. Image values are scaled to [0, 1].
struct SamplePair {
    Tensor<float> image;  // [1, c, h, w]
    BinaryMask mask;
    std::string id;
};

struct DatasetSplit {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;
    std::uint64_t seed = 0;
};

enum class ShapeKind { ellipse, rectangle };

struct SyntheticSpec {
    int count = 64;
    int size = 64;
    std::vector<ShapeKind> shapes = {ShapeKind::ellipse, ShapeKind::rectangle};
    double noise_sigma = 0.02;
    bool hair_strokes = true;
    bool intensity_gradient = true;
    std::uint64_t seed = 7;
};

// --- PGM (P5) / PPM (P6) binary 8-bit images -------------------------------

// Reads into [1, 1, h, w] (P5) or [1, 3, h, w] (P6), values divided by 255.
Tensor<float> load_pnm(const std::filesystem::path& path);

// P5 grayscale; pixels > 127 are foreground.
BinaryMask load_mask(const std::filesystem::path& path);

// Writes 8-bit P5/P6 depending on channel count; values clamped to [0, 1]
// and rounded to the nearest of 256 levels.
void save_pnm(const std::filesystem::path& path, const Tensor<float>& image);
void save_mask(const std::filesystem::path& path, const BinaryMask& mask);

// --- preprocessing ----------------------------------------------------------

// Center-crop to the largest centered square, then nearest-neighbor resize to
// target x target. The mask goes through the identical index mapping, so it
// stays strictly binary.
SamplePair preprocess(const SamplePair& sample, int target, bool allow_upscale = false);

// --- dataset splitting ------------------------------------------------------

// Deterministic 80/10/10 split: seeded shuffle, val and test take floor(10%)
// each, train keeps the remainder. Requires at least 10 ids.
DatasetSplit split_dataset(std::vector<std::string> ids, std::uint64_t seed);

// Three-section text form: [train] / [val] / [test], one id per line.
std::string split_to_text(const DatasetSplit& split);
DatasetSplit split_from_text(const std::string& text);

// --- synthetic data ---------------------------------------------------------

// Seed-deterministic image/mask pairs: one filled ellipse or rectangle of
// distinct intensity on a flat background, with optional intensity gradient,
// hair-like strokes and Gaussian noise applied to the image only.
std::vector<SamplePair> gen_synthetic(const SyntheticSpec& spec);

std::string synthetic_spec_to_text(const SyntheticSpec& spec);

// --- directory layout: root/images/<id>.pgm|ppm, root/masks/<id>.pgm --------

void save_dataset(const std::filesystem::path& root, const std::vector<SamplePair>& samples);
std::vector<SamplePair> load_dataset(const std::filesystem::path& root);

}  // namespace hunet
