#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "uq/datagen/dataset.hpp"
#include "uq/features/features.hpp"

namespace uq::feat {

/// Features for every generation of a dataset, in dataset order. Traces must
/// be loaded.
std::vector<FeatureMatrix> extract_dataset(const data::Dataset& dataset, const FeatureSpec& spec,
                                           const lm::LMWeights& weights, std::size_t jobs);

// Feature store: features.jsonl holds one line per matrix (generation,
// fingerprint, rows, dim, offset); features.bin holds the rows as
// little-endian f32, back to back.

/// Appends to the store in `dir`, creating it if needed. Raises
/// kCompatibility when the store already holds a different fingerprint.
void append_features(const std::filesystem::path& dir, std::span<const FeatureMatrix> matrices);
std::vector<FeatureMatrix> read_features(const std::filesystem::path& dir);
/// Empty when the store does not exist or is empty.
std::string store_fingerprint(const std::filesystem::path& dir);

}  // namespace uq::feat
