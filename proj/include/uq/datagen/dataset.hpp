#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "uq/datagen/annotator.hpp"
#include "uq/datagen/claims.hpp"
#include "uq/datagen/world.hpp"
#include "uq/toylm/model.hpp"

namespace uq::data {

struct ClaimRecord {
  std::size_t generation = 0;
  std::size_t claim = 0;
  std::vector<std::size_t> positions;  // absolute token positions, all >= prompt_len
  std::string attribute;
  std::string value;
  Label label = Label::kUnknown;

  /// Unknown claims stay in the dataset but are excluded from training and
  /// evaluation.
  bool labeled() const { return label != Label::kUnknown; }
  bool positive() const { return label == Label::kUnsupported; }
};

struct GenerationRecord {
  std::size_t id = 0;
  std::size_t entity = 0;
  std::string domain;
  std::string split;
  Tier tier = Tier::kFrequent;
  std::string prompt;
  std::vector<lm::TokenId> tokens;
  std::size_t prompt_len = 0;
  std::vector<ClaimRecord> claims;
  lm::TraceRecord trace;  // empty when loaded without traces
};

struct Dataset {
  std::vector<GenerationRecord> generations;

  std::size_t claim_count() const;
  std::size_t labeled_count(const std::string& split) const;
  /// Split names in first-appearance order.
  std::vector<std::string> splits() const;
  std::vector<const GenerationRecord*> split(const std::string& name) const;
};

enum class AnnotatorKind { kOracle, kRemote };

struct BuildOptions {
  std::size_t max_new = 40;
  std::size_t jobs = 1;
  AnnotatorKind annotator = AnnotatorKind::kOracle;
  RemoteAnnotatorConfig remote;
};

/// Greedy generation, trace capture, claim extraction and labelling for
/// every prompt. Generation ids follow prompt order.
Dataset build_dataset(const FactWorld& world, const lm::Tokenizer& tok, const lm::LMWeights& weights,
                      const std::vector<Prompt>& prompts, const BuildOptions& options);

/// Raises kDegenerateData naming the split when a split's labelled claims
/// are all one class (or there are none).
void check_prevalence(const Dataset& dataset);

struct TierRate {
  std::size_t labeled = 0;
  std::size_t unsupported = 0;
  double rate() const { return labeled ? static_cast<double>(unsupported) / static_cast<double>(labeled) : 0.0; }
};
std::map<Tier, TierRate> unsupported_rate_by_tier(const Dataset& dataset);

/// Writes <split>.jsonl (one generation per line) and <split>.traces (trace
/// blobs back to back, referenced by byte offset) for every split, plus
/// splits.json listing them.
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& dir, bool load_traces = true);
/// Loads only the named splits.
Dataset read_dataset(const std::filesystem::path& dir, const std::vector<std::string>& splits, bool load_traces);

}  // namespace uq::data
