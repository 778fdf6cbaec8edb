#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "uq/baselines/baselines.hpp"
#include "uq/datagen/dataset.hpp"
#include "uq/datagen/world.hpp"
#include "uq/features/features.hpp"
#include "uq/head/head.hpp"
#include "uq/toylm/model.hpp"

namespace uq::cli {

/// Everything a run needs. Component seeds are derived from `seed` so that
/// one number pins the whole pipeline. The LM vocabulary size is filled in
/// from the world once it exists.
struct RunConfig {
  std::uint64_t seed = 1;
  std::filesystem::path out = "runs/default";
  std::size_t jobs = 1;

  data::WorldConfig world = data::WorldConfig::defaults();
  std::vector<std::string> domains;  // empty: all eight
  data::SplitConfig splits;

  lm::LMConfig lm;
  lm::LMTrainOptions lm_training;

  std::size_t max_new = 40;
  data::AnnotatorKind annotator = data::AnnotatorKind::kOracle;
  data::RemoteAnnotatorConfig remote{.token_env = "UQ_ANNOTATOR_TOKEN"};

  feat::FeatureSpec features;
  head::UQHeadConfig head;
  head::HeadTrainOptions head_training;
  std::size_t tune_budget = 0;  // > 0: random search over the default grid before the final fit

  base::SaplmaConfig saplma;
  base::LookbackConfig lookback;
  std::size_t factoscope_top_m = 10;

  std::vector<std::string> eval_splits;  // empty: test plus every OOD domain
  std::vector<std::size_t> sweep_windows{1, 2, 3, 5, 10};
  std::vector<std::size_t> analyze_offsets{1, 2, 3};
  std::string analyze_split = "train";
  std::size_t permutations = 200;
  std::size_t bench_prompts = 20;
  std::size_t bench_repetitions = 5;

  /// Applies `seed` to every component seed.
  void derive_seeds();
  std::vector<std::string> domain_list() const;
  std::vector<std::string> eval_split_list() const;
  /// Validates every nested config that does not need the vocabulary.
  void validate() const;

  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys raise kConfig.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
};

/// Subset of the config that a stage depends on, hashed into the manifest.
nlohmann::json stage_config(const RunConfig& config, const std::string& stage);

}  // namespace uq::cli
