#pragma once

#include <filesystem>
#include <vector>

#include "uq/head/head.hpp"

namespace uq::head {

/// Random-search space; every value must come from the default grid.
struct SearchSpace {
  std::vector<double> learning_rates{1e-5, 3e-5, 5e-5, 1e-4, 2e-4, 5e-4, 1e-2};
  std::size_t min_epochs = 2;
  std::size_t max_epochs = 15;
  std::vector<double> warmups{0.0, 0.05, 0.1};
  std::vector<std::size_t> windows{1, 2, 3, 4, 5, 10};
  std::vector<double> dropouts{0.0, 0.05, 0.1, 0.2};
  std::vector<double> weight_decays{0.0, 1e-2, 1e-1};

  void validate() const;  // kConfig
};

struct Trial {
  std::size_t index = 0;
  double learning_rate = 0.0;
  std::size_t epochs = 0;
  double warmup = 0.0;
  std::size_t window = 0;
  double dropout = 0.0;
  double weight_decay = 0.0;
  double val_pr_auc = 0.0;
  std::size_t best_epoch = 0;
};

struct TuneResult {
  Trial best;  // first trial with the highest validation PR-AUC
  std::vector<Trial> trials;
};

/// Trains one head per sampled configuration on the "train" split and
/// scores it on "val". Features are extracted once per window size.
TuneResult tune_hyperparameters(const data::Dataset& dataset, const lm::LMWeights& weights,
                                const feat::FeatureSpec& base_spec, const UQHeadConfig& base_config,
                                const HeadTrainOptions& base_options, const SearchSpace& space, std::size_t budget,
                                std::uint64_t seed, std::size_t jobs);

/// CSV with one row per trial.
void write_trial_log(const std::filesystem::path& path, const TuneResult& result);

}  // namespace uq::head
