#include "uq/head/tune.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "uq/common/error.hpp"
#include "uq/common/io.hpp"
#include "uq/common/random.hpp"
#include "uq/features/store.hpp"

namespace uq::head {

namespace {

template <typename V>
void check_subset(const std::vector<V>& values, const std::vector<V>& grid, const char* what) {
  if (values.empty()) fail(ErrorCode::kConfig, std::string("search space has no ") + what + " values");
  for (const auto& v : values) {
    if (std::find(grid.begin(), grid.end(), v) == grid.end()) {
      std::ostringstream os;
      os << what << " value " << v << " is not in the grid";
      fail(ErrorCode::kConfig, os.str());
    }
  }
}

template <typename V>
V pick(const std::vector<V>& values, std::mt19937_64& rng) {
  return values[uniform_index(rng, values.size())];
}

}  // namespace

void SearchSpace::validate() const {
  const SearchSpace grid;
  check_subset(learning_rates, grid.learning_rates, "learning rate");
  check_subset(warmups, grid.warmups, "warmup");
  check_subset(windows, grid.windows, "window");
  check_subset(dropouts, grid.dropouts, "dropout");
  check_subset(weight_decays, grid.weight_decays, "weight decay");
  if (min_epochs < grid.min_epochs || max_epochs > grid.max_epochs || min_epochs > max_epochs) {
    fail(ErrorCode::kConfig, "epoch range must lie within 2..15");
  }
}

TuneResult tune_hyperparameters(const data::Dataset& dataset, const lm::LMWeights& weights,
                                const feat::FeatureSpec& base_spec, const UQHeadConfig& base_config,
                                const HeadTrainOptions& base_options, const SearchSpace& space, std::size_t budget,
                                std::uint64_t seed, std::size_t jobs) {
  if (budget == 0) fail(ErrorCode::kConfig, "tuning budget must be at least 1");
  space.validate();
  const auto train = claim_examples(dataset, "train");
  const auto val = claim_examples(dataset, "val");

  std::mt19937_64 rng(seed);
  std::map<std::size_t, std::vector<feat::FeatureMatrix>> features;  // by window
  TuneResult result;
  for (std::size_t t = 0; t < budget; ++t) {
    Trial trial;
    trial.index = t;
    trial.learning_rate = pick(space.learning_rates, rng);
    trial.epochs = space.min_epochs + uniform_index(rng, space.max_epochs - space.min_epochs + 1);
    trial.warmup = pick(space.warmups, rng);
    trial.window = pick(space.windows, rng);
    trial.dropout = pick(space.dropouts, rng);
    trial.weight_decay = pick(space.weight_decays, rng);

    auto spec = base_spec;
    if (spec.enabled(feat::Family::kAttWindow)) spec.window = trial.window;
    auto& mats = features[spec.window];
    if (mats.empty()) mats = feat::extract_dataset(dataset, spec, weights, jobs);

    auto config = base_config;
    config.dropout = trial.dropout;
    auto options = base_options;
    options.epochs = trial.epochs;
    options.adam.peak_lr = trial.learning_rate;
    options.adam.warmup_fraction = trial.warmup;
    options.adam.weight_decay = trial.weight_decay;
    const auto r = train_head(mats, train, val, spec, weights.config, config, options);
    trial.val_pr_auc = r.report.best_val_pr_auc;
    trial.best_epoch = r.report.best_epoch;
    result.trials.push_back(trial);
    if (t == 0 || trial.val_pr_auc > result.best.val_pr_auc) result.best = trial;
  }
  return result;
}

void write_trial_log(const std::filesystem::path& path, const TuneResult& result) {
  std::ostringstream os;
  os << "trial,learning_rate,epochs,warmup,window,dropout,weight_decay,val_pr_auc,best_epoch\n";
  for (const auto& t : result.trials) {
    os << t.index << ',' << t.learning_rate << ',' << t.epochs << ',' << t.warmup << ',' << t.window << ','
       << t.dropout << ',' << t.weight_decay << ',' << t.val_pr_auc << ',' << t.best_epoch << '\n';
  }
  write_text_file(path, os.str());
}

}  // namespace uq::head
