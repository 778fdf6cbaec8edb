// uqlab: runs the claim-level uncertainty pipeline stage by stage.

#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "uq/cli/pipeline.hpp"
#include "uq/common/error.hpp"
#include "uq/common/io.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  bool force = false;
  std::optional<std::size_t> window_k, top_m, epochs;
  std::optional<double> lr, pos_weight;
  std::optional<std::string> annotator;
  bool quiet = false;
};

uq::cli::RunConfig resolve(const Overrides& o) {
  auto c = o.config.empty() ? uq::cli::RunConfig::from_json(nlohmann::json::object())
                            : uq::cli::RunConfig::load(o.config);
  // Flags win over file values.
  if (o.out) c.out = *o.out;
  if (o.seed) {
    c.seed = *o.seed;
    c.derive_seeds();
  }
  if (o.jobs) c.jobs = *o.jobs;
  if (o.window_k) c.features.window = *o.window_k;
  if (o.top_m) c.features.top_m = *o.top_m;
  if (o.epochs) c.head_training.epochs = *o.epochs;
  if (o.lr) c.head_training.adam.peak_lr = *o.lr;
  if (o.pos_weight) c.head.positive_weight = *o.pos_weight;
  if (o.annotator) c.annotator = *o.annotator == "remote" ? uq::data::AnnotatorKind::kRemote : uq::data::AnnotatorKind::kOracle;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"uqlab: toy LM, claim dataset, UQ head and baselines"};
  app.require_subcommand(1);
  app.fallthrough();
  Overrides o;
  app.add_option("--config", o.config, "RunConfig JSON file")->check(CLI::ExistingFile);
  app.add_option("--out", o.out, "run directory (overrides config 'out')");
  app.add_option("--seed", o.seed, "base seed; every component seed derives from it");
  app.add_option("--jobs", o.jobs, "worker threads for generation, labelling and features")->check(CLI::PositiveNumber);
  app.add_flag("--force", o.force, "rerun stages even when their inputs are unchanged");
  app.add_option("--window-k", o.window_k, "attention window k")->check(CLI::Range(1, 10));
  app.add_option("--top-m", o.top_m, "top-m log-probabilities")->check(CLI::PositiveNumber);
  app.add_option("--epochs", o.epochs, "head training epochs")->check(CLI::PositiveNumber);
  app.add_option("--lr", o.lr, "head peak learning rate")->check(CLI::PositiveNumber);
  app.add_option("--pos-weight", o.pos_weight, "BCE weight of unsupported claims")->check(CLI::PositiveNumber);
  app.add_option("--annotator", o.annotator, "claim labeller")->check(CLI::IsMember({"oracle", "remote"}));
  app.add_flag("-q,--quiet", o.quiet, "only log warnings");

  std::vector<std::pair<CLI::App*, std::string>> stages;
  const std::map<std::string, std::string> help{
      {"world", "build the fact world, corpus and prompts"},
      {"train-lm", "train the toy LM on the corpus"},
      {"gen-data", "generate answers, extract and label claims, store traces"},
      {"features", "extract the UHead and baseline feature stores"},
      {"train-head", "train UHead, SAPLMA, lookback regression and the Factoscope head"},
      {"eval", "score every method and write the PR-AUC tables"},
      {"sweep", "PR-AUC per attention window size"},
      {"analyze", "per-head attention/hallucination correlations"},
      {"bench", "generation overhead of UHead scoring"},
  };
  for (const auto& s : uq::cli::stage_names()) stages.emplace_back(app.add_subcommand(s, help.at(s)), s);
  auto* all = app.add_subcommand("run-all", "run every stage in order");
  auto* show = app.add_subcommand("config", "print the resolved RunConfig as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  spdlog::set_level(o.quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    auto config = resolve(o);
    if (show->parsed()) {
      std::cout << config.to_json().dump(2) << "\n";
      return 0;
    }
    uq::cli::Pipeline pipeline(config, o.force);
    if (all->parsed()) {
      pipeline.run_all();
      return 0;
    }
    for (const auto& [cmd, name] : stages) {
      if (cmd->parsed()) pipeline.run(name);
    }
    return 0;
  } catch (const uq::Error& e) {
    spdlog::error("{}", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 3;
  }
}
