#pragma once

#include <string>
#include <vector>

#include "uq/cli/config.hpp"
#include "uq/cli/manifest.hpp"

namespace uq::cli {

enum class StageStatus { kRan, kUpToDate };

/// Stage order for run-all.
const std::vector<std::string>& stage_names();
/// Stages whose outputs `stage` reads.
const std::vector<std::string>& stage_dependencies(const std::string& stage);

/// Runs stages inside config.out. Each stage checks its upstream artifacts
/// against the manifest, skips itself when its config and inputs are
/// unchanged (unless forced), and records input/output hashes when it runs.
class Pipeline {
 public:
  Pipeline(RunConfig config, bool force = false);

  StageStatus run(const std::string& stage);
  void run_all();

  const RunConfig& config() const { return config_; }
  const Manifest& manifest() const { return manifest_; }

 private:
  void world();
  void train_lm();
  void gen_data();
  void features();
  void train_head();
  void eval();
  void sweep();
  void analyze();
  void bench();

  RunConfig config_;
  bool force_;
  Manifest manifest_;
};

/// sha256 over every LM parameter value.
std::string lm_digest(const lm::LMWeights& weights);

}  // namespace uq::cli
