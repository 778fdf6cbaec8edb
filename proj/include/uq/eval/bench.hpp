#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "uq/head/head.hpp"
#include "uq/toylm/model.hpp"
#include "uq/toylm/tokenizer.hpp"

namespace uq::eval {

struct OverheadReport {
  std::size_t prompts = 0;
  std::size_t repetitions = 0;
  double bare_seconds = 0.0;   // median over repetitions, all prompts
  double uhead_seconds = 0.0;  // generation + trace + features + head scoring
  double overhead_pct = 0.0;
  std::size_t head_parameters = 0;
  std::uintmax_t checkpoint_bytes = 0;
  std::vector<double> bare_runs, uhead_runs;
};

/// 100 * (with - bare) / bare.
double relative_overhead(double bare, double with);

/// Times bare greedy generation against predict_claims on the same prompts.
/// One warmup pass is run and discarded. Needs >= 20 prompts and >= 5
/// repetitions (kConfig otherwise).
OverheadReport benchmark_overhead(const lm::LMWeights& weights, const lm::Tokenizer& tokenizer,
                                  const head::UQHead& head, const std::vector<std::string>& prompts,
                                  std::size_t max_new, std::size_t repetitions,
                                  const std::filesystem::path& head_checkpoint);

std::string overhead_text(const OverheadReport& report);
std::string overhead_csv(const OverheadReport& report);

}  // namespace uq::eval
