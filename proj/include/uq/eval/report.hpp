#pragma once

#include <string>
#include <vector>

#include "uq/baselines/baselines.hpp"
#include "uq/datagen/dataset.hpp"

namespace uq::eval {

struct ResultRow {
  std::string method;
  std::string split;
  double pr_auc = 0.0;  // NaN for dashed-out methods
  double prevalence = 0.0;
  std::size_t n_claims = 0;
  bool dashed = false;
};

struct ResultTable {
  std::vector<std::string> methods;  // scored methods, then "Random", then dashed ones
  std::vector<std::string> splits;
  std::vector<ResultRow> rows;       // method-major

  const ResultRow& at(const std::string& method, const std::string& split) const;
};

inline const std::vector<std::string> kDashedMethods{"CCP"};

/// PR-AUC of every method on the labelled claims of every split. Scores
/// are matched by (generation id, claim index); the Random row is the
/// split prevalence. Any labelled claim without a score raises kCoverage
/// listing the absent (method, claim) pairs; a duplicate score raises
/// kFormat.
ResultTable evaluate_methods(const data::Dataset& dataset, const std::vector<std::string>& splits,
                             const std::vector<std::string>& methods, const std::vector<base::ClaimScore>& scores,
                             const std::vector<std::string>& dashed = kDashedMethods);

/// method,split,pr_auc,prevalence,n_claims; dashed cells are empty.
std::string table_csv(const ResultTable& table);
/// Methods down, splits across, three decimals; "-" for dashed cells.
std::string table_text(const ResultTable& table);

}  // namespace uq::eval
