#include "uq/eval/report.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <set>

#include <fmt/format.h>

#include "uq/common/error.hpp"
#include "uq/eval/metrics.hpp"

namespace uq::eval {

const ResultRow& ResultTable::at(const std::string& method, const std::string& split) const {
  for (const auto& r : rows)
    if (r.method == method && r.split == split) return r;
  fail(ErrorCode::kIndex, "no result for " + method + " on " + split);
}

ResultTable evaluate_methods(const data::Dataset& dataset, const std::vector<std::string>& splits,
                             const std::vector<std::string>& methods, const std::vector<base::ClaimScore>& scores,
                             const std::vector<std::string>& dashed) {
  using Key = std::pair<std::size_t, std::size_t>;
  std::map<std::string, std::map<Key, double>> by_method;
  for (const auto& m : methods) by_method[m];
  for (const auto& s : scores) {
    auto it = by_method.find(s.method);
    if (it == by_method.end()) continue;
    if (!it->second.emplace(Key{s.generation, s.claim}, s.score).second) {
      fail(ErrorCode::kFormat, fmt::format("duplicate {} score for claim {}:{}", s.method, s.generation, s.claim));
    }
  }

  ResultTable t;
  t.methods = methods;
  t.methods.push_back("Random");
  t.methods.insert(t.methods.end(), dashed.begin(), dashed.end());
  t.splits = splits;

  std::vector<std::string> missing;
  std::size_t missing_count = 0;
  std::map<std::string, std::vector<std::vector<double>>> split_scores;
  std::map<std::string, std::vector<int>> split_labels;
  for (const auto& split : splits) {
    auto gens = dataset.split(split);
    if (gens.empty()) fail(ErrorCode::kConfig, "split '" + split + "' is not in the dataset");
    auto& cols = split_scores[split];
    cols.assign(methods.size(), {});
    for (const auto* g : gens) {
      for (const auto& c : g->claims) {
        if (!c.labeled()) continue;
        split_labels[split].push_back(c.positive() ? 1 : 0);
        for (std::size_t m = 0; m < methods.size(); ++m) {
          const auto& table = by_method[methods[m]];
          auto it = table.find({g->id, c.claim});
          if (it == table.end()) {
            if (missing.size() < 10) missing.push_back(fmt::format("({}, {}:{})", methods[m], g->id, c.claim));
            ++missing_count;
            continue;
          }
          cols[m].push_back(it->second);
        }
      }
    }
  }
  if (missing_count) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    if (missing_count > missing.size()) list += fmt::format(" and {} more", missing_count - missing.size());
    fail(ErrorCode::kCoverage, "missing scores: " + list);
  }

  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t m = 0; m < t.methods.size(); ++m) {
    for (const auto& split : splits) {
      const auto& labels = split_labels[split];
      ResultRow r{t.methods[m], split, nan, 0.0, labels.size(), false};
      if (labels.empty()) fail(ErrorCode::kMetric, "split '" + split + "' has no labelled claims");
      r.prevalence = prevalence(labels);
      if (m < methods.size()) {
        if (r.prevalence == 0.0 || r.prevalence == 1.0) {
          fail(ErrorCode::kMetric, "split '" + split + "' has only " +
                                       (r.prevalence == 0.0 ? "supported" : "unsupported") + " claims");
        }
        r.pr_auc = pr_auc(split_scores[split][m], labels);
      } else if (m == methods.size()) {
        r.pr_auc = r.prevalence;
      } else {
        r.dashed = true;
      }
      t.rows.push_back(r);
    }
  }
  return t;
}

std::string table_csv(const ResultTable& table) {
  std::string out = "method,split,pr_auc,prevalence,n_claims\n";
  for (const auto& r : table.rows) {
    out += fmt::format("{},{},{},{:.6f},{}\n", r.method, r.split, r.dashed ? "" : fmt::format("{:.6f}", r.pr_auc),
                       r.prevalence, r.n_claims);
  }
  return out;
}

std::string table_text(const ResultTable& table) {
  std::size_t w0 = 8;
  for (const auto& m : table.methods) w0 = std::max(w0, m.size() + 2);
  std::vector<std::size_t> widths;
  std::string out = fmt::format("{:<{}}", "method", w0);
  for (const auto& s : table.splits) {
    widths.push_back(std::max<std::size_t>(s.size(), 5) + 2);
    out += fmt::format("{:>{}}", s, widths.back());
  }
  out += "\n";
  for (const auto& m : table.methods) {
    out += fmt::format("{:<{}}", m, w0);
    for (std::size_t k = 0; k < table.splits.size(); ++k) {
      const auto& r = table.at(m, table.splits[k]);
      out += fmt::format("{:>{}}", r.dashed ? "-" : fmt::format("{:.3f}", r.pr_auc), widths[k]);
    }
    out += "\n";
  }
  out += fmt::format("{:<{}}", "claims", w0);
  for (std::size_t k = 0; k < table.splits.size(); ++k) {
    out += fmt::format("{:>{}}", table.rows[k].n_claims, widths[k]);
  }
  out += "\n";
  return out;
}

}  // namespace uq::eval
