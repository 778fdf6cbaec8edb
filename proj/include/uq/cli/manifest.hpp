#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace uq::cli {

/// One stage's provenance: config hash, the hashes of the upstream files it
/// read and of the files it wrote (paths relative to the run directory).
struct StageRecord {
  std::string config_hash;
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;
  double seconds = 0.0;
};

/// manifest.json in the run directory.
class Manifest {
 public:
  static constexpr int kVersion = 1;

  explicit Manifest(std::filesystem::path run_dir);

  const std::filesystem::path& dir() const { return dir_; }
  const StageRecord* find(const std::string& stage) const;
  void record(const std::string& stage, StageRecord rec);
  void erase(const std::string& stage);
  void save() const;

  /// Hashes of `stage`'s outputs after checking they exist and are
  /// unchanged: a missing stage or file raises kStageDependency naming it,
  /// a config-hash mismatch or an edited file raises kStaleness.
  std::map<std::string, std::string> verified_outputs(const std::string& stage, const std::string& config_hash) const;

  /// Every regular file under `sub` (relative), sorted, with its sha256.
  std::map<std::string, std::string> hash_tree(const std::filesystem::path& sub) const;

  nlohmann::json to_json() const;

 private:
  std::filesystem::path dir_;
  std::map<std::string, StageRecord> stages_;
};

std::string config_hash(const nlohmann::json& stage_config);

}  // namespace uq::cli
