#include "uq/cli/manifest.hpp"

#include <fmt/format.h>

#include "uq/common/error.hpp"
#include "uq/common/io.hpp"

namespace uq::cli {

using nlohmann::json;

std::string config_hash(const json& stage_config) { return sha256_hex(stage_config.dump()); }

Manifest::Manifest(std::filesystem::path run_dir) : dir_(std::move(run_dir)) {
  const auto path = dir_ / "manifest.json";
  if (!std::filesystem::exists(path)) return;
  try {
    const auto j = json::parse(read_text_file(path));
    if (j.at("version").get<int>() != kVersion) {
      fail(ErrorCode::kCompatibility, fmt::format("{} has version {}, expected {}", path.string(), j.at("version").get<int>(), kVersion));
    }
    for (const auto& [name, s] : j.at("stages").items()) {
      StageRecord r;
      r.config_hash = s.at("config_hash");
      r.inputs = s.at("inputs").get<std::map<std::string, std::string>>();
      r.outputs = s.at("outputs").get<std::map<std::string, std::string>>();
      r.seconds = s.at("seconds");
      stages_[name] = std::move(r);
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, path.string() + ": " + e.what());
  }
}

const StageRecord* Manifest::find(const std::string& stage) const {
  auto it = stages_.find(stage);
  return it == stages_.end() ? nullptr : &it->second;
}

void Manifest::record(const std::string& stage, StageRecord rec) { stages_[stage] = std::move(rec); }
void Manifest::erase(const std::string& stage) { stages_.erase(stage); }

json Manifest::to_json() const {
  json stages = json::object();
  for (const auto& [name, r] : stages_) {
    stages[name] = {{"config_hash", r.config_hash}, {"inputs", r.inputs}, {"outputs", r.outputs}, {"seconds", r.seconds}};
  }
  return {{"version", kVersion}, {"stages", stages}};
}

void Manifest::save() const {
  std::filesystem::create_directories(dir_);
  write_text_file(dir_ / "manifest.json", to_json().dump(2) + "\n");
}

std::map<std::string, std::string> Manifest::verified_outputs(const std::string& stage,
                                                              const std::string& config_hash) const {
  const auto* r = find(stage);
  if (!r) {
    fail(ErrorCode::kStageDependency,
         fmt::format("stage '{}' has not run in {} (manifest.json has no entry); run `uqlab {}` first", stage,
                     dir_.string(), stage));
  }
  if (r->config_hash != config_hash) {
    fail(ErrorCode::kStaleness, fmt::format("stage '{}' ran with a different config; rerun `uqlab {}`", stage, stage));
  }
  for (const auto& [rel, sha] : r->outputs) {
    const auto path = dir_ / rel;
    if (!std::filesystem::exists(path)) {
      fail(ErrorCode::kStageDependency, fmt::format("missing artifact {} from stage '{}'", path.string(), stage));
    }
    if (sha256_file(path) != sha) {
      fail(ErrorCode::kStaleness, fmt::format("{} changed since stage '{}' wrote it; rerun `uqlab {}`", path.string(),
                                              stage, stage));
    }
  }
  return r->outputs;
}

std::map<std::string, std::string> Manifest::hash_tree(const std::filesystem::path& sub) const {
  std::map<std::string, std::string> out;
  const auto root = dir_ / sub;
  if (!std::filesystem::exists(root)) return out;
  if (std::filesystem::is_regular_file(root)) {
    out[sub.generic_string()] = sha256_file(root);
    return out;
  }
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    out[std::filesystem::relative(e.path(), dir_).generic_string()] = sha256_file(e.path());
  }
  return out;
}

}  // namespace uq::cli
