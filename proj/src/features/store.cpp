#include "uq/features/store.hpp"

#include <fstream>

#include "json.hpp"
#include "uq/common/error.hpp"
#include "uq/common/io.hpp"
#include "uq/common/parallel.hpp"

namespace uq::feat {

namespace {

constexpr const char* kIndex = "features.jsonl";
constexpr const char* kPayload = "features.bin";

struct IndexEntry {
  std::size_t generation;
  std::string fingerprint;
  std::size_t rows;
  std::size_t dim;
  std::uint64_t offset;
};

std::vector<IndexEntry> read_index(const std::filesystem::path& dir) {
  std::vector<IndexEntry> out;
  const auto path = dir / kIndex;
  if (!std::filesystem::exists(path)) return out;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("generation"), j.at("fingerprint"), j.at("rows"), j.at("dim"), j.at("offset")});
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kFormat, path.string() + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

std::vector<FeatureMatrix> extract_dataset(const data::Dataset& dataset, const FeatureSpec& spec,
                                           const lm::LMWeights& weights, std::size_t jobs) {
  spec.validate(weights.config);
  std::vector<FeatureMatrix> out(dataset.generations.size());
  parallel_for(out.size(), jobs, [&](std::size_t i) {
    const auto& g = dataset.generations[i];
    if (g.trace.tokens.empty()) fail(ErrorCode::kFormat, "generation " + std::to_string(g.id) + " has no trace loaded");
    out[i] = concat_features(g.trace, spec, weights.config, &weights);
    out[i].generation = g.id;
  });
  return out;
}

std::string store_fingerprint(const std::filesystem::path& dir) {
  const auto index = read_index(dir);
  return index.empty() ? std::string() : index.front().fingerprint;
}

void append_features(const std::filesystem::path& dir, std::span<const FeatureMatrix> matrices) {
  std::filesystem::create_directories(dir);
  const std::string existing = store_fingerprint(dir);
  for (const auto& m : matrices) {
    const std::string& want = existing.empty() ? matrices.front().fingerprint : existing;
    if (m.fingerprint != want) {
      fail(ErrorCode::kCompatibility, "feature fingerprint " + m.fingerprint + " does not match store fingerprint " + want);
    }
  }
  const auto payload = dir / kPayload;
  std::uint64_t offset = std::filesystem::exists(payload) ? std::filesystem::file_size(payload) : 0;
  std::ofstream bin(payload, std::ios::binary | std::ios::app);
  std::ofstream idx(dir / kIndex, std::ios::app);
  if (!bin || !idx) fail(ErrorCode::kIo, "cannot open feature store in " + dir.string());
  BinaryWriter w(bin);
  for (const auto& m : matrices) {
    nlohmann::json j{{"generation", m.generation}, {"fingerprint", m.fingerprint}, {"rows", m.rows},
                     {"dim", m.dim},               {"offset", offset}};
    w.f32(m.values);
    offset += m.values.size() * sizeof(float);
    idx << j.dump() << '\n';
  }
  if (!bin.flush() || !idx.flush()) fail(ErrorCode::kIo, "short write to feature store in " + dir.string());
}

std::vector<FeatureMatrix> read_features(const std::filesystem::path& dir) {
  const auto index = read_index(dir);
  std::vector<FeatureMatrix> out;
  if (index.empty()) return out;
  std::ifstream bin(dir / kPayload, std::ios::binary);
  if (!bin) fail(ErrorCode::kIo, "cannot open " + (dir / kPayload).string());
  BinaryReader r(bin);
  for (const auto& e : index) {
    FeatureMatrix m;
    m.generation = e.generation;
    m.fingerprint = e.fingerprint;
    m.rows = e.rows;
    m.dim = e.dim;
    bin.seekg(static_cast<std::streamoff>(e.offset));
    m.values = r.f32(e.rows * e.dim);
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace uq::feat
