#include "uq/datagen/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>
#include <sstream>

#include "json.hpp"
#include "uq/common/error.hpp"
#include "uq/common/io.hpp"
#include "uq/common/parallel.hpp"

namespace uq::data {

using nlohmann::json;

std::size_t Dataset::claim_count() const {
  std::size_t n = 0;
  for (const auto& g : generations) n += g.claims.size();
  return n;
}

std::size_t Dataset::labeled_count(const std::string& split) const {
  std::size_t n = 0;
  for (const auto& g : generations) {
    if (g.split != split) continue;
    for (const auto& c : g.claims) n += c.labeled();
  }
  return n;
}

std::vector<std::string> Dataset::splits() const {
  std::vector<std::string> out;
  for (const auto& g : generations) {
    if (std::find(out.begin(), out.end(), g.split) == out.end()) out.push_back(g.split);
  }
  return out;
}

std::vector<const GenerationRecord*> Dataset::split(const std::string& name) const {
  std::vector<const GenerationRecord*> out;
  for (const auto& g : generations) {
    if (g.split == name) out.push_back(&g);
  }
  return out;
}

Dataset build_dataset(const FactWorld& world, const lm::Tokenizer& tok, const lm::LMWeights& weights,
                      const std::vector<Prompt>& prompts, const BuildOptions& options) {
  if (options.annotator == AnnotatorKind::kRemote) options.remote.validate();
  Dataset ds;
  ds.generations.resize(prompts.size());
  parallel_for(prompts.size(), options.jobs, [&](std::size_t i) {
    const auto& p = prompts[i];
    const auto& e = world.entity(p.entity);
    auto prompt_ids = tok.encode(p.text);
    prompt_ids.insert(prompt_ids.begin(), lm::Tokenizer::kBos);
    auto gen = lm::generate_greedy(weights, prompt_ids, options.max_new);
    auto& rec = ds.generations[i];
    rec.id = i;
    rec.entity = p.entity;
    rec.domain = p.domain;
    rec.split = p.split;
    rec.tier = e.tier;
    rec.prompt = p.text;
    rec.tokens = std::move(gen.tokens);
    rec.prompt_len = gen.prompt_len;
    rec.trace = std::move(gen.trace);
    const auto claims = extract_claims(tok, rec.tokens, rec.prompt_len);
    for (std::size_t k = 0; k < claims.size(); ++k) {
      ClaimRecord c{i, k, claims[k].positions, claims[k].attribute, claims[k].value, Label::kUnknown};
      if (options.annotator == AnnotatorKind::kOracle) c.label = oracle_label(c.attribute, c.value, e);
      rec.claims.push_back(std::move(c));
    }
  });

  if (options.annotator == AnnotatorKind::kRemote) {
    std::vector<ClaimRecord*> pending;
    for (auto& g : ds.generations)
      for (auto& c : g.claims) pending.push_back(&c);
    const std::size_t lanes = std::min(options.jobs, options.remote.max_in_flight);
    parallel_for(pending.size(), lanes, [&](std::size_t k) {
      auto& c = *pending[k];
      const auto& e = world.entity(ds.generations[c.generation].entity);
      const std::string id = std::to_string(c.generation) + ":" + std::to_string(c.claim);
      c.label = remote_label(claim_text(e, c.attribute, c.value), fact_sheet(e), options.remote, id).label;
    });
  }
  return ds;
}

void check_prevalence(const Dataset& dataset) {
  for (const auto& s : dataset.splits()) {
    std::size_t pos = 0, neg = 0;
    for (const auto* g : dataset.split(s))
      for (const auto& c : g->claims) {
        if (!c.labeled()) continue;
        (c.positive() ? pos : neg) += 1;
      }
    if (pos == 0 || neg == 0) {
      fail(ErrorCode::kDegenerateData, "split '" + s + "' has " + std::to_string(pos) + " unsupported and " +
                                           std::to_string(neg) + " supported claims; both classes are required");
    }
  }
}

std::map<Tier, TierRate> unsupported_rate_by_tier(const Dataset& dataset) {
  std::map<Tier, TierRate> out;
  for (const auto& g : dataset.generations) {
    for (const auto& c : g.claims) {
      if (!c.labeled()) continue;
      auto& r = out[g.tier];
      ++r.labeled;
      r.unsupported += c.positive();
    }
  }
  return out;
}

namespace {

json to_json(const GenerationRecord& g, const std::string& trace_file, std::uint64_t offset) {
  json claims = json::array();
  for (const auto& c : g.claims) {
    claims.push_back({{"claim", c.claim},
                      {"positions", c.positions},
                      {"attribute", c.attribute},
                      {"value", c.value},
                      {"label", label_name(c.label)}});
  }
  return {{"id", g.id},
          {"entity", g.entity},
          {"domain", g.domain},
          {"split", g.split},
          {"tier", tier_name(g.tier)},
          {"prompt", g.prompt},
          {"tokens", g.tokens},
          {"prompt_len", g.prompt_len},
          {"claims", claims},
          {"trace", {{"file", trace_file}, {"offset", offset}}}};
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
  std::filesystem::create_directories(dir);
  json split_list = json::array();
  for (const auto& s : dataset.splits()) {
    split_list.push_back(s);
    const std::string trace_file = s + ".traces";
    std::ostringstream traces(std::ios::binary);
    BinaryWriter w(traces);
    std::string lines;
    for (const auto* g : dataset.split(s)) {
      const std::uint64_t offset = w.bytes_written();
      lm::write_trace(w, g->trace);
      lines += to_json(*g, trace_file, offset).dump() + "\n";
    }
    write_text_file(dir / trace_file, traces.str());
    write_text_file(dir / (s + ".jsonl"), lines);
  }
  write_text_file(dir / "splits.json", split_list.dump() + "\n");
}

Dataset read_dataset(const std::filesystem::path& dir, bool load_traces) {
  std::vector<std::string> splits;
  try {
    splits = json::parse(read_text_file(dir / "splits.json")).get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, (dir / "splits.json").string() + ": " + e.what());
  }
  return read_dataset(dir, splits, load_traces);
}

Dataset read_dataset(const std::filesystem::path& dir, const std::vector<std::string>& splits, bool load_traces) {
  Dataset ds;
  for (const auto& s : splits) {
    const auto path = dir / (s + ".jsonl");
    std::ifstream traces;
    for (const auto& line : read_lines(path)) {
      if (line.empty()) continue;
      GenerationRecord g;
      try {
        const auto j = json::parse(line);
        g.id = j.at("id");
        g.entity = j.at("entity");
        g.domain = j.at("domain");
        g.split = j.at("split");
        g.tier = tier_from_name(j.at("tier"));
        g.prompt = j.at("prompt");
        g.tokens = j.at("tokens").get<std::vector<lm::TokenId>>();
        g.prompt_len = j.at("prompt_len");
        for (const auto& c : j.at("claims")) {
          g.claims.push_back({g.id, c.at("claim"), c.at("positions").get<std::vector<std::size_t>>(),
                              c.at("attribute"), c.at("value"), label_from_name(c.at("label"))});
        }
        if (load_traces) {
          const auto& t = j.at("trace");
          if (!traces.is_open()) {
            traces.open(dir / t.at("file").get<std::string>(), std::ios::binary);
            if (!traces) fail(ErrorCode::kIo, "cannot open trace file for split " + s);
          }
          traces.seekg(static_cast<std::streamoff>(t.at("offset").get<std::uint64_t>()));
          BinaryReader r(traces);
          g.trace = lm::read_trace(r);
          if (g.trace.tokens != g.tokens) fail(ErrorCode::kFormat, "trace tokens differ from generation " + std::to_string(g.id));
        }
      } catch (const json::exception& e) {
        fail(ErrorCode::kFormat, path.string() + ": " + e.what());
      }
      ds.generations.push_back(std::move(g));
    }
  }
  return ds;
}

}  // namespace uq::data
