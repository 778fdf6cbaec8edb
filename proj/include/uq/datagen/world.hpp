#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "uq/toylm/tokenizer.hpp"

namespace uq::data {

enum class Tier { kFrequent, kRare, kUnseen };
const char* tier_name(Tier tier);
Tier tier_from_name(const std::string& name);

/// One fact slot of a domain. A clause renders as "<clause> <value>." with a
/// single-token value drawn from `pool`.
struct AttributeDef {
  std::string name;    // unique across all domains
  std::string clause;  // e.g. "They were born in"
  std::string pool;    // value pool name
};

struct DomainDef {
  std::string name;
  std::string prompt;  // entity name is appended, then "."
  std::vector<AttributeDef> attributes;
};

/// The eight domains; biographies first (the in-domain split).
const std::vector<DomainDef>& domains();
const DomainDef& domain(const std::string& name);
/// Looks an attribute up across every domain; nullptr when unknown.
const AttributeDef* find_attribute(const std::string& name);
const std::vector<std::string>& value_pool(const std::string& pool);
inline const std::string kInDomain = "biographies";

struct Entity {
  std::size_t id = 0;
  std::string name;  // "E<id>", one token
  std::string domain;
  Tier tier = Tier::kFrequent;
  std::vector<std::string> values;  // parallel to the domain's attributes

  const std::string* value_of(const std::string& attribute) const;
};

struct WorldConfig {
  std::uint64_t seed = 1;
  std::map<std::string, std::size_t> entities_per_domain;  // missing domains get 0
  std::array<double, 3> tier_fractions{0.4, 0.3, 0.3};   // frequent, rare, unseen
  std::size_t frequent_repeats = 16;
  double zipf_exponent = 1.0;

  static WorldConfig defaults();  // 800 biographies, 100 per other domain
  void validate() const;
};

struct FactWorld {
  WorldConfig config;
  std::vector<Entity> entities;  // ids are indices

  const Entity& entity(std::size_t id) const { return entities.at(id); }
  const Entity* find(const std::string& name) const;
  /// Closed vocabulary: template words, pool values, entity names.
  std::vector<std::string> vocabulary() const;
};

/// Largest-remainder split of n into tiers: floor shares first, leftover
/// units to the largest fractional parts, ties to the earlier tier.
std::array<std::size_t, 3> tier_counts(std::size_t n, const std::array<double, 3>& fractions);

/// Values are Zipf-weighted over a per-attribute random ranking of the pool;
/// tiers are assigned within each domain on a shuffled order.
FactWorld build_world(const WorldConfig& config);

/// "Tell me a bio of E17." and friends.
std::string prompt_text(const Entity& entity);
/// "They were born in 1854. They worked as painter. ..."
std::string answer_text(const Entity& entity);

/// Training documents: prompt and answer, frequent entities repeated
/// frequent_repeats times, rare once, unseen never; shuffled by `seed`.
std::vector<std::string> render_corpus(const FactWorld& world, std::uint64_t seed);

/// <bos> text <eos>
std::vector<lm::TokenId> encode_document(const lm::Tokenizer& tok, const std::string& text);

struct Prompt {
  std::size_t entity = 0;
  std::string domain;
  std::string split;  // train / val / test for biographies, the domain name otherwise
  std::string text;
};

struct SplitConfig {
  std::uint64_t seed = 7;
  std::size_t val = 100;
  std::size_t test = 100;
  std::size_t ood_per_domain = 100;
};

/// In-domain entities are split into train/val/test stratified by tier;
/// every other selected domain yields up to ood_per_domain prompts.
std::vector<Prompt> make_prompts(const FactWorld& world, const std::vector<std::string>& domain_names,
                                 const SplitConfig& config);

}  // namespace uq::data
