#pragma once

#include <span>
#include <string>
#include <vector>

#include "uq/datagen/world.hpp"
#include "uq/toylm/tokenizer.hpp"

namespace uq::data {

enum class Label { kSupported, kUnsupported, kUnknown };
const char* label_name(Label label);
Label label_from_name(const std::string& name);

inline const std::string kUnparsed = "unparsed";

struct ExtractedClaim {
  std::vector<std::size_t> positions;  // absolute, all >= prompt length
  std::string attribute;               // kUnparsed when no template matched
  std::string value;                   // clause text for unparsed claims
};

/// Splits the generated part of `tokens` into clauses at "." (stopping at
/// eos). A clause that is exactly some attribute's clause words followed by
/// one value token becomes a claim on that attribute; anything else becomes
/// an unparsed claim. Attributes of every domain are recognised, so a
/// clause borrowed from another domain is still a claim.
std::vector<ExtractedClaim> extract_claims(const lm::Tokenizer& tok, std::span<const lm::TokenId> tokens,
                                           std::size_t prompt_len);

/// Supported iff the entity has the attribute and its gold value matches;
/// unparsed claims are unknown.
Label oracle_label(const std::string& attribute, const std::string& value, const Entity& entity);

/// Human-readable claim text, e.g. "E17 born 1854".
std::string claim_text(const Entity& entity, const std::string& attribute, const std::string& value);
/// The entity's gold facts, one clause per attribute.
std::string fact_sheet(const Entity& entity);

}  // namespace uq::data
