#include "uq/datagen/claims.hpp"

#include "uq/common/error.hpp"

namespace uq::data {

const char* label_name(Label label) {
  switch (label) {
    case Label::kSupported: return "supported";
    case Label::kUnsupported: return "unsupported";
    case Label::kUnknown: return "unknown";
  }
  return "?";
}

Label label_from_name(const std::string& name) {
  if (name == "supported") return Label::kSupported;
  if (name == "unsupported") return Label::kUnsupported;
  if (name == "unknown") return Label::kUnknown;
  fail(ErrorCode::kLabel, "unknown label '" + name + "'");
}

namespace {

struct ClauseTemplate {
  std::vector<lm::TokenId> words;
  const AttributeDef* attribute;
};

std::vector<ClauseTemplate> templates(const lm::Tokenizer& tok) {
  std::vector<ClauseTemplate> out;
  for (const auto& d : domains())
    for (const auto& a : d.attributes) out.push_back({tok.encode(a.clause), &a});
  return out;
}

}  // namespace

std::vector<ExtractedClaim> extract_claims(const lm::Tokenizer& tok, std::span<const lm::TokenId> tokens,
                                           std::size_t prompt_len) {
  const auto tmpl = templates(tok);
  const lm::TokenId period = tok.id(".");
  std::vector<ExtractedClaim> claims;
  std::vector<std::size_t> clause;

  auto flush = [&] {
    if (clause.empty()) return;
    ExtractedClaim c;
    c.positions = clause;
    c.attribute = kUnparsed;
    for (const auto& t : tmpl) {
      if (clause.size() != t.words.size() + 1) continue;
      bool match = true;
      for (std::size_t k = 0; k < t.words.size() && match; ++k) match = tokens[clause[k]] == t.words[k];
      if (match) {
        c.attribute = t.attribute->name;
        c.value = tok.token(tokens[clause.back()]);
        break;
      }
    }
    if (c.attribute == kUnparsed) {
      for (std::size_t k = 0; k < clause.size(); ++k) {
        if (k) c.value += ' ';
        c.value += tok.token(tokens[clause[k]]);
      }
    }
    claims.push_back(std::move(c));
    clause.clear();
  };

  for (std::size_t p = prompt_len; p < tokens.size(); ++p) {
    if (tokens[p] == lm::Tokenizer::kEos) break;
    if (tokens[p] == period) {
      flush();
    } else {
      clause.push_back(p);
    }
  }
  flush();
  return claims;
}

Label oracle_label(const std::string& attribute, const std::string& value, const Entity& entity) {
  if (attribute == kUnparsed) return Label::kUnknown;
  const std::string* gold = entity.value_of(attribute);
  return gold != nullptr && *gold == value ? Label::kSupported : Label::kUnsupported;
}

std::string claim_text(const Entity& entity, const std::string& attribute, const std::string& value) {
  if (attribute == kUnparsed) return entity.name + ": " + value;
  const AttributeDef* a = find_attribute(attribute);
  return entity.name + ": " + (a != nullptr ? a->clause : attribute) + " " + value + ".";
}

std::string fact_sheet(const Entity& entity) { return entity.name + " (" + entity.domain + "). " + answer_text(entity); }

}  // namespace uq::data
