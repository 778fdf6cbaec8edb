#include "uq/toylm/tokenizer.hpp"

#include <cctype>
#include <sstream>

#include "uq/common/error.hpp"
#include "uq/common/io.hpp"

namespace uq::lm {

namespace {
const std::vector<std::string> kSpecials{"<pad>", "<bos>", "<eos>", "<unk>"};
const std::vector<std::string> kPunctuation{".", ",", ";", ":", "!", "?"};
}

Tokenizer::Tokenizer(const std::vector<std::string>& words) {
  for (const auto& s : kSpecials) {
    index_.emplace(s, static_cast<TokenId>(vocab_.size()));
    vocab_.push_back(s);
  }
  for (const auto& p : kPunctuation) {
    index_.emplace(p, static_cast<TokenId>(vocab_.size()));
    vocab_.push_back(p);
  }
  for (const auto& w : words) {
    if (is_punctuation(w)) continue;
    if (w.empty() || w.find_first_of(" \t\n") != std::string::npos) fail(ErrorCode::kToken, "invalid vocabulary word '" + w + "'");
    if (index_.contains(w)) fail(ErrorCode::kToken, "duplicate vocabulary word '" + w + "'");
    index_.emplace(w, static_cast<TokenId>(vocab_.size()));
    vocab_.push_back(w);
  }
}

bool Tokenizer::is_punctuation(std::string_view word) {
  return word.size() == 1 && std::string_view(".,;:!?").find(word[0]) != std::string_view::npos;
}

std::vector<std::string> Tokenizer::split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      flush();
    } else if (is_punctuation(std::string_view(&ch, 1))) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(ch);
    }
  }
  flush();
  return out;
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& w : split_words(text)) {
    auto it = index_.find(w);
    ids.push_back(it == index_.end() ? kUnk : it->second);
  }
  return ids;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (id == kPad || id == kBos || id == kEos) continue;
    const auto& w = token(id);
    if (!out.empty() && !is_punctuation(w)) out.push_back(' ');
    out += w;
  }
  return out;
}

const std::string& Tokenizer::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size()) {
    fail(ErrorCode::kToken, "token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab_.size()));
  }
  return vocab_[static_cast<std::size_t>(id)];
}

TokenId Tokenizer::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnk : it->second;
}

bool Tokenizer::contains(std::string_view word) const { return index_.contains(std::string(word)); }

void Tokenizer::save(const std::filesystem::path& path) const {
  std::ostringstream out;
  for (std::size_t i = kSpecials.size() + kPunctuation.size(); i < vocab_.size(); ++i) out << vocab_[i] << '\n';
  write_text_file(path, out.str());
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) { return Tokenizer(read_lines(path)); }

}  // namespace uq::lm
