#include "cotasr/vocab.hpp"

#include "cotasr/errors.hpp"

namespace cotasr {

std::optional<TokenId> Vocabulary::char_id(char c) {
  const auto pos = kChars.find(c);
  if (pos == std::string_view::npos) return std::nullopt;
  return static_cast<TokenId>(pos);
}

std::string Vocabulary::invalid_chars(std::string_view text) {
  std::string bad;
  for (char c : text)
    if (!char_id(c) && bad.find(c) == std::string::npos) bad.push_back(c);
  return bad;
}

bool Vocabulary::is_valid(std::string_view text) { return invalid_chars(text).empty(); }

TokenSequence Vocabulary::encode(std::string_view text) {
  TokenSequence out;
  out.reserve(text.size());
  for (char c : text) {
    const auto id = char_id(c);
    if (!id) throw VocabError("characters outside vocabulary: \"" + invalid_chars(text) + "\"");
    out.push_back(*id);
  }
  return out;
}

std::string Vocabulary::token_text(TokenId id) {
  switch (id) {
    case kContextOpen: return "<CONTEXT>";
    case kContextClose: return "</CONTEXT>";
    case kTranscriptOpen: return "<TRANSCRIPT>";
    case kTranscriptClose: return "</TRANSCRIPT>";
    default: break;
  }
  if (id < 0 || static_cast<std::size_t>(id) >= kNumChars) {
    throw VocabError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return std::string(1, kChars[static_cast<std::size_t>(id)]);
}

std::string Vocabulary::decode(const TokenSequence& tokens) {
  std::string out;
  for (TokenId id : tokens) out += token_text(id);
  return out;
}

}  // namespace cotasr
