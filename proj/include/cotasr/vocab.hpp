#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cotasr {

using TokenId = int;
using TokenSequence = std::vector<TokenId>;

// Character-level vocabulary shared by the decoder and the CTC head.
//
// Ids [0, kNumChars) are printable characters; the four tag tokens follow
// and have no character spelling, so no ordinary text tokenizes into them.
// The CTC blank is not part of this vocabulary (it lives in the adapter's
// extra output column).
class Vocabulary {
 public:
  static constexpr std::string_view kChars = " abcdefghijklmnopqrstuvwxyz,:.'-";
  static constexpr std::size_t kNumChars = kChars.size();

  static constexpr TokenId kContextOpen = static_cast<TokenId>(kNumChars);
  static constexpr TokenId kContextClose = kContextOpen + 1;
  static constexpr TokenId kTranscriptOpen = kContextOpen + 2;
  static constexpr TokenId kTranscriptClose = kContextOpen + 3;

  static constexpr std::size_t size() { return kNumChars + 4; }
  static bool is_tag(TokenId id) { return id >= kContextOpen && id <= kTranscriptClose; }

  static std::optional<TokenId> char_id(char c);
  // Throws VocabError naming every character outside the vocabulary.
  static TokenSequence encode(std::string_view text);
  static bool is_valid(std::string_view text);
  // Characters outside the vocabulary, deduplicated, in order of first use.
  static std::string invalid_chars(std::string_view text);
  // Tags render as their surface form, e.g. "<CONTEXT>".
  static std::string decode(const TokenSequence& tokens);
  static std::string token_text(TokenId id);
};

}  // namespace cotasr
