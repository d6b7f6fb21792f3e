#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cotasr/model.hpp"
#include "cotasr/vocab.hpp"

namespace cotasr::cot {

// Fixed ASR instruction placed after the speech prompt.
inline constexpr std::string_view kInstruction = "transcribe:";

// What the caller expects the emitted sequence to look like.
enum class Layout {
  // <CONTEXT> ctx </CONTEXT> <TRANSCRIPT> tr </TRANSCRIPT>
  ContextThenTranscript,
  // <TRANSCRIPT> tr </TRANSCRIPT> (plain models, and user-context decoding)
  TranscriptOnly,
};

struct TaggedOutput {
  std::optional<std::string> context;
  std::string transcript;
  bool well_formed = false;
  std::vector<std::string> diagnostics;
  TokenSequence tokens;
};

// Training target. With an empty context and include_context = false only
// the transcript block is produced. Throws VocabError on foreign characters.
TokenSequence build_target(std::string_view context, std::string_view transcript,
                           bool include_context = true);

// Salvaging parser: always returns a transcript estimate plus diagnostics.
TaggedOutput parse_output(const TokenSequence& tokens,
                          Layout layout = Layout::ContextThenTranscript);

// Tokens following the speech prompt: the instruction, plus a closed
// context block in user-guided mode.
TokenSequence prompt_tokens(const std::optional<std::string>& user_context);

// [A; embed(I)] in self mode, [A; embed(I); embed(<CONTEXT> ctx </CONTEXT>)]
// when a user context is given.
Matrix assemble_prompt(const Matrix& speech_prompt, const model::DecoderParams& decoder,
                       const std::optional<std::string>& user_context);

struct GenerationResult {
  TaggedOutput output;
  std::size_t prompt_length = 0;
};

// Greedy one-pass decoding (ties go to the lowest id). Stops after
// </TRANSCRIPT> or max_len emitted tokens. `layout` selects how the emitted
// tokens are parsed.
GenerationResult generate_one_pass(const Matrix& prompt, const model::DecoderParams& decoder,
                                   std::size_t max_len, Layout layout);

std::size_t argmax(std::span<const double> logits);

}  // namespace cotasr::cot
