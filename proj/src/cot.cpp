#include "cotasr/cot.hpp"

#include <algorithm>

#include "cotasr/decoder.hpp"
#include "cotasr/errors.hpp"

namespace cotasr::cot {

namespace {

using V = Vocabulary;

void append(TokenSequence& dst, const TokenSequence& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

std::optional<std::size_t> find_tag(const TokenSequence& t, TokenId tag, std::size_t from = 0) {
  for (std::size_t i = from; i < t.size(); ++i)
    if (t[i] == tag) return i;
  return std::nullopt;
}

// Characters in [begin, end), dropping any tag tokens.
std::string text_between(const TokenSequence& t, std::size_t begin, std::size_t end) {
  std::string out;
  for (std::size_t i = begin; i < end && i < t.size(); ++i)
    if (!V::is_tag(t[i])) out += V::token_text(t[i]);
  return out;
}

bool is_canonical(const TokenSequence& t, Layout layout) {
  std::vector<TokenId> expected;
  if (layout == Layout::ContextThenTranscript) {
    expected = {V::kContextOpen, V::kContextClose, V::kTranscriptOpen, V::kTranscriptClose};
  } else {
    expected = {V::kTranscriptOpen, V::kTranscriptClose};
  }
  std::vector<std::size_t> positions;
  std::vector<TokenId> tags;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (V::is_tag(t[i])) {
      tags.push_back(t[i]);
      positions.push_back(i);
    }
  }
  if (tags != expected) return false;
  if (positions.front() != 0 || positions.back() + 1 != t.size()) return false;
  // </CONTEXT> must be followed directly by <TRANSCRIPT>.
  if (layout == Layout::ContextThenTranscript && positions[1] + 1 != positions[2]) return false;
  return true;
}

}  // namespace

TokenSequence build_target(std::string_view context, std::string_view transcript,
                           bool include_context) {
  if (transcript.empty()) throw InputError("build_target: empty transcript");
  const TokenSequence tr = V::encode(transcript);
  TokenSequence out;
  if (include_context) {
    const TokenSequence ctx = V::encode(context);
    out.push_back(V::kContextOpen);
    append(out, ctx);
    out.push_back(V::kContextClose);
  }
  out.push_back(V::kTranscriptOpen);
  append(out, tr);
  out.push_back(V::kTranscriptClose);
  return out;
}

TaggedOutput parse_output(const TokenSequence& tokens, Layout layout) {
  TaggedOutput out;
  out.tokens = tokens;

  const auto co = find_tag(tokens, V::kContextOpen);
  const auto cc = find_tag(tokens, V::kContextClose);
  std::size_t transcript_search_from = 0;
  if (layout == Layout::ContextThenTranscript) {
    if (!co) out.diagnostics.push_back("missing " + V::token_text(V::kContextOpen));
    if (!cc) out.diagnostics.push_back("missing " + V::token_text(V::kContextClose));
    if (co) {
      std::size_t end = tokens.size();
      if (cc && *cc > *co) {
        end = *cc;
      } else if (auto to = find_tag(tokens, V::kTranscriptOpen, *co + 1)) {
        end = *to;
      }
      out.context = text_between(tokens, *co + 1, end);
      transcript_search_from = end;
    }
  } else {
    if (co) out.diagnostics.push_back("unexpected " + V::token_text(V::kContextOpen));
    if (cc) out.diagnostics.push_back("unexpected " + V::token_text(V::kContextClose));
  }

  const auto to = find_tag(tokens, V::kTranscriptOpen, transcript_search_from);
  if (!to) {
    out.diagnostics.push_back("missing " + V::token_text(V::kTranscriptOpen));
  } else {
    const auto tc = find_tag(tokens, V::kTranscriptClose, *to + 1);
    if (!tc) out.diagnostics.push_back("missing " + V::token_text(V::kTranscriptClose));
    out.transcript = text_between(tokens, *to + 1, tc ? *tc : tokens.size());
  }

  out.well_formed = is_canonical(tokens, layout);
  if (!out.well_formed && out.diagnostics.empty()) out.diagnostics.push_back("misplaced tags");
  return out;
}

TokenSequence prompt_tokens(const std::optional<std::string>& user_context) {
  TokenSequence t = V::encode(kInstruction);
  if (user_context) {
    t.push_back(V::kContextOpen);
    append(t, V::encode(*user_context));
    t.push_back(V::kContextClose);
  }
  return t;
}

Matrix assemble_prompt(const Matrix& speech_prompt, const model::DecoderParams& decoder,
                       const std::optional<std::string>& user_context) {
  if (speech_prompt.rows() == 0) throw DimensionError("assemble_prompt: empty speech prompt");
  if (speech_prompt.cols() != decoder.d_model()) {
    throw DimensionError("assemble_prompt: speech prompt width does not match decoder");
  }
  const Matrix text = model::embed(decoder, prompt_tokens(user_context));
  Matrix out(speech_prompt.rows() + text.rows(), speech_prompt.cols());
  std::copy(speech_prompt.values().begin(), speech_prompt.values().end(), out.values().begin());
  std::copy(text.values().begin(), text.values().end(),
            out.values().begin() + static_cast<long>(speech_prompt.size()));
  return out;
}

std::size_t argmax(std::span<const double> logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return best;
}

GenerationResult generate_one_pass(const Matrix& prompt, const model::DecoderParams& decoder,
                                   std::size_t max_len, Layout layout) {
  if (max_len < 4) throw InputError("generate_one_pass: max_len must be at least 4");
  if (prompt.rows() == 0) throw DimensionError("generate_one_pass: empty prompt");
  model::DecoderState state(decoder);
  Matrix hidden = state.append(prompt);
  TokenSequence emitted;
  bool closed = false;
  while (emitted.size() < max_len) {
    const Matrix logits = model::tied_logits(hidden, decoder, hidden.rows() - 1);
    const auto next = static_cast<TokenId>(argmax(logits.row(0)));
    emitted.push_back(next);
    if (next == V::kTranscriptClose) {
      closed = true;
      break;
    }
    if (emitted.size() == max_len) break;
    hidden = state.append(model::embed(decoder, {next}));
  }
  GenerationResult result;
  result.prompt_length = prompt.rows();
  result.output = parse_output(emitted, layout);
  if (!closed) {
    result.output.well_formed = false;
    result.output.diagnostics.push_back("truncated");
  }
  return result;
}

}  // namespace cotasr::cot
