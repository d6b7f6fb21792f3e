#include <doctest.h>

#include "cotasr/cot.hpp"
#include "cotasr/errors.hpp"
#include "fixtures.hpp"

using namespace cotasr;
using V = Vocabulary;

namespace {

TokenSequence concat(std::initializer_list<TokenSequence> parts) {
  TokenSequence out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

bool has(const std::vector<std::string>& xs, const std::string& x) {
  return std::find(xs.begin(), xs.end(), x) != xs.end();
}

// Pass-through decoder whose </TRANSCRIPT> row is zero: every emitted
// token's own logit is positive, so generation never closes.
model::DecoderParams never_closing_decoder(Rng& rng) {
  auto p = model::DecoderParams::random(V::size(), 8, 1, 2, rng);
  for (auto& b : p.blocks) {
    b.output = Dense::zeros(8, 8);
    b.ff.second = Dense::zeros(b.ff.hidden(), 8);
  }
  for (std::size_t d = 0; d < 8; ++d) p.embedding(V::kTranscriptClose, d) = 0.0;
  return p;
}

}  // namespace

TEST_CASE("build_target layout") {
  const auto t = cot::build_target("retail topic", "buy milk");
  const auto want = concat({{V::kContextOpen}, V::encode("retail topic"), {V::kContextClose},
                            {V::kTranscriptOpen}, V::encode("buy milk"), {V::kTranscriptClose}});
  CHECK(t == want);
  const auto parsed = cot::parse_output(t);
  CHECK(parsed.well_formed);
  CHECK(parsed.context == "retail topic");
  CHECK(parsed.transcript == "buy milk");
  CHECK(parsed.diagnostics.empty());

  const auto plain = cot::build_target("", "hi", false);
  CHECK(plain == concat({{V::kTranscriptOpen}, V::encode("hi"), {V::kTranscriptClose}}));
  const auto pp = cot::parse_output(plain, cot::Layout::TranscriptOnly);
  CHECK(pp.well_formed);
  CHECK(pp.transcript == "hi");
  CHECK_FALSE(pp.context.has_value());
}

TEST_CASE("foreign characters are named") {
  try {
    cot::build_target("ok", "Buy milk!");
    FAIL("expected VocabError");
  } catch (const VocabError& e) {
    const std::string msg = e.what();
    CHECK(msg.find('B') != std::string::npos);
    CHECK(msg.find('!') != std::string::npos);
  }
  CHECK_THROWS_AS(cot::build_target("Shop", "milk"), VocabError);
  // Tag surface forms are not text: tokenizing them fails rather than
  // yielding a tag token.
  CHECK_THROWS_AS(V::encode("<CONTEXT>"), VocabError);
  for (char c : V::kChars) CHECK_FALSE(V::is_tag(*V::char_id(c)));
}

TEST_CASE("parse inverts build over corpus pairs") {
  auto cfg = fixtures::small_corpus(1000, 5);
  const auto corpus = synth::synth_corpus(cfg);
  for (const auto& u : corpus.utterances) {
    const auto parsed = cot::parse_output(cot::build_target(u.context, u.transcript()));
    CHECK(parsed.well_formed);
    CHECK(parsed.context == u.context);
    CHECK(parsed.transcript == u.transcript());
  }
}

TEST_CASE("parse diagnostics") {
  SUBCASE("missing context close") {
    const auto t = concat({{V::kContextOpen}, V::encode("shop"), {V::kTranscriptOpen},
                           V::encode("milk"), {V::kTranscriptClose}});
    const auto p = cot::parse_output(t);
    CHECK_FALSE(p.well_formed);
    CHECK(has(p.diagnostics, "missing </CONTEXT>"));
    CHECK(p.context == "shop");
    CHECK(p.transcript == "milk");
  }
  SUBCASE("empty") {
    const auto p = cot::parse_output({});
    CHECK_FALSE(p.well_formed);
    CHECK(p.transcript.empty());
    CHECK(has(p.diagnostics, "missing <TRANSCRIPT>"));
  }
  SUBCASE("unterminated transcript is salvaged") {
    const auto t = concat({{V::kContextOpen}, V::encode("a"), {V::kContextClose},
                           {V::kTranscriptOpen}, V::encode("buy mi")});
    const auto p = cot::parse_output(t);
    CHECK_FALSE(p.well_formed);
    CHECK(p.transcript == "buy mi");
    CHECK(has(p.diagnostics, "missing </TRANSCRIPT>"));
  }
  SUBCASE("no transcript tag") {
    const auto t = concat({{V::kContextOpen}, V::encode("a"), {V::kContextClose}, V::encode("x")});
    const auto p = cot::parse_output(t);
    CHECK_FALSE(p.well_formed);
    CHECK(p.transcript.empty());
  }
  SUBCASE("context block in a transcript-only layout") {
    const auto p = cot::parse_output(cot::build_target("a", "b"), cot::Layout::TranscriptOnly);
    CHECK_FALSE(p.well_formed);
    CHECK(has(p.diagnostics, "unexpected <CONTEXT>"));
    CHECK(p.transcript == "b");
  }
  SUBCASE("trailing tokens") {
    auto t = cot::build_target("a", "b");
    t.push_back(V::encode("z")[0]);
    CHECK_FALSE(cot::parse_output(t).well_formed);
  }
}

TEST_CASE("prompt assembly") {
  Rng rng(1);
  const auto dec = model::DecoderParams::random(V::size(), 8, 1, 2, rng);
  const Matrix a = random_normal(5, 8, 1.0, rng);
  const Matrix self = cot::assemble_prompt(a, dec, std::nullopt);
  CHECK(self.rows() == 5 + cot::kInstruction.size());
  for (std::size_t d = 0; d < 8; ++d) CHECK(self(2, d) == a(2, d));

  const Matrix user = cot::assemble_prompt(a, dec, std::string("milk"));
  CHECK(user.rows() == 5 + cot::kInstruction.size() + 6);
  for (std::size_t d = 0; d < 8; ++d) {
    CHECK(user(user.rows() - 1, d) == dec.embedding(V::kContextClose, d));
    CHECK(user(5 + cot::kInstruction.size(), d) == dec.embedding(V::kContextOpen, d));
  }
  CHECK_THROWS_AS(cot::assemble_prompt(a, dec, std::string("Milk")), VocabError);
  CHECK_THROWS_AS(cot::assemble_prompt(Matrix(0, 8), dec, std::nullopt), DimensionError);
}

TEST_CASE("greedy generation") {
  Rng rng(2);
  CHECK(cot::argmax(std::vector<double>{1.0, 3.0, 3.0}) == 1);

  SUBCASE("truncation") {
    const auto dec = never_closing_decoder(rng);
    const Matrix prompt = cot::assemble_prompt(random_normal(3, 8, 1.0, rng), dec, std::nullopt);
    const auto r = cot::generate_one_pass(prompt, dec, 6, cot::Layout::ContextThenTranscript);
    CHECK(r.output.tokens.size() == 6);
    CHECK_FALSE(r.output.well_formed);
    CHECK(has(r.output.diagnostics, "truncated"));
    CHECK(r.prompt_length == prompt.rows());
    CHECK_THROWS_AS(cot::generate_one_pass(prompt, dec, 3, cot::Layout::TranscriptOnly),
                    InputError);
  }

  SUBCASE("each step is the argmax over the full prefix") {
    for (int trial = 0; trial < 10; ++trial) {
      const auto dec = model::DecoderParams::random(V::size(), 8, 2, 2, rng);
      const Matrix prompt = cot::assemble_prompt(random_normal(4, 8, 1.0, rng), dec,
                                                 std::nullopt);
      const auto r = cot::generate_one_pass(prompt, dec, 12, cot::Layout::ContextThenTranscript);
      const auto again = cot::generate_one_pass(prompt, dec, 12, cot::Layout::ContextThenTranscript);
      CHECK(r.output.tokens == again.output.tokens);
      CHECK(r.output.tokens.size() <= 12);
      for (std::size_t i = 0; i < r.output.tokens.size(); ++i) {
        const TokenSequence prior(r.output.tokens.begin(), r.output.tokens.begin() + i);
        Matrix prefix(prompt.rows() + i, 8);
        std::copy(prompt.values().begin(), prompt.values().end(), prefix.values().begin());
        if (i > 0) {
          const Matrix e = model::embed(dec, prior);
          std::copy(e.values().begin(), e.values().end(),
                    prefix.values().begin() + static_cast<long>(prompt.size()));
        }
        const Matrix logits = model::lm_next_token_logits(prefix, dec);
        CHECK(static_cast<TokenId>(cot::argmax(logits.row(prefix.rows() - 1))) ==
              r.output.tokens[i]);
      }
    }
  }
}
