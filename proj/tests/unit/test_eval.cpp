#include <doctest.h>

#include <functional>
#include <map>

#include "cotasr/errors.hpp"
#include "cotasr/eval.hpp"
#include "cotasr/numerics.hpp"

using namespace cotasr;
using namespace cotasr::eval;

namespace {

// Top-down memoized edit distance, written independently of align().
std::size_t edit_distance(const Words& a, const Words& b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  std::function<std::size_t(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) {
    if (i == a.size()) return b.size() - j;
    if (j == b.size()) return a.size() - i;
    const auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    std::size_t best = go(i + 1, j + 1) + (a[i] == b[j] ? 0 : 1);
    best = std::min(best, go(i + 1, j) + 1);
    best = std::min(best, go(i, j + 1) + 1);
    return memo[key] = best;
  };
  return go(0, 0);
}

Words random_words(Rng& rng, std::size_t max_len, std::size_t vocab) {
  static const char* names[] = {"a", "b", "c", "d", "e"};
  Words w(rng.below(max_len + 1));
  for (auto& x : w) x = names[rng.below(vocab)];
  return w;
}

void all_sequences(std::size_t max_len, const Words& alphabet, Words& prefix,
                   std::vector<Words>& out) {
  out.push_back(prefix);
  if (prefix.size() == max_len) return;
  for (const auto& s : alphabet) {
    prefix.push_back(s);
    all_sequences(max_len, alphabet, prefix, out);
    prefix.pop_back();
  }
}

}  // namespace

TEST_CASE("alignment examples") {
  const auto r = align(normalize("a b c"), normalize("a x c"));
  CHECK(r.substitutions == 1);
  CHECK(r.insertions == 0);
  CHECK(r.deletions == 0);
  CHECK(r.wer() == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(r.ops[1] == AlignedOp{Op::Substitute, 1, 1});

  const auto d = align(normalize("a"), normalize(""));
  CHECK(d.deletions == 1);
  CHECK(d.wer() == 1.0);
  CHECK(d.ops[0] == AlignedOp{Op::Delete, 0, kNoIndex});

  CHECK(normalize("  The  Rare\tBIRD ") == Words{"the", "rare", "bird"});
  CHECK_THROWS_AS(align({}, {"x"}).wer(), UndefinedMetricError);
}

TEST_CASE("WER is not symmetric") {
  // One insertion over three words versus one deletion over four.
  const Words x{"a", "b", "c"}, y{"a", "b", "c", "d"};
  CHECK(align(x, y).wer() == doctest::Approx(1.0 / 3.0));
  CHECK(align(y, x).wer() == doctest::Approx(0.25));
}

TEST_CASE("tie-break prefers substitution over delete plus insert") {
  const auto r = align({"a", "b"}, {"b", "a"});
  CHECK(r.errors() == 2);
  CHECK(r.substitutions == 2);
  // Equal-cost delete vs insert at the end of a path: delete first.
  const auto s = align({"a"}, {"b", "a", "c"});
  CHECK(s.errors() == 2);
  CHECK(s.insertions == 2);
}

TEST_CASE("alignment cost matches an independent edit distance") {
  std::vector<Words> seqs;
  Words prefix;
  all_sequences(4, {"a", "b"}, prefix, seqs);
  for (const auto& a : seqs)
    for (const auto& b : seqs) {
      const auto r = align(a, b);
      CHECK(r.errors() == edit_distance(a, b));
    }

  Rng rng(7);
  for (int trial = 0; trial < 3000; ++trial) {
    const Words a = random_words(rng, 6, 3), b = random_words(rng, 6, 3);
    const auto r = align(a, b);
    REQUIRE(r.errors() == edit_distance(a, b));
    // Ops replay to the counts and cover every word exactly once.
    std::size_t s = 0, i = 0, d = 0, ref_seen = 0, hyp_seen = 0;
    for (const auto& op : r.ops) {
      switch (op.op) {
        case Op::Match:
          CHECK(a[op.ref] == b[op.hyp]);
          ++ref_seen, ++hyp_seen;
          break;
        case Op::Substitute:
          CHECK(a[op.ref] != b[op.hyp]);
          ++s, ++ref_seen, ++hyp_seen;
          break;
        case Op::Insert: ++i, ++hyp_seen; break;
        case Op::Delete: ++d, ++ref_seen; break;
      }
    }
    CHECK(s == r.substitutions);
    CHECK(i == r.insertions);
    CHECK(d == r.deletions);
    CHECK(ref_seen == a.size());
    CHECK(hyp_seen == b.size());
    CHECK(r.ref_length == a.size());
  }
}

TEST_CASE("pooled WER") {
  const std::vector<Words> refs{normalize("a b c")};
  CHECK(wer(refs, refs) == 0.0);
  CHECK(wer(refs, {normalize("a x c")}) == doctest::Approx(0.3333).epsilon(1e-4));
  // 1 error / 1 word and 0 errors / 9 words: pooled 0.1, per-utterance mean 0.5.
  const std::vector<Words> r2{{"a"}, normalize("a b c d e f g h i")};
  const std::vector<Words> h2{{"x"}, normalize("a b c d e f g h i")};
  CHECK(wer(r2, h2) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK_THROWS_AS(wer(r2, {{"x"}}), InputError);
  CHECK_THROWS_AS(wer({{}}, {{"x"}}), UndefinedMetricError);
}

TEST_CASE("entity error rate") {
  const EntityReference ref{normalize("take aspirin with heart rate check"), {{1, 2}, {3, 5}}};
  CHECK(eer({ref}, {ref.words}) == 0.0);
  CHECK(eer({ref}, {normalize("take aspirin with heart race check")}) == 0.5);
  CHECK(eer({ref}, {normalize("take asprin with heart race check")}) == 1.0);

  const EntityReference bw{normalize("open bit warden now"), {{1, 3}}};
  const auto counts = entity_counts({bw}, {normalize("open bitwarden now")});
  CHECK(counts.total == 1);
  CHECK(counts.recalled == 0);

  // Substring presence elsewhere does not count.
  const EntityReference moved{normalize("aspirin then water"), {{0, 1}}};
  CHECK(eer({moved}, {normalize("water then aspirin")}) == 1.0);

  const EntityReference none{normalize("a b"), {}};
  CHECK_THROWS_AS(eer({none}, {normalize("a b")}), UndefinedMetricError);
}

TEST_CASE("EER is monotone in corrupted entities") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    EntityReference ref;
    ref.words = random_words(rng, 0, 1);
    const std::size_t n = 2 + rng.below(6);
    for (std::size_t i = 0; i < n; ++i) ref.words.push_back("w" + std::to_string(i));
    for (std::size_t i = 0; i + 1 < n; i += 2) ref.entities.push_back({i, i + 1 + rng.below(2)});
    Words hyp = ref.words;
    double previous = eer({ref}, {hyp});
    for (const auto& e : ref.entities) {
      hyp[e.first] = "zz";
      const double now = eer({ref}, {hyp});
      CHECK(now >= previous);
      previous = now;
    }
    CHECK(previous == 1.0);
  }
}

TEST_CASE("biased WER") {
  const BiasList bias({"Rare"});
  CHECK(bias.contains("rare"));
  auto r = biased_wer({normalize("the rare bird")}, {normalize("the rear bird")}, bias);
  CHECK(r.b_wer == 1.0);
  CHECK(r.u_wer == 0.0);
  CHECK(r.wer == doctest::Approx(1.0 / 3.0));
  CHECK(r.counts.biased_ref_words == 1);
  CHECK(r.counts.unbiased_ref_words == 2);

  const BiasList disjoint({"zebra"});
  r = biased_wer({normalize("the rare bird")}, {normalize("the rear bird")}, disjoint);
  CHECK_FALSE(r.b_wer.has_value());
  CHECK(r.u_wer == r.wer);

  const auto base = biased_counts(normalize("the rare bird"), normalize("the rare bird"), bias);
  const auto ins = biased_counts(normalize("the rare bird"), normalize("the rare rare bird"), bias);
  CHECK(ins.biased_errors == base.biased_errors + 1);
  CHECK(ins.unbiased_errors == base.unbiased_errors);
  const auto ins_plain = biased_counts(normalize("the rare bird"), normalize("the rare big bird"), bias);
  CHECK(ins_plain.unbiased_errors == base.unbiased_errors + 1);
  CHECK(ins_plain.biased_errors == base.biased_errors);
}

TEST_CASE("bias partition identity") {
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const Words ref = random_words(rng, 8, 5), hyp = random_words(rng, 8, 5);
    std::vector<std::string> bw;
    for (const char* w : {"a", "b", "c", "d", "e"})
      if (rng.bernoulli(0.4)) bw.push_back(w);
    const auto c = biased_counts(ref, hyp, BiasList(bw));
    const auto al = align(ref, hyp);
    CHECK(c.biased_errors + c.unbiased_errors == al.errors());
    CHECK(c.errors == al.errors());
    CHECK(c.biased_ref_words + c.unbiased_ref_words == ref.size());
  }
}

TEST_CASE("report averages and layout") {
  SystemMetrics sys{"cot", {{"clean", 10, 0.05, 0.10, {}, {}, {}}, {"noisy", 10, 0.07, 0.20, {}, {}, {}}}};
  const auto avg = average(sys);
  CHECK(avg.eer == doctest::Approx(0.15));
  CHECK(avg.wer == doctest::Approx(0.06));
  CHECK_FALSE(avg.b_wer.has_value());

  SystemMetrics other{"plain", {{"clean", 10, 0.09, {}, {}, {}, 0.125}, {"noisy", 10, 0.11, {}, {}, {}, 0.25}}};
  const Report rep{{sys, other}};
  const std::string table = format_table(rep);
  const auto cot_col = table.find("cot WER");
  const auto plain_col = table.find("plain WER");
  REQUIRE(cot_col != std::string::npos);
  REQUIRE(plain_col != std::string::npos);
  CHECK(cot_col < plain_col);
  CHECK(table.find("average") != std::string::npos);
  CHECK(table.find("15.00") != std::string::npos);
  CHECK(table.find(std::string(kUndefined)) != std::string::npos);
  CHECK(table == format_table(rep));

  const Report back = report_from_json(report_to_json(rep));
  CHECK(back == rep);
  CHECK(format_table(back) == table);
  CHECK_THROWS_AS(report_from_json("{"), InputError);
  CHECK_THROWS_AS(report_from_json(R"({"schema_version": 99, "systems": []})"), InputError);
}
