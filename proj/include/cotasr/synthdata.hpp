#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cotasr/numerics.hpp"

namespace cotasr::synth {

struct Entity {
  std::string text;  // may contain spaces
  std::string domain;
};

// Word inventory. Homophone pairs are entity strings of equal length from
// different domains; both members render with the first member's spelling,
// so only the domain can tell them apart.
class Lexicon {
 public:
  // Line format (blank lines and '#' comments ignored):
  //   common <word>
  //   entity <domain> <entity text...>
  //   homophone <canonical entity> <other entity>
  // Underscores in <domain> stand for spaces. Throws ConfigError.
  static Lexicon parse(std::string_view text);
  static Lexicon load(const std::filesystem::path& path);
  static const Lexicon& builtin();

  const std::vector<std::string>& common() const { return common_; }
  const std::vector<Entity>& entities() const { return entities_; }
  const std::vector<std::pair<std::string, std::string>>& homophones() const {
    return homophones_;
  }
  const std::vector<std::string>& domains() const { return domains_; }

  // Non-homophone entities of a domain.
  std::vector<std::string> plain_entities(const std::string& domain) const;
  const std::string& domain_of(const std::string& entity) const;
  bool is_entity(const std::string& text) const;
  // Spelling used to render a word (the canonical member for homophones).
  const std::string& rendered_spelling(const std::string& word) const;
  // Every single word (entity texts split on spaces), sorted, deduplicated.
  std::vector<std::string> word_pool() const;
  std::string to_text() const;

 private:
  void validate() const;

  std::vector<std::string> common_;
  std::vector<Entity> entities_;
  std::vector<std::pair<std::string, std::string>> homophones_;
  std::vector<std::string> domains_;
  std::map<std::string, std::string> render_as_;
};

struct CorpusConfig {
  std::uint64_t seed = 1;
  std::size_t n_utterances = 2000;
  double entity_rate = 0.9;
  double homophone_fraction = 0.25;
  // Probability that a homophone utterance also carries a second entity of
  // its domain (the acoustic cue that lets self-reasoning pick the member).
  double cue_rate = 0.7;
  std::size_t min_words = 3;
  std::size_t max_words = 8;
  double noise_sigma = 0.1;
  std::size_t d_feat = 16;
  std::size_t min_duration = 2;
  std::size_t max_duration = 5;
  // Character prototypes are shared by every corpus with the same value.
  std::uint64_t prototype_seed = 7;
  std::string id_prefix = "utt";

  void validate() const;
};

struct EntitySpan {
  std::size_t first_word = 0;
  std::size_t end_word = 0;  // exclusive
  std::string text;
  friend bool operator==(const EntitySpan&, const EntitySpan&) = default;
};

struct AnnotatedUtterance {
  std::string id;
  std::vector<std::string> words;
  std::vector<EntitySpan> entities;
  std::string domain;
  std::string context;
  bool homophone = false;
  Matrix features;

  std::string transcript() const;
  friend bool operator==(const AnnotatedUtterance&, const AnnotatedUtterance&) = default;
};

struct Corpus {
  CorpusConfig config;
  std::vector<AnnotatedUtterance> utterances;
};

// Per-character acoustic prototypes (d_feat each), fixed by prototype_seed.
class SpeechRenderer {
 public:
  SpeechRenderer(const Lexicon& lexicon, std::uint64_t prototype_seed, std::size_t d_feat,
                 std::size_t min_duration = 2, std::size_t max_duration = 5);

  // Each rendered character emits its prototype for a random 2..5 frames
  // plus N(0, noise_sigma^2) noise. Homophones use the canonical spelling.
  Matrix render(std::string_view transcript, std::uint64_t seed, double noise_sigma) const;
  // As render(), forcing every duration to `duration` frames.
  Matrix render_fixed(std::string_view transcript, std::size_t duration, double noise_sigma,
                      std::uint64_t seed = 0) const;
  // Character string actually voiced (homophones mapped to canonical).
  std::string rendered_text(std::string_view transcript) const;
  const Matrix& prototypes() const { return prototypes_; }

 private:
  Matrix render_impl(std::string_view transcript, std::uint64_t seed, double noise_sigma,
                     std::optional<std::size_t> fixed) const;

  const Lexicon* lexicon_;
  Matrix prototypes_;  // kNumChars x d_feat
  std::size_t min_duration_;
  std::size_t max_duration_;
};

// Domain plus every entity, never the transcript: "<domain>: e1, e2" or
// just "<domain>" without entities.
std::string synth_context(const std::string& domain, const std::vector<EntitySpan>& entities);

Corpus synth_corpus(const CorpusConfig& config, const Lexicon& lexicon = Lexicon::builtin());

struct CorruptionResult {
  std::string text;
  std::size_t words_in = 0;
  std::size_t corrupted = 0;  // positions touched (insert, delete or substitute)
};

// Independently per word with probability error_rate: insert a random
// lexicon word before it, delete it, or substitute it (uniform choice).
CorruptionResult corrupt_context(std::string_view context, double error_rate, std::uint64_t seed,
                                 const Lexicon& lexicon = Lexicon::builtin());

// Corpus directory: manifest.txt, records.jsonl, contexts.tsv.
inline constexpr int kCorpusFormatVersion = 1;
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

std::string hex_encode(const Matrix& m);
Matrix hex_decode(std::string_view hex, std::size_t rows, std::size_t cols);

}  // namespace cotasr::synth
