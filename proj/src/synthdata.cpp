#include "cotasr/synthdata.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cotasr/errors.hpp"
#include "cotasr/vocab.hpp"

namespace cotasr::synth {

namespace {

constexpr std::string_view kBuiltinLexicon = R"(# Desk-scale lexicon. No word contains a doubled letter, so every character
# boundary is acoustically visible after rendering.
common i
common want
common the
common to
common my
common for
common please
common check
common a
common some
common get
common order
common about
common on
common is
common it
common buy
common find
common show
common with
common new
common today
common more
common price
common help
common what
common and
common now
common your
common our

entity pharmacy aspirin
entity pharmacy ibuprofen
entity pharmacy insulin
entity pharmacy antacid
entity pharmacy syrup
entity pharmacy capsule
entity pharmacy dose
entity banking deposit
entity banking mortgage
entity banking savings
entity banking credit
entity banking transfer
entity banking principal
entity banking stake
entity gaming joystick
entity gaming console
entity gaming avatar
entity gaming quest
entity gaming respawn
entity gaming serial
entity nutrition protein
entity nutrition calories
entity nutrition vitamin
entity nutrition fiber
entity nutrition cereal
entity nutrition steak
entity wellness yoga
entity wellness meditation
entity wellness sauna
entity wellness hydration
entity wellness doze
entity wellness principle
entity wellness patience
entity patient_history diabetes
entity patient_history asthma
entity patient_history migraine
entity patient_history fracture
entity patient_history heart rate
entity patient_history pain
entity patient_history patients
entity surgery scalpel
entity surgery incision
entity surgery anesthesia
entity surgery suture
entity surgery biopsy
entity surgery vein
entity consumer_goods detergent
entity consumer_goods blender
entity consumer_goods toaster
entity consumer_goods razor
entity consumer_goods credit card
entity consumer_goods pane
entity consumer_goods vane

homophone dose doze
homophone principal principle
homophone stake steak
homophone serial cereal
homophone pain pane
homophone vein vane
homophone patients patience
)";

std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::string join(const std::vector<std::string>& words, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += sep;
    out += words[i];
  }
  return out;
}

std::uint64_t parse_u64(const std::string& s) { return std::stoull(s); }

}  // namespace

Lexicon Lexicon::parse(std::string_view text) {
  Lexicon lex;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    auto words = split_words(line);
    if (words.empty()) continue;
    const std::string kind = words[0];
    auto fail = [&](const std::string& why) {
      throw ConfigError("lexicon line " + std::to_string(lineno) + ": " + why);
    };
    if (kind == "common") {
      if (words.size() != 2) fail("expected 'common <word>'");
      lex.common_.push_back(words[1]);
    } else if (kind == "entity") {
      if (words.size() < 3) fail("expected 'entity <domain> <text>'");
      std::string domain = words[1];
      std::replace(domain.begin(), domain.end(), '_', ' ');
      const std::string entity = join({words.begin() + 2, words.end()}, " ");
      lex.entities_.push_back({entity, domain});
      if (std::find(lex.domains_.begin(), lex.domains_.end(), domain) == lex.domains_.end())
        lex.domains_.push_back(domain);
    } else if (kind == "homophone") {
      if (words.size() != 3) fail("expected 'homophone <canonical> <other>'");
      lex.homophones_.emplace_back(words[1], words[2]);
    } else {
      fail("unknown entry kind '" + kind + "'");
    }
  }
  for (const auto& [a, b] : lex.homophones_) {
    lex.render_as_[a] = a;
    lex.render_as_[b] = a;
  }
  lex.validate();
  return lex;
}

Lexicon Lexicon::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read lexicon file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

const Lexicon& Lexicon::builtin() {
  static const Lexicon lex = parse(kBuiltinLexicon);
  return lex;
}

void Lexicon::validate() const {
  if (common_.empty() || entities_.empty()) throw ConfigError("lexicon is empty");
  auto check_word = [](const std::string& w) {
    if (w.empty()) throw ConfigError("lexicon: empty word");
    if (!Vocabulary::is_valid(w)) {
      throw ConfigError("lexicon: '" + w + "' uses characters outside the vocabulary");
    }
    for (std::size_t i = 1; i < w.size(); ++i) {
      if (w[i] == w[i - 1]) {
        throw ConfigError("lexicon: '" + w + "' has a doubled letter, which renders ambiguously");
      }
    }
  };
  for (const auto& w : common_) check_word(w);
  std::set<std::string> seen;
  for (const auto& e : entities_) {
    check_word(e.text);
    if (!seen.insert(e.text).second) throw ConfigError("lexicon: duplicate entity " + e.text);
  }
  for (const auto& [a, b] : homophones_) {
    if (a == b) throw ConfigError("lexicon: homophone pair with identical members " + a);
    if (!is_entity(a) || !is_entity(b)) {
      throw ConfigError("lexicon: homophone members must be entities: " + a + ", " + b);
    }
    if (a.size() != b.size()) {
      throw ConfigError("lexicon: homophones must have equal length: " + a + ", " + b);
    }
    if (domain_of(a) == domain_of(b)) {
      throw ConfigError("lexicon: homophones must belong to different domains: " + a + ", " + b);
    }
  }
  for (const auto& d : domains_) {
    if (plain_entities(d).empty()) {
      throw ConfigError("lexicon: domain '" + d + "' has no non-homophone entity");
    }
  }
}

std::vector<std::string> Lexicon::plain_entities(const std::string& domain) const {
  std::vector<std::string> out;
  for (const auto& e : entities_)
    if (e.domain == domain && !render_as_.contains(e.text)) out.push_back(e.text);
  return out;
}

const std::string& Lexicon::domain_of(const std::string& entity) const {
  for (const auto& e : entities_)
    if (e.text == entity) return e.domain;
  throw InputError("unknown entity: " + entity);
}

bool Lexicon::is_entity(const std::string& text) const {
  return std::any_of(entities_.begin(), entities_.end(),
                     [&](const Entity& e) { return e.text == text; });
}

const std::string& Lexicon::rendered_spelling(const std::string& word) const {
  const auto it = render_as_.find(word);
  return it == render_as_.end() ? word : it->second;
}

std::vector<std::string> Lexicon::word_pool() const {
  std::set<std::string> pool(common_.begin(), common_.end());
  for (const auto& e : entities_)
    for (auto& w : split_words(e.text)) pool.insert(w);
  return {pool.begin(), pool.end()};
}

std::string Lexicon::to_text() const {
  std::string out;
  for (const auto& w : common_) out += "common " + w + "\n";
  for (const auto& e : entities_) {
    std::string d = e.domain;
    std::replace(d.begin(), d.end(), ' ', '_');
    out += "entity " + d + " " + e.text + "\n";
  }
  for (const auto& [a, b] : homophones_) out += "homophone " + a + " " + b + "\n";
  return out;
}

void CorpusConfig::validate() const {
  if (n_utterances == 0) throw ConfigError("n_utterances must be >= 1");
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0, 1]");
  };
  prob(entity_rate, "entity_rate");
  prob(homophone_fraction, "homophone_fraction");
  prob(cue_rate, "cue_rate");
  if (min_words < 3 || max_words < min_words) throw ConfigError("need 3 <= min_words <= max_words");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
  if (d_feat == 0) throw ConfigError("d_feat must be >= 1");
  if (min_duration < 2 || max_duration < min_duration) {
    throw ConfigError("need 2 <= min_duration <= max_duration");
  }
}

std::string AnnotatedUtterance::transcript() const { return join(words, " "); }

SpeechRenderer::SpeechRenderer(const Lexicon& lexicon, std::uint64_t prototype_seed,
                               std::size_t d_feat, std::size_t min_duration,
                               std::size_t max_duration)
    : lexicon_(&lexicon), min_duration_(min_duration), max_duration_(max_duration) {
  Rng rng(prototype_seed);
  prototypes_ = random_normal(Vocabulary::kNumChars, d_feat, 1.0, rng);
}

std::string SpeechRenderer::rendered_text(std::string_view transcript) const {
  std::vector<std::string> words = split_words(transcript);
  // Multi-word entities never take part in homophone pairs, so word-level
  // lookup is sufficient.
  for (auto& w : words) w = lexicon_->rendered_spelling(w);
  return join(words, " ");
}

Matrix SpeechRenderer::render_impl(std::string_view transcript, std::uint64_t seed,
                                   double noise_sigma, std::optional<std::size_t> fixed) const {
  const std::string voiced = rendered_text(transcript);
  if (!Vocabulary::is_valid(voiced)) {
    throw VocabError("render_speech: characters outside vocabulary: \"" +
                     Vocabulary::invalid_chars(voiced) + "\"");
  }
  Rng dur_rng(Rng::derive(seed, 11));
  Rng noise_rng(Rng::derive(seed, 12));
  std::vector<std::size_t> durations(voiced.size());
  std::size_t total = 0;
  for (auto& d : durations) {
    d = fixed ? *fixed
              : static_cast<std::size_t>(dur_rng.between(static_cast<std::int64_t>(min_duration_),
                                                         static_cast<std::int64_t>(max_duration_)));
    total += d;
  }
  Matrix out(total, prototypes_.cols());
  std::size_t row = 0;
  for (std::size_t c = 0; c < voiced.size(); ++c) {
    const auto proto = prototypes_.row(static_cast<std::size_t>(*Vocabulary::char_id(voiced[c])));
    for (std::size_t k = 0; k < durations[c]; ++k, ++row) {
      auto dst = out.row(row);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = proto[j];
    }
  }
  if (noise_sigma > 0.0) {
    for (double& v : out.values()) v += noise_sigma * noise_rng.normal();
  }
  return out;
}

Matrix SpeechRenderer::render(std::string_view transcript, std::uint64_t seed,
                              double noise_sigma) const {
  return render_impl(transcript, seed, noise_sigma, std::nullopt);
}

Matrix SpeechRenderer::render_fixed(std::string_view transcript, std::size_t duration,
                                    double noise_sigma, std::uint64_t seed) const {
  return render_impl(transcript, seed, noise_sigma, duration);
}

std::string synth_context(const std::string& domain, const std::vector<EntitySpan>& entities) {
  if (entities.empty()) return domain;
  std::vector<std::string> names;
  for (const auto& e : entities) names.push_back(e.text);
  return domain + ": " + join(names, ", ");
}

Corpus synth_corpus(const CorpusConfig& config, const Lexicon& lexicon) {
  config.validate();
  if (lexicon.common().empty() || lexicon.entities().empty()) {
    throw ConfigError("synth_corpus: empty lexicon");
  }
  const SpeechRenderer renderer(lexicon, config.prototype_seed, config.d_feat,
                                config.min_duration, config.max_duration);
  const auto& domains = lexicon.domains();
  const auto& pairs = lexicon.homophones();
  const bool can_homophone = !pairs.empty();

  Corpus corpus;
  corpus.config = config;
  corpus.utterances.reserve(config.n_utterances);
  for (std::size_t i = 0; i < config.n_utterances; ++i) {
    Rng rng(Rng::derive(config.seed, 2 * i));
    AnnotatedUtterance u;
    u.id = config.id_prefix + std::to_string(i);

    std::vector<std::string> entity_items;
    u.homophone = can_homophone && rng.bernoulli(config.homophone_fraction);
    if (u.homophone) {
      const auto& pair = pairs[rng.below(pairs.size())];
      const std::string& member = rng.bernoulli(0.5) ? pair.first : pair.second;
      u.domain = lexicon.domain_of(member);
      entity_items.push_back(member);
      if (rng.bernoulli(config.cue_rate)) {
        const auto cues = lexicon.plain_entities(u.domain);
        entity_items.push_back(cues[rng.below(cues.size())]);
      }
    } else {
      u.domain = domains[rng.below(domains.size())];
      if (rng.bernoulli(config.entity_rate)) {
        auto pool = lexicon.plain_entities(u.domain);
        const std::size_t k = std::min<std::size_t>(pool.size(), rng.bernoulli(0.5) ? 2 : 1);
        for (std::size_t j = 0; j < k; ++j) {
          const std::size_t pick = j + rng.below(pool.size() - j);
          std::swap(pool[j], pool[pick]);
          entity_items.push_back(pool[j]);
        }
      }
    }

    std::size_t entity_words = 0;
    for (const auto& e : entity_items) entity_words += split_words(e).size();
    const auto n_words = static_cast<std::size_t>(rng.between(
        static_cast<std::int64_t>(config.min_words), static_cast<std::int64_t>(config.max_words)));
    const std::size_t n_common = std::max<std::size_t>(1, n_words > entity_words ? n_words - entity_words : 1);

    // Items are whole entities or single common words; shuffle then flatten.
    struct Item {
      std::string text;
      bool entity;
    };
    std::vector<Item> items;
    for (const auto& e : entity_items) items.push_back({e, true});
    for (std::size_t j = 0; j < n_common; ++j)
      items.push_back({lexicon.common()[rng.below(lexicon.common().size())], false});
    for (std::size_t j = items.size(); j > 1; --j) std::swap(items[j - 1], items[rng.below(j)]);

    for (const auto& item : items) {
      const auto ws = split_words(item.text);
      if (item.entity) u.entities.push_back({u.words.size(), u.words.size() + ws.size(), item.text});
      u.words.insert(u.words.end(), ws.begin(), ws.end());
    }
    u.context = synth_context(u.domain, u.entities);
    u.features = renderer.render(u.transcript(), Rng::derive(config.seed, 2 * i + 1),
                                 config.noise_sigma);
    corpus.utterances.push_back(std::move(u));
  }
  return corpus;
}

CorruptionResult corrupt_context(std::string_view context, double error_rate, std::uint64_t seed,
                                 const Lexicon& lexicon) {
  if (!(error_rate >= 0.0 && error_rate <= 1.0)) {
    throw InputError("corrupt_context: error_rate must lie in [0, 1]");
  }
  const auto pool = lexicon.word_pool();
  Rng rng(seed);
  CorruptionResult res;
  const auto words = split_words(context);
  res.words_in = words.size();
  std::vector<std::string> out;
  for (const auto& w : words) {
    if (!rng.bernoulli(error_rate)) {
      out.push_back(w);
      continue;
    }
    ++res.corrupted;
    switch (rng.below(3)) {
      case 0:  // insert
        out.push_back(pool[rng.below(pool.size())]);
        out.push_back(w);
        break;
      case 1:  // delete
        break;
      default: {  // substitute
        std::string sub = pool[rng.below(pool.size())];
        while (sub == w && pool.size() > 1) sub = pool[rng.below(pool.size())];
        out.push_back(sub);
        break;
      }
    }
  }
  res.text = join(out, " ");
  return res;
}

std::string hex_encode(const Matrix& m) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(m.size() * 16);
  for (double v : m.values()) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int byte = 0; byte < 8; ++byte) {
      const auto b = static_cast<unsigned>((bits >> (8 * byte)) & 0xffU);
      out.push_back(kDigits[b >> 4]);
      out.push_back(kDigits[b & 0xf]);
    }
  }
  return out;
}

Matrix hex_decode(std::string_view hex, std::size_t rows, std::size_t cols) {
  if (hex.size() != rows * cols * 16) {
    throw InputError("feature block has " + std::to_string(hex.size()) + " hex digits, expected " +
                     std::to_string(rows * cols * 16));
  }
  auto nibble = [](char c) -> unsigned {
    if (c >= '0' && c <= '9') return static_cast<unsigned>(c - '0');
    if (c >= 'a' && c <= 'f') return static_cast<unsigned>(c - 'a' + 10);
    if (c >= 'A' && c <= 'F') return static_cast<unsigned>(c - 'A' + 10);
    throw InputError("invalid hex digit in feature block");
  };
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) {
    std::uint64_t bits = 0;
    for (int byte = 0; byte < 8; ++byte) {
      const std::size_t at = i * 16 + static_cast<std::size_t>(byte) * 2;
      const std::uint64_t b = (nibble(hex[at]) << 4) | nibble(hex[at + 1]);
      bits |= b << (8 * byte);
    }
    m.data()[i] = std::bit_cast<double>(bits);
  }
  return m;
}

namespace {

std::string manifest_text(const Corpus& corpus) {
  const auto& c = corpus.config;
  std::ostringstream out;
  out << "# cotasr synthetic corpus\n";
  out << "format_version=" << kCorpusFormatVersion << "\n";
  out << "utterances=" << corpus.utterances.size() << "\n";
  out << "seed=" << c.seed << "\n";
  out << "n=" << c.n_utterances << "\n";
  out << "entity_rate=" << c.entity_rate << "\n";
  out << "homophone_fraction=" << c.homophone_fraction << "\n";
  out << "cue_rate=" << c.cue_rate << "\n";
  out << "min_words=" << c.min_words << "\n";
  out << "max_words=" << c.max_words << "\n";
  out << "noise_sigma=" << c.noise_sigma << "\n";
  out << "d_feat=" << c.d_feat << "\n";
  out << "min_duration=" << c.min_duration << "\n";
  out << "max_duration=" << c.max_duration << "\n";
  out << "prototype_seed=" << c.prototype_seed << "\n";
  out << "id_prefix=" << c.id_prefix << "\n";
  return out.str();
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create corpus directory " + dir.string() + ": " + ec.message());
  {
    std::ofstream out(dir / "manifest.txt");
    if (!out) throw IoError("cannot write " + (dir / "manifest.txt").string());
    out << manifest_text(corpus);
  }
  {
    std::ofstream out(dir / "records.jsonl");
    if (!out) throw IoError("cannot write " + (dir / "records.jsonl").string());
    for (const auto& u : corpus.utterances) {
      nlohmann::ordered_json j;
      j["id"] = u.id;
      j["domain"] = u.domain;
      j["transcript"] = u.transcript();
      auto spans = nlohmann::ordered_json::array();
      for (const auto& e : u.entities)
        spans.push_back({{"text", e.text}, {"first", e.first_word}, {"end", e.end_word}});
      j["entities"] = spans;
      j["context"] = u.context;
      j["homophone"] = u.homophone;
      j["frames"] = u.features.rows();
      j["dims"] = u.features.cols();
      j["features"] = hex_encode(u.features);
      out << j.dump() << "\n";
    }
  }
  {
    std::ofstream out(dir / "contexts.tsv");
    if (!out) throw IoError("cannot write " + (dir / "contexts.tsv").string());
    for (const auto& u : corpus.utterances) out << u.id << "\t" << u.context << "\n";
  }
}

Corpus load_corpus(const std::filesystem::path& dir) {
  Corpus corpus;
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw IoError("cannot read corpus manifest in " + dir.string());
  std::string line;
  std::map<std::string, std::string> kv;
  while (std::getline(manifest, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InputError("malformed manifest line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  if (!kv.contains("format_version") || std::stoi(kv["format_version"]) != kCorpusFormatVersion) {
    throw InputError("unsupported corpus format version in " + dir.string());
  }
  auto& c = corpus.config;
  try {
    c.seed = parse_u64(kv.at("seed"));
    c.n_utterances = parse_u64(kv.at("n"));
    c.entity_rate = std::stod(kv.at("entity_rate"));
    c.homophone_fraction = std::stod(kv.at("homophone_fraction"));
    c.cue_rate = std::stod(kv.at("cue_rate"));
    c.min_words = parse_u64(kv.at("min_words"));
    c.max_words = parse_u64(kv.at("max_words"));
    c.noise_sigma = std::stod(kv.at("noise_sigma"));
    c.d_feat = parse_u64(kv.at("d_feat"));
    c.min_duration = parse_u64(kv.at("min_duration"));
    c.max_duration = parse_u64(kv.at("max_duration"));
    c.prototype_seed = parse_u64(kv.at("prototype_seed"));
    c.id_prefix = kv.at("id_prefix");
  } catch (const std::out_of_range&) {
    throw InputError("corpus manifest in " + dir.string() + " is missing keys");
  } catch (const std::invalid_argument&) {
    throw InputError("corpus manifest in " + dir.string() + " has malformed values");
  }

  std::ifstream records(dir / "records.jsonl");
  if (!records) throw IoError("cannot read records.jsonl in " + dir.string());
  while (std::getline(records, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      AnnotatedUtterance u;
      u.id = j.at("id").get<std::string>();
      u.domain = j.at("domain").get<std::string>();
      u.words = split_words(j.at("transcript").get<std::string>());
      for (const auto& e : j.at("entities")) {
        EntitySpan span{e.at("first").get<std::size_t>(), e.at("end").get<std::size_t>(),
                        e.at("text").get<std::string>()};
        if (span.first_word >= span.end_word || span.end_word > u.words.size()) {
          throw InputError("entity span out of range in record " + u.id);
        }
        u.entities.push_back(std::move(span));
      }
      u.context = j.at("context").get<std::string>();
      u.homophone = j.at("homophone").get<bool>();
      u.features = hex_decode(j.at("features").get<std::string>(), j.at("frames").get<std::size_t>(),
                              j.at("dims").get<std::size_t>());
      corpus.utterances.push_back(std::move(u));
    } catch (const nlohmann::json::exception& ex) {
      throw InputError("malformed corpus record: " + std::string(ex.what()));
    }
  }
  return corpus;
}

}  // namespace cotasr::synth
