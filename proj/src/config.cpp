#include "cotasr/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "cotasr/errors.hpp"

namespace cotasr::config {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

bool set_model_key(model::ModelConfig& m, const std::string& key, const std::string& v) {
  if (key == "adapter") {
    if (v == "ctc") {
      m.adapter_kind = adapter::Kind::CtcGuided;
    } else if (v == "linear") {
      m.adapter_kind = adapter::Kind::Linear;
    } else {
      throw ConfigError("config key 'adapter': expected ctc or linear, got '" + v + "'");
    }
  } else if (key == "vocab") {
    m.vocab = to_u64(key, v);
  } else if (key == "d_feat") {
    m.d_feat = to_u64(key, v);
  } else if (key == "d_enc") {
    m.d_enc = to_u64(key, v);
  } else if (key == "d_model") {
    m.d_model = to_u64(key, v);
  } else if (key == "decoder_blocks") {
    m.decoder_blocks = to_u64(key, v);
  } else if (key == "heads") {
    m.heads = to_u64(key, v);
  } else if (key == "encoder_window") {
    m.encoder_window = to_u64(key, v);
  } else if (key == "encoder_stride") {
    m.encoder_stride = to_u64(key, v);
  } else if (key == "encoder_blocks") {
    m.encoder_blocks = to_u64(key, v);
  } else if (key == "adapter_hidden") {
    m.adapter_hidden = to_u64(key, v);
  } else if (key == "tau") {
    m.ctc_options.tau = to_double(key, v);
  } else if (key == "renormalize") {
    m.ctc_options.renormalize = to_bool(key, v);
  } else {
    return false;
  }
  return true;
}

void validate_model(const model::ModelConfig& m) {
  if (m.d_feat == 0 || m.d_enc == 0 || m.d_model == 0) throw ConfigError("model dims must be >= 1");
  if (m.heads == 0 || m.d_model % m.heads != 0 || (m.d_model / m.heads) % 2 != 0) {
    throw ConfigError("d_model must split into heads of even width");
  }
  if (m.encoder_window == 0 || m.encoder_stride == 0) {
    throw ConfigError("encoder_window and encoder_stride must be >= 1");
  }
  if (!(m.ctc_options.tau >= 0.0 && m.ctc_options.tau < 1.0)) {
    throw ConfigError("tau must lie in [0, 1)");
  }
}

}  // namespace

KeyValues parse_key_values(std::string_view text) {
  KeyValues kv;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, value).second) throw ConfigError("config: duplicate key '" + key + "'");
  }
  return kv;
}

KeyValues load_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = {
      "seed", "n", "entity_rate", "homophone_fraction", "cue_rate", "min_words", "max_words",
      "noise_sigma", "d_feat", "min_duration", "max_duration", "prototype_seed", "id_prefix",
      "lexicon", "adapter", "d_enc", "d_model", "decoder_blocks", "heads", "encoder_window",
      "encoder_stride", "encoder_blocks", "adapter_hidden", "tau", "renormalize", "mode",
      "lambda", "stage1_steps", "stage2_steps", "peak_lr", "warmup_steps", "batch_size",
      "weight_decay", "clip_norm", "beta1", "beta2", "adam_eps", "max_len",
      "context_error_rate", "train_n", "test_n", "test_seed"};
  return keys;
}

void RunConfig::set(const std::string& key, const std::string& v) {
  auto& c = corpus;
  auto& t = train;
  if (key == "seed") {
    seed = to_u64(key, v);
  } else if (key == "n") {
    c.n_utterances = to_u64(key, v);
  } else if (key == "entity_rate") {
    c.entity_rate = to_double(key, v);
  } else if (key == "homophone_fraction") {
    c.homophone_fraction = to_double(key, v);
  } else if (key == "cue_rate") {
    c.cue_rate = to_double(key, v);
  } else if (key == "min_words") {
    c.min_words = to_u64(key, v);
  } else if (key == "max_words") {
    c.max_words = to_u64(key, v);
  } else if (key == "noise_sigma") {
    c.noise_sigma = to_double(key, v);
  } else if (key == "d_feat") {
    c.d_feat = to_u64(key, v);
    model.d_feat = c.d_feat;
  } else if (key == "min_duration") {
    c.min_duration = to_u64(key, v);
  } else if (key == "max_duration") {
    c.max_duration = to_u64(key, v);
  } else if (key == "prototype_seed") {
    c.prototype_seed = to_u64(key, v);
  } else if (key == "id_prefix") {
    c.id_prefix = v;
  } else if (key == "lexicon") {
    lexicon = v;
  } else if (key == "mode") {
    if (v == "cot") {
      mode = train::Mode::Cot;
    } else if (v == "plain") {
      mode = train::Mode::Plain;
    } else {
      throw ConfigError("config key 'mode': expected cot or plain, got '" + v + "'");
    }
  } else if (key == "lambda") {
    t.lambda = to_double(key, v);
  } else if (key == "stage1_steps") {
    t.stage1_steps = to_u64(key, v);
  } else if (key == "stage2_steps") {
    t.stage2_steps = to_u64(key, v);
  } else if (key == "peak_lr") {
    t.peak_lr = to_double(key, v);
  } else if (key == "warmup_steps") {
    t.warmup_steps = to_u64(key, v);
  } else if (key == "batch_size") {
    t.batch_size = to_u64(key, v);
  } else if (key == "weight_decay") {
    t.weight_decay = to_double(key, v);
  } else if (key == "clip_norm") {
    t.clip_norm = to_double(key, v);
  } else if (key == "beta1") {
    t.beta1 = to_double(key, v);
  } else if (key == "beta2") {
    t.beta2 = to_double(key, v);
  } else if (key == "adam_eps") {
    t.adam_eps = to_double(key, v);
  } else if (key == "max_len") {
    max_len = to_u64(key, v);
  } else if (key == "context_error_rate") {
    context_error_rate = to_double(key, v);
  } else if (key == "train_n") {
    ablate_train_n = to_u64(key, v);
  } else if (key == "test_n") {
    ablate_test_n = to_u64(key, v);
  } else if (key == "test_seed") {
    ablate_test_seed = to_u64(key, v);
  } else if (key == "vocab" || !set_model_key(model, key, v)) {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

void RunConfig::apply(const KeyValues& kv) {
  for (const auto& [k, v] : kv) set(k, v);
}

std::string RunConfig::to_text() const {
  const auto& c = corpus;
  const auto& t = train;
  std::ostringstream out;
  out << "# corpus\n";
  out << "seed = " << seed << "\n";
  out << "n = " << c.n_utterances << "\n";
  out << "entity_rate = " << fmt(c.entity_rate) << "\n";
  out << "homophone_fraction = " << fmt(c.homophone_fraction) << "\n";
  out << "cue_rate = " << fmt(c.cue_rate) << "\n";
  out << "min_words = " << c.min_words << "\n";
  out << "max_words = " << c.max_words << "\n";
  out << "noise_sigma = " << fmt(c.noise_sigma) << "\n";
  out << "d_feat = " << c.d_feat << "\n";
  out << "min_duration = " << c.min_duration << "\n";
  out << "max_duration = " << c.max_duration << "\n";
  out << "prototype_seed = " << c.prototype_seed << "\n";
  out << "id_prefix = " << c.id_prefix << "\n";
  if (!lexicon.empty()) out << "lexicon = " << lexicon << "\n";
  out << "# model\n";
  std::istringstream model_lines(model_config_to_text(model));
  std::string line;
  while (std::getline(model_lines, line)) {
    if (!line.starts_with("vocab") && !line.starts_with("d_feat")) out << line << "\n";
  }
  out << "# train\n";
  out << "mode = " << mode_name(mode) << "\n";
  out << "lambda = " << fmt(t.lambda) << "\n";
  out << "stage1_steps = " << t.stage1_steps << "\n";
  out << "stage2_steps = " << t.stage2_steps << "\n";
  out << "peak_lr = " << fmt(t.peak_lr) << "\n";
  out << "warmup_steps = " << t.warmup_steps << "\n";
  out << "batch_size = " << t.batch_size << "\n";
  out << "weight_decay = " << fmt(t.weight_decay) << "\n";
  out << "clip_norm = " << fmt(t.clip_norm) << "\n";
  out << "beta1 = " << fmt(t.beta1) << "\n";
  out << "beta2 = " << fmt(t.beta2) << "\n";
  out << "adam_eps = " << fmt(t.adam_eps) << "\n";
  out << "# decode\n";
  out << "max_len = " << max_len << "\n";
  out << "context_error_rate = " << fmt(context_error_rate) << "\n";
  out << "# ablate\n";
  out << "train_n = " << ablate_train_n << "\n";
  out << "test_n = " << ablate_test_n << "\n";
  out << "test_seed = " << ablate_test_seed << "\n";
  return out.str();
}

void RunConfig::validate() const {
  corpus.validate();
  train_config().validate();
  validate_model(model);
  if (model.d_feat != corpus.d_feat) throw ConfigError("model and corpus d_feat differ");
  if (max_len < 4) throw ConfigError("max_len must be >= 4");
  if (!(context_error_rate >= 0.0 && context_error_rate <= 1.0)) {
    throw ConfigError("context_error_rate must lie in [0, 1]");
  }
  if (ablate_train_n == 0 || ablate_test_n == 0) throw ConfigError("train_n and test_n must be >= 1");
}

synth::CorpusConfig RunConfig::corpus_config() const {
  synth::CorpusConfig c = corpus;
  c.seed = seed;
  return c;
}

train::TrainConfig RunConfig::train_config() const {
  train::TrainConfig t = train;
  t.seed = seed;
  return t;
}

std::string mode_name(train::Mode mode) { return mode == train::Mode::Cot ? "cot" : "plain"; }

std::string adapter_name(adapter::Kind kind) {
  return kind == adapter::Kind::CtcGuided ? "ctc" : "linear";
}

std::string model_config_to_text(const model::ModelConfig& m) {
  std::ostringstream out;
  out << "adapter = " << adapter_name(m.adapter_kind) << "\n";
  out << "vocab = " << m.vocab << "\n";
  out << "d_feat = " << m.d_feat << "\n";
  out << "d_enc = " << m.d_enc << "\n";
  out << "d_model = " << m.d_model << "\n";
  out << "decoder_blocks = " << m.decoder_blocks << "\n";
  out << "heads = " << m.heads << "\n";
  out << "encoder_window = " << m.encoder_window << "\n";
  out << "encoder_stride = " << m.encoder_stride << "\n";
  out << "encoder_blocks = " << m.encoder_blocks << "\n";
  out << "adapter_hidden = " << m.adapter_hidden << "\n";
  out << "tau = " << fmt(m.ctc_options.tau) << "\n";
  out << "renormalize = " << (m.ctc_options.renormalize ? "true" : "false") << "\n";
  return out.str();
}

model::ModelConfig model_config_from_text(std::string_view text) {
  model::ModelConfig m;
  for (const auto& [k, v] : parse_key_values(text)) {
    if (!set_model_key(m, k, v)) throw ConfigError("unknown model config key '" + k + "'");
  }
  validate_model(m);
  return m;
}

}  // namespace cotasr::config
