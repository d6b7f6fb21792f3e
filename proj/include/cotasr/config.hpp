#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cotasr/model.hpp"
#include "cotasr/synthdata.hpp"
#include "cotasr/train.hpp"

namespace cotasr::config {

using KeyValues = std::map<std::string, std::string>;

// "key = value" lines; '#' starts a comment. ConfigError on malformed lines
// or duplicate keys.
KeyValues parse_key_values(std::string_view text);
// ConfigError naming the path when it cannot be read.
KeyValues load_key_values(const std::filesystem::path& path);

// Every parameter a command can take. Keys (see README):
//   seed                       corpus seed for synth, training seed for train,
//                              corruption seed for transcribe
//   corpus: n entity_rate homophone_fraction cue_rate min_words max_words
//           noise_sigma d_feat min_duration max_duration prototype_seed
//           id_prefix lexicon
//   model:  adapter(ctc|linear) d_enc d_model decoder_blocks heads
//           encoder_window encoder_stride encoder_blocks adapter_hidden tau
//           renormalize
//   train:  mode(cot|plain) lambda stage1_steps stage2_steps peak_lr
//           warmup_steps batch_size weight_decay clip_norm beta1 beta2 adam_eps
//   decode: max_len context_error_rate
//   ablate: train_n test_n test_seed
struct RunConfig {
  std::uint64_t seed = 42;
  synth::CorpusConfig corpus;
  std::string lexicon;  // empty: built-in lexicon
  model::ModelConfig model;
  train::TrainConfig train;
  train::Mode mode = train::Mode::Cot;
  std::size_t max_len = 200;
  double context_error_rate = 0.0;
  std::size_t ablate_train_n = 2000;
  std::size_t ablate_test_n = 200;
  std::uint64_t ablate_test_seed = 2;

  // Applies key/values in order; ConfigError on unknown keys or bad values.
  void apply(const KeyValues& kv);
  void set(const std::string& key, const std::string& value);
  // Full key=value echo of every setting (parseable by apply()).
  std::string to_text() const;
  // Range checks across all sections.
  void validate() const;

  synth::CorpusConfig corpus_config() const;    // with seed applied
  train::TrainConfig train_config() const;      // with seed applied
};

const std::vector<std::string>& known_keys();

std::string mode_name(train::Mode mode);
std::string adapter_name(adapter::Kind kind);

// Model-only echo stored inside checkpoints.
std::string model_config_to_text(const model::ModelConfig& config);
model::ModelConfig model_config_from_text(std::string_view text);

}  // namespace cotasr::config
