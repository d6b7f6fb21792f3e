#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cotasr/model.hpp"
#include "cotasr/synthdata.hpp"
#include "cotasr/train.hpp"

namespace fixtures {

// Small but complete model over the full vocabulary.
inline cotasr::model::ModelConfig small_model() {
  cotasr::model::ModelConfig c;
  c.d_feat = 4;
  c.d_enc = 8;
  c.d_model = 16;
  c.decoder_blocks = 1;
  c.heads = 2;
  c.encoder_blocks = 1;
  c.adapter_hidden = 16;
  return c;
}

inline cotasr::synth::CorpusConfig small_corpus(std::size_t n, std::uint64_t seed = 1) {
  cotasr::synth::CorpusConfig c;
  c.n_utterances = n;
  c.seed = seed;
  c.d_feat = 4;
  c.min_words = 3;
  c.max_words = 4;
  return c;
}

inline std::vector<cotasr::train::Example> examples(const cotasr::synth::Corpus& corpus,
                                                    cotasr::train::Mode mode) {
  std::vector<cotasr::train::Example> out;
  for (const auto& u : corpus.utterances)
    out.push_back(cotasr::train::make_example(u.id, u.features, u.context, u.transcript(), mode));
  return out;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("cotasr_test_" + name)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

}  // namespace fixtures
