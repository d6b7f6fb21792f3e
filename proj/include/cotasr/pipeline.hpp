#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cotasr/config.hpp"
#include "cotasr/cot.hpp"
#include "cotasr/eval.hpp"
#include "cotasr/synthdata.hpp"
#include "cotasr/train.hpp"

namespace cotasr::pipeline {

// Seconds of audio one raw feature frame stands for (RTF denominator).
inline constexpr double kFrameSeconds = 0.010;

synth::Lexicon lexicon_for(const config::RunConfig& cfg);

std::vector<train::Example> examples(const synth::Corpus& corpus, train::Mode mode);

struct TrainedModel {
  model::CotAsrModel model;
  train::Mode mode = train::Mode::Cot;
};

// Trains per cfg. on_step sees every record as it is produced.
TrainedModel train_model(const config::RunConfig& cfg, const synth::Corpus& corpus,
                         const std::function<void(const train::LossRecord&)>& on_step = {});

void save_model(const std::filesystem::path& path, const TrainedModel& m);
TrainedModel load_model(const std::filesystem::path& path);

struct TranscriptRecord {
  std::string id;
  std::string decode_mode;  // "self", "user" or "plain"
  std::optional<std::string> context;
  std::string transcript;
  bool well_formed = false;
  std::vector<std::string> diagnostics;
  std::size_t tokens = 0;
  std::size_t frames = 0;  // raw input frames
  double decode_seconds = 0.0;
};

// Self mode for cot models, transcript-only for plain models; user mode
// when user_context is given (cot models only; InputError otherwise).
TranscriptRecord transcribe_one(const TrainedModel& m, const std::string& id,
                                const Matrix& features,
                                const std::optional<std::string>& user_context,
                                std::size_t max_len);

// `user_contexts` (by id) switches every utterance to user mode; each
// context is corrupted at `context_error_rate` with a per-utterance seed
// derived from `seed`. InputError if an utterance has no context.
std::vector<TranscriptRecord> transcribe(
    const TrainedModel& m, const synth::Corpus& corpus,
    const std::optional<std::map<std::string, std::string>>& user_contexts,
    double context_error_rate, std::uint64_t seed, std::size_t max_len,
    const synth::Lexicon& lexicon = synth::Lexicon::builtin());

// "id<TAB>context" per line. InputError on malformed lines.
std::map<std::string, std::string> load_user_contexts(const std::filesystem::path& path);
std::map<std::string, std::string> oracle_contexts(const synth::Corpus& corpus);

std::string record_to_json(const TranscriptRecord& r);
TranscriptRecord record_from_json(std::string_view line);
void write_records(const std::filesystem::path& path, const std::vector<TranscriptRecord>& records);
std::vector<TranscriptRecord> read_records(const std::filesystem::path& path);

struct ScoreOptions {
  std::optional<eval::BiasList> bias;
  bool homophone_only = false;
  std::string set_name = "test";
};

// Scores the transcript field of every record against the corpus reference
// (matched by id; InputError when a reference has no record). EER is left
// undefined when the scored utterances carry no entities.
eval::SetMetrics score(const synth::Corpus& corpus, const std::vector<TranscriptRecord>& records,
                       const ScoreOptions& options);

double format_validity(const std::vector<TranscriptRecord>& records);

struct AblationRow {
  std::string system;  // e.g. "cot x ctc"
  train::Mode mode = train::Mode::Cot;
  adapter::Kind adapter = adapter::Kind::CtcGuided;
  std::size_t parameters = 0;
  eval::SetMetrics metrics;
  double format_validity = 0.0;
  double final_loss = 0.0;  // mean joint loss over the last 100 steps
};

// Trains and decodes {cot, plain} x {ctc, linear} with identical seeds.
std::vector<AblationRow> run_ablation(const config::RunConfig& cfg, const synth::Corpus& train_set,
                                      const synth::Corpus& test_set,
                                      const std::function<void(const std::string&)>& progress = {});
// include_rtf=false yields a table that is reproducible bit for bit.
std::string format_ablation(const std::vector<AblationRow>& rows, bool include_rtf = true);
eval::Report ablation_report(const std::vector<AblationRow>& rows);

}  // namespace cotasr::pipeline
