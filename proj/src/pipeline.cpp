#include "cotasr/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cotasr/checkpoint.hpp"
#include "cotasr/errors.hpp"

namespace cotasr::pipeline {

synth::Lexicon lexicon_for(const config::RunConfig& cfg) {
  if (cfg.lexicon.empty()) return synth::Lexicon::builtin();
  return synth::Lexicon::load(cfg.lexicon);
}

std::vector<train::Example> examples(const synth::Corpus& corpus, train::Mode mode) {
  std::vector<train::Example> out;
  out.reserve(corpus.utterances.size());
  for (const auto& u : corpus.utterances)
    out.push_back(train::make_example(u.id, u.features, u.context, u.transcript(), mode));
  return out;
}

TrainedModel train_model(const config::RunConfig& cfg, const synth::Corpus& corpus,
                         const std::function<void(const train::LossRecord&)>& on_step) {
  cfg.validate();
  if (!corpus.utterances.empty() && corpus.utterances.front().features.cols() != cfg.model.d_feat) {
    throw ConfigError("corpus feature width " +
                      std::to_string(corpus.utterances.front().features.cols()) +
                      " does not match d_feat " + std::to_string(cfg.model.d_feat));
  }
  TrainedModel out;
  out.mode = cfg.mode;
  out.model =
      train::train_two_stage(examples(corpus, cfg.mode), cfg.train_config(), cfg.model, on_step)
          .model;
  return out;
}

void save_model(const std::filesystem::path& path, const TrainedModel& m) {
  checkpoint::save(path, m.model, {{"mode", config::mode_name(m.mode)}});
}

TrainedModel load_model(const std::filesystem::path& path) {
  auto ck = checkpoint::load(path);
  TrainedModel out;
  out.model = std::move(ck.model);
  const auto it = ck.metadata.find("mode");
  if (it == ck.metadata.end() || (it->second != "cot" && it->second != "plain")) {
    throw CheckpointError("checkpoint metadata lacks a valid training mode");
  }
  out.mode = it->second == "cot" ? train::Mode::Cot : train::Mode::Plain;
  return out;
}

TranscriptRecord transcribe_one(const TrainedModel& m, const std::string& id,
                                const Matrix& features,
                                const std::optional<std::string>& user_context,
                                std::size_t max_len) {
  if (user_context && m.mode != train::Mode::Cot) {
    throw InputError("user-context decoding needs a model trained in cot mode");
  }
  const auto start = std::chrono::steady_clock::now();
  const auto sp = model::speech_prompt(m.model, features);
  const Matrix prompt = cot::assemble_prompt(sp.prompt, m.model.decoder, user_context);
  const auto layout = (m.mode == train::Mode::Cot && !user_context)
                          ? cot::Layout::ContextThenTranscript
                          : cot::Layout::TranscriptOnly;
  const auto gen = cot::generate_one_pass(prompt, m.model.decoder, max_len, layout);
  const auto stop = std::chrono::steady_clock::now();

  TranscriptRecord r;
  r.id = id;
  r.decode_mode = user_context ? "user" : (m.mode == train::Mode::Cot ? "self" : "plain");
  r.context = user_context ? user_context : gen.output.context;
  r.transcript = gen.output.transcript;
  r.well_formed = gen.output.well_formed;
  r.diagnostics = gen.output.diagnostics;
  r.tokens = gen.output.tokens.size();
  r.frames = features.rows();
  r.decode_seconds = std::chrono::duration<double>(stop - start).count();
  return r;
}

std::vector<TranscriptRecord> transcribe(
    const TrainedModel& m, const synth::Corpus& corpus,
    const std::optional<std::map<std::string, std::string>>& user_contexts,
    double context_error_rate, std::uint64_t seed, std::size_t max_len,
    const synth::Lexicon& lexicon) {
  std::vector<TranscriptRecord> out;
  out.reserve(corpus.utterances.size());
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
    const auto& u = corpus.utterances[i];
    std::optional<std::string> ctx;
    if (user_contexts) {
      const auto it = user_contexts->find(u.id);
      if (it == user_contexts->end()) throw InputError("no user context for utterance " + u.id);
      ctx = it->second;
      if (context_error_rate > 0.0) {
        ctx = synth::corrupt_context(*ctx, context_error_rate, Rng::derive(seed, i), lexicon).text;
      }
    }
    out.push_back(transcribe_one(m, u.id, u.features, ctx, max_len));
  }
  return out;
}

std::map<std::string, std::string> load_user_contexts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read user context file: " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": expected id<TAB>context");
    }
    out[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return out;
}

std::map<std::string, std::string> oracle_contexts(const synth::Corpus& corpus) {
  std::map<std::string, std::string> out;
  for (const auto& u : corpus.utterances) out[u.id] = u.context;
  return out;
}

std::string record_to_json(const TranscriptRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["mode"] = r.decode_mode;
  j["context"] = r.context ? nlohmann::ordered_json(*r.context) : nlohmann::ordered_json(nullptr);
  j["transcript"] = r.transcript;
  j["well_formed"] = r.well_formed;
  j["diagnostics"] = r.diagnostics;
  j["tokens"] = r.tokens;
  j["frames"] = r.frames;
  j["decode_seconds"] = r.decode_seconds;
  return j.dump();
}

TranscriptRecord record_from_json(std::string_view line) {
  try {
    const auto j = nlohmann::json::parse(line);
    TranscriptRecord r;
    r.id = j.at("id").get<std::string>();
    r.decode_mode = j.value("mode", "");
    if (j.contains("context") && !j.at("context").is_null()) {
      r.context = j.at("context").get<std::string>();
    }
    r.transcript = j.at("transcript").get<std::string>();
    r.well_formed = j.value("well_formed", false);
    r.diagnostics = j.value("diagnostics", std::vector<std::string>{});
    r.tokens = j.value("tokens", std::size_t{0});
    r.frames = j.value("frames", std::size_t{0});
    r.decode_seconds = j.value("decode_seconds", 0.0);
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed transcript record: ") + e.what());
  }
}

void write_records(const std::filesystem::path& path, const std::vector<TranscriptRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : records) out << record_to_json(r) << "\n";
}

std::vector<TranscriptRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<TranscriptRecord> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(record_from_json(line));
  return out;
}

eval::SetMetrics score(const synth::Corpus& corpus, const std::vector<TranscriptRecord>& records,
                       const ScoreOptions& options) {
  std::map<std::string, const TranscriptRecord*> by_id;
  for (const auto& r : records) by_id[r.id] = &r;

  std::vector<eval::Words> refs, hyps;
  std::vector<eval::EntityReference> entity_refs;
  double seconds = 0.0;
  std::size_t frames = 0;
  bool timed = false;
  for (const auto& u : corpus.utterances) {
    if (options.homophone_only && !u.homophone) continue;
    const auto it = by_id.find(u.id);
    if (it == by_id.end()) throw InputError("no transcript record for utterance " + u.id);
    const auto& r = *it->second;
    refs.push_back(eval::normalize(u.transcript()));
    hyps.push_back(eval::normalize(r.transcript));
    eval::EntityReference er;
    er.words = refs.back();
    for (const auto& e : u.entities) er.entities.push_back({e.first_word, e.end_word});
    entity_refs.push_back(std::move(er));
    seconds += r.decode_seconds;
    frames += r.frames;
    timed = timed || r.decode_seconds > 0.0;
  }

  eval::SetMetrics m;
  m.name = options.set_name;
  m.utterances = refs.size();
  if (refs.empty()) return m;
  try {
    m.wer = eval::wer(refs, hyps);
  } catch (const UndefinedMetricError&) {
  }
  try {
    m.eer = eval::eer(entity_refs, hyps);
  } catch (const UndefinedMetricError&) {
  }
  if (options.bias) {
    const auto b = eval::biased_wer(refs, hyps, *options.bias);
    m.b_wer = b.b_wer;
    m.u_wer = b.u_wer;
  }
  if (timed && frames > 0) m.rtf = seconds / (static_cast<double>(frames) * kFrameSeconds);
  return m;
}

double format_validity(const std::vector<TranscriptRecord>& records) {
  if (records.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& r : records) ok += r.well_formed ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(records.size());
}

std::vector<AblationRow> run_ablation(const config::RunConfig& cfg, const synth::Corpus& train_set,
                                      const synth::Corpus& test_set,
                                      const std::function<void(const std::string&)>& progress) {
  std::vector<AblationRow> rows;
  for (const auto mode : {train::Mode::Cot, train::Mode::Plain}) {
    for (const auto kind : {adapter::Kind::CtcGuided, adapter::Kind::Linear}) {
      config::RunConfig run = cfg;
      run.mode = mode;
      run.model.adapter_kind = kind;
      AblationRow row;
      row.system = config::mode_name(mode) + " x " + config::adapter_name(kind);
      row.mode = mode;
      row.adapter = kind;
      if (progress) progress("training " + row.system);
      std::vector<train::LossRecord> curve;
      const auto trained =
          train_model(run, train_set, [&](const train::LossRecord& r) { curve.push_back(r); });
      row.parameters = model::parameter_count(trained.model);
      row.final_loss = train::moving_average(curve, curve.empty() ? 1 : curve.back().stage, 100, true);
      if (progress) progress("decoding " + row.system);
      const auto records = transcribe(trained, test_set, std::nullopt, 0.0, run.seed, run.max_len);
      row.metrics = score(test_set, records, {});
      row.format_validity = format_validity(records);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

namespace {

std::string pct(const std::optional<double>& v) {
  if (!v) return std::string(eval::kUndefined);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", *v * 100.0);
  return buf;
}

}  // namespace

std::string format_ablation(const std::vector<AblationRow>& rows, bool include_rtf) {
  std::ostringstream out;
  char line[200];
  std::snprintf(line, sizeof line, "%-16s %10s %8s %8s %10s %10s", "system", "params", "WER%",
                "EER%", "valid%", "loss");
  out << line;
  if (include_rtf) out << "      RTF";
  out << "\n";
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-16s %10zu %8s %8s %10.2f %10.4f", r.system.c_str(),
                  r.parameters, pct(r.metrics.wer).c_str(), pct(r.metrics.eer).c_str(),
                  r.format_validity * 100.0, r.final_loss);
    out << line;
    if (include_rtf) {
      if (r.metrics.rtf) {
        std::snprintf(line, sizeof line, " %8.4f", *r.metrics.rtf);
        out << line;
      } else {
        out << "      " << eval::kUndefined;
      }
    }
    out << "\n";
  }
  return out.str();
}

eval::Report ablation_report(const std::vector<AblationRow>& rows) {
  eval::Report report;
  for (const auto& r : rows) report.systems.push_back({r.system, {r.metrics}});
  return report;
}

}  // namespace cotasr::pipeline
