// cotasr command-line tool. Links only the C API.
//
// Exit codes: 0 success, 1 runtime failure, 2 configuration error.
// Settings precedence: --config file < command-line flags < COTASR_SEED.

#include <cstdio>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "cotasr/cotasr.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

struct Failure {
  cotasr_status status;
};

int exit_code(cotasr_status s) { return s == COTASR_ERR_CONFIG ? kExitConfig : kExitRuntime; }

void check(cotasr_status s, const char* what) {
  if (s == COTASR_OK) return;
  std::fprintf(stderr, "cotasr: %s: %s: %s\n", what, cotasr_status_name(s), cotasr_last_error());
  throw Failure{s};
}

template <class T, void (*Destroy)(T*)>
struct Handle {
  T* p = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() {
    if (p) Destroy(p);
  }
};

using Config = Handle<cotasr_config, cotasr_config_destroy>;
using Corpus = Handle<cotasr_corpus, cotasr_corpus_destroy>;
using Model = Handle<cotasr_model, cotasr_model_destroy>;

struct OwnedString {
  char* s = nullptr;
  ~OwnedString() { cotasr_string_free(s); }
};

// Flags that map one-to-one onto configuration keys.
class KeyFlags {
 public:
  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    values_.emplace_back();
    options_.push_back({app->add_option(flag, values_.back(), help), key});
  }
  void apply(cotasr_config* cfg) const {
    for (std::size_t i = 0; i < options_.size(); ++i) {
      if (options_[i].first->count() > 0) {
        check(cotasr_config_set(cfg, options_[i].second.c_str(), values_[i].c_str()), "config");
      }
    }
  }

 private:
  std::deque<std::string> values_;
  std::vector<std::pair<CLI::Option*, std::string>> options_;
};

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  KeyFlags keys;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_file, "key = value configuration file");
  app->add_option("--set", c.sets, "override any configuration key (KEY=VALUE), repeatable");
  c.keys.add(app, "--seed", "seed", "random seed");
}

void add_corpus_flags(CLI::App* app, Common& c) {
  c.keys.add(app, "--n", "n", "number of utterances");
  c.keys.add(app, "--lexicon", "lexicon", "lexicon file (default: built-in)");
  c.keys.add(app, "--noise-sigma", "noise_sigma", "feature noise standard deviation");
  c.keys.add(app, "--homophone-fraction", "homophone_fraction", "share of homophone utterances");
  c.keys.add(app, "--entity-rate", "entity_rate", "probability of plain entities");
  c.keys.add(app, "--id-prefix", "id_prefix", "utterance id prefix");
}

void add_train_flags(CLI::App* app, Common& c) {
  c.keys.add(app, "--mode", "mode", "cot or plain targets");
  c.keys.add(app, "--adapter", "adapter", "ctc or linear modality adapter");
  c.keys.add(app, "--lambda", "lambda", "CTC loss weight");
  c.keys.add(app, "--stage1-steps", "stage1_steps", "adapter-only steps");
  c.keys.add(app, "--stage2-steps", "stage2_steps", "joint steps");
  c.keys.add(app, "--peak-lr", "peak_lr", "peak learning rate");
  c.keys.add(app, "--warmup-steps", "warmup_steps", "warmup steps per stage");
  c.keys.add(app, "--batch-size", "batch_size", "utterances per step");
}

void build_config(const Common& c, Config& cfg) {
  check(cotasr_config_create(&cfg.p), "config");
  if (!c.config_file.empty()) check(cotasr_config_load_file(cfg.p, c.config_file.c_str()), "config");
  c.keys.apply(cfg.p);
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "cotasr: --set expects KEY=VALUE, got '%s'\n", kv.c_str());
      throw Failure{COTASR_ERR_CONFIG};
    }
    check(cotasr_config_set(cfg.p, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()), "config");
  }
  if (const char* env = std::getenv("COTASR_SEED")) {
    check(cotasr_config_set(cfg.p, "seed", env), "COTASR_SEED");
  }
  check(cotasr_config_validate(cfg.p), "config");
}

void write_echo(const Config& cfg, const std::filesystem::path& path) {
  check(cotasr_config_write(cfg.p, path.string().c_str()), "config echo");
}

std::filesystem::path sibling(const std::string& out, const std::string& suffix) {
  return std::filesystem::path(out + suffix);
}

struct LossLog {
  std::FILE* f = nullptr;
};

void log_step(const cotasr_step_record* r, void* user) {
  auto* log = static_cast<LossLog*>(user);
  std::fprintf(log->f, "%zu\t%d\t%.6e\t%.10g\t%.10g\t%.10g\n", r->step, r->stage, r->lr, r->ce,
               r->ctc, r->joint);
  std::fflush(log->f);
  if (r->step % 100 == 0) {
    std::fprintf(stderr, "step %zu (stage %d) joint %.4f\n", r->step, r->stage, r->joint);
  }
}

void print_progress(const char* message, void*) { std::fprintf(stderr, "%s\n", message); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cotasr: chain-of-thought speech recognition at desk scale"};
  app.require_subcommand(1);

  // synth
  Common synth_c;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "synthesize an annotated corpus");
  add_common(synth, synth_c);
  add_corpus_flags(synth, synth_c);
  synth->add_option("--out", synth_out, "output directory")->required();

  // train
  Common train_c;
  std::string train_corpus, train_out, train_log;
  auto* train = app.add_subcommand("train", "two-stage training");
  add_common(train, train_c);
  add_train_flags(train, train_c);
  train->add_option("--corpus", train_corpus, "corpus directory")->required();
  train->add_option("--out", train_out, "checkpoint path")->required();
  train->add_option("--loss-log", train_log, "per-step loss log (default <out>.loss.tsv)");

  // transcribe
  Common tr_c;
  std::string tr_model, tr_corpus, tr_out, tr_user;
  auto* transcribe = app.add_subcommand("transcribe", "greedy one-pass decoding");
  add_common(transcribe, tr_c);
  transcribe->add_option("--model", tr_model, "checkpoint path")->required();
  transcribe->add_option("--corpus", tr_corpus, "corpus directory")->required();
  transcribe->add_option("--out", tr_out, "output records (JSON lines)")->required();
  transcribe->add_option("--user-context-file", tr_user, "id<TAB>context lines (user mode)");
  tr_c.keys.add(transcribe, "--context-error-rate", "context_error_rate",
                "corrupt user contexts at this per-word rate");
  tr_c.keys.add(transcribe, "--max-len", "max_len", "maximum emitted tokens");

  // score
  std::string sc_corpus, sc_hyp, sc_bias, sc_report, sc_subset = "all";
  auto* score = app.add_subcommand("score", "WER, EER and biased WER of a transcript file");
  score->add_option("--corpus", sc_corpus, "reference corpus directory")->required();
  score->add_option("--hyp", sc_hyp, "records from transcribe")->required();
  score->add_option("--bias-list", sc_bias, "one biasing word per line");
  score->add_option("--subset", sc_subset, "all or homophone")
      ->check(CLI::IsMember({"all", "homophone"}));
  score->add_option("--report", sc_report, "structured report (JSON)");

  // gradcheck
  std::size_t gc_instances = 50;
  unsigned long long gc_seed = 1;
  std::string gc_fault, gc_out;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck->add_option("--instances", gc_instances, "random instances per component");
  gradcheck->add_option("--seed", gc_seed, "suite seed");
  gradcheck->add_option("--out", gc_out, "also write the table here");
  gradcheck->add_option("--inject-fault", gc_fault, "negate one component's gradient (self-test)")
      ->group("");

  // ablate
  Common ab_c;
  std::string ab_out;
  auto* ablate = app.add_subcommand("ablate", "cot/plain x ctc/linear comparison");
  add_common(ablate, ab_c);
  add_train_flags(ablate, ab_c);
  ab_c.keys.add(ablate, "--train-n", "train_n", "training utterances");
  ab_c.keys.add(ablate, "--test-n", "test_n", "held-out utterances");
  ab_c.keys.add(ablate, "--test-seed", "test_seed", "held-out corpus seed");
  ablate->add_option("--out", ab_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*synth) {
      Config cfg;
      build_config(synth_c, cfg);
      Corpus corpus;
      check(cotasr_corpus_synth(cfg.p, &corpus.p), "synth");
      check(cotasr_corpus_save(corpus.p, synth_out.c_str()), "synth");
      write_echo(cfg, std::filesystem::path(synth_out) / "config.txt");
      std::printf("wrote %zu utterances to %s\n", cotasr_corpus_size(corpus.p), synth_out.c_str());
    } else if (*train) {
      Config cfg;
      build_config(train_c, cfg);
      Corpus corpus;
      check(cotasr_corpus_load(train_corpus.c_str(), &corpus.p), "train");
      if (train_log.empty()) train_log = train_out + ".loss.tsv";
      write_echo(cfg, sibling(train_out, ".config.txt"));
      LossLog log{std::fopen(train_log.c_str(), "w")};
      if (log.f == nullptr) {
        std::fprintf(stderr, "cotasr: cannot write loss log %s\n", train_log.c_str());
        return kExitRuntime;
      }
      std::fprintf(log.f, "step\tstage\tlr\tce\tctc\tjoint\n");
      Model model;
      const cotasr_status s = cotasr_model_train(cfg.p, corpus.p, log_step, &log, &model.p);
      std::fclose(log.f);
      check(s, "train");
      check(cotasr_model_save(model.p, train_out.c_str()), "train");
      std::printf("wrote %s (%zu parameters), loss log %s\n", train_out.c_str(),
                  cotasr_model_parameter_count(model.p), train_log.c_str());
    } else if (*transcribe) {
      Config cfg;
      build_config(tr_c, cfg);
      Model model;
      check(cotasr_model_load(tr_model.c_str(), &model.p), "transcribe");
      Corpus corpus;
      check(cotasr_corpus_load(tr_corpus.c_str(), &corpus.p), "transcribe");
      write_echo(cfg, sibling(tr_out, ".config.txt"));
      check(cotasr_transcribe(cfg.p, model.p, corpus.p, tr_user.empty() ? nullptr : tr_user.c_str(),
                              tr_out.c_str()),
            "transcribe");
      std::printf("wrote %zu records to %s\n", cotasr_corpus_size(corpus.p), tr_out.c_str());
    } else if (*score) {
      Corpus corpus;
      check(cotasr_corpus_load(sc_corpus.c_str(), &corpus.p), "score");
      OwnedString table;
      check(cotasr_score(corpus.p, sc_hyp.c_str(), sc_bias.empty() ? nullptr : sc_bias.c_str(),
                         sc_subset == "homophone", sc_report.empty() ? nullptr : sc_report.c_str(),
                         &table.s),
            "score");
      if (!sc_report.empty()) {
        std::ofstream echo(sc_report + ".config.txt");
        echo << "corpus = " << sc_corpus << "\nhyp = " << sc_hyp << "\nbias_list = " << sc_bias
             << "\nsubset = " << sc_subset << "\n";
      }
      std::fputs(table.s, stdout);
    } else if (*gradcheck) {
      OwnedString table;
      int passed = 0;
      check(cotasr_gradcheck(gc_instances, gc_seed, gc_fault.empty() ? nullptr : gc_fault.c_str(),
                             &table.s, &passed),
            "gradcheck");
      std::fputs(table.s, stdout);
      if (!gc_out.empty()) std::ofstream(gc_out) << table.s;
      return passed ? kExitOk : kExitRuntime;
    } else if (*ablate) {
      Config cfg;
      build_config(ab_c, cfg);
      OwnedString table;
      check(cotasr_ablate(cfg.p, ab_out.c_str(), print_progress, nullptr, &table.s), "ablate");
      std::fputs(table.s, stdout);
    }
  } catch (const Failure& f) {
    return exit_code(f.status);
  }
  return kExitOk;
}
