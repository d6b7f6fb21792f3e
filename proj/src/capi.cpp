#include "cotasr/cotasr.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>

#include "cotasr/config.hpp"
#include "cotasr/errors.hpp"
#include "cotasr/gradcheck.hpp"
#include "cotasr/pipeline.hpp"

struct cotasr_config {
  cotasr::config::RunConfig cfg;
};

struct cotasr_corpus {
  cotasr::synth::Corpus corpus;
};

struct cotasr_model {
  cotasr::pipeline::TrainedModel model;
};

namespace {

thread_local std::string g_last_error;

cotasr_status fail(cotasr_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

// Maps every library exception onto a status code.
template <class F>
cotasr_status guarded(F&& f) {
  using namespace cotasr;
  try {
    g_last_error.clear();
    f();
    return COTASR_OK;
  } catch (const ConfigError& e) {
    return fail(COTASR_ERR_CONFIG, e.what());
  } catch (const IoError& e) {
    return fail(COTASR_ERR_IO, e.what());
  } catch (const DimensionError& e) {
    return fail(COTASR_ERR_DIMENSION, e.what());
  } catch (const NumericalError& e) {
    return fail(COTASR_ERR_NUMERICAL, e.what());
  } catch (const TrainingDivergedError& e) {
    return fail(COTASR_ERR_DIVERGED, e.what());
  } catch (const CheckpointError& e) {
    return fail(COTASR_ERR_CHECKPOINT, e.what());
  } catch (const VocabError& e) {
    return fail(COTASR_ERR_VOCAB, e.what());
  } catch (const UndefinedMetricError& e) {
    return fail(COTASR_ERR_UNDEFINED_METRIC, e.what());
  } catch (const InputError& e) {
    return fail(COTASR_ERR_INPUT, e.what());
  } catch (const InputTooShortError& e) {
    return fail(COTASR_ERR_INPUT, e.what());
  } catch (const InfeasibleTargetError& e) {
    return fail(COTASR_ERR_INPUT, e.what());
  } catch (const EmptyTargetError& e) {
    return fail(COTASR_ERR_INPUT, e.what());
  } catch (const std::exception& e) {
    return fail(COTASR_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(COTASR_ERR_INTERNAL, "unknown error");
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw cotasr::InputError(std::string(what) + " must not be NULL");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw cotasr::IoError("cannot write " + path);
  out << text;
}

}  // namespace

extern "C" {

const char* cotasr_version(void) { return "1.0.0"; }

const char* cotasr_last_error(void) { return g_last_error.c_str(); }

const char* cotasr_status_name(cotasr_status status) {
  switch (status) {
    case COTASR_OK: return "ok";
    case COTASR_ERR_CONFIG: return "config error";
    case COTASR_ERR_IO: return "i/o error";
    case COTASR_ERR_DIMENSION: return "dimension error";
    case COTASR_ERR_NUMERICAL: return "numerical error";
    case COTASR_ERR_DIVERGED: return "training diverged";
    case COTASR_ERR_CHECKPOINT: return "checkpoint error";
    case COTASR_ERR_VOCAB: return "vocabulary error";
    case COTASR_ERR_INPUT: return "input error";
    case COTASR_ERR_UNDEFINED_METRIC: return "undefined metric";
    case COTASR_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

void cotasr_string_free(char* s) { std::free(s); }

cotasr_status cotasr_config_create(cotasr_config** out) {
  return guarded([&] {
    require(out, "out");
    *out = new cotasr_config();
  });
}

void cotasr_config_destroy(cotasr_config* cfg) { delete cfg; }

cotasr_status cotasr_config_set(cotasr_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    require(cfg, "cfg");
    require(key, "key");
    require(value, "value");
    cfg->cfg.set(key, value);
  });
}

cotasr_status cotasr_config_load_file(cotasr_config* cfg, const char* path) {
  return guarded([&] {
    require(cfg, "cfg");
    require(path, "path");
    cfg->cfg.apply(cotasr::config::load_key_values(path));
  });
}

cotasr_status cotasr_config_validate(const cotasr_config* cfg) {
  return guarded([&] {
    require(cfg, "cfg");
    cfg->cfg.validate();
  });
}

cotasr_status cotasr_config_text(const cotasr_config* cfg, char** out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(out, "out");
    *out = dup_string(cfg->cfg.to_text());
  });
}

cotasr_status cotasr_config_write(const cotasr_config* cfg, const char* path) {
  return guarded([&] {
    require(cfg, "cfg");
    require(path, "path");
    write_text(path, cfg->cfg.to_text());
  });
}

cotasr_status cotasr_corpus_synth(const cotasr_config* cfg, cotasr_corpus** out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(out, "out");
    cfg->cfg.corpus_config().validate();
    const auto lexicon = cotasr::pipeline::lexicon_for(cfg->cfg);
    auto c = std::make_unique<cotasr_corpus>();
    c->corpus = cotasr::synth::synth_corpus(cfg->cfg.corpus_config(), lexicon);
    *out = c.release();
  });
}

cotasr_status cotasr_corpus_load(const char* dir, cotasr_corpus** out) {
  return guarded([&] {
    require(dir, "dir");
    require(out, "out");
    auto c = std::make_unique<cotasr_corpus>();
    c->corpus = cotasr::synth::load_corpus(dir);
    *out = c.release();
  });
}

cotasr_status cotasr_corpus_save(const cotasr_corpus* corpus, const char* dir) {
  return guarded([&] {
    require(corpus, "corpus");
    require(dir, "dir");
    cotasr::synth::save_corpus(corpus->corpus, dir);
  });
}

size_t cotasr_corpus_size(const cotasr_corpus* corpus) {
  return corpus ? corpus->corpus.utterances.size() : 0;
}

void cotasr_corpus_destroy(cotasr_corpus* corpus) { delete corpus; }

cotasr_status cotasr_corpus_write_contexts(const cotasr_corpus* corpus, const char* path) {
  return guarded([&] {
    require(corpus, "corpus");
    require(path, "path");
    std::string text;
    for (const auto& u : corpus->corpus.utterances) text += u.id + "\t" + u.context + "\n";
    write_text(path, text);
  });
}

cotasr_status cotasr_model_train(const cotasr_config* cfg, const cotasr_corpus* corpus,
                                 cotasr_step_callback on_step, void* user, cotasr_model** out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(corpus, "corpus");
    require(out, "out");
    auto m = std::make_unique<cotasr_model>();
    m->model = cotasr::pipeline::train_model(
        cfg->cfg, corpus->corpus, [&](const cotasr::train::LossRecord& r) {
          if (on_step == nullptr) return;
          const cotasr_step_record rec{r.step, r.stage, r.lr, r.ce, r.ctc, r.joint};
          on_step(&rec, user);
        });
    *out = m.release();
  });
}

cotasr_status cotasr_model_save(const cotasr_model* model, const char* path) {
  return guarded([&] {
    require(model, "model");
    require(path, "path");
    cotasr::pipeline::save_model(path, model->model);
  });
}

cotasr_status cotasr_model_load(const char* path, cotasr_model** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    auto m = std::make_unique<cotasr_model>();
    m->model = cotasr::pipeline::load_model(path);
    *out = m.release();
  });
}

size_t cotasr_model_parameter_count(const cotasr_model* model) {
  return model ? cotasr::model::parameter_count(model->model.model) : 0;
}

void cotasr_model_destroy(cotasr_model* model) { delete model; }

cotasr_status cotasr_transcribe(const cotasr_config* cfg, const cotasr_model* model,
                                const cotasr_corpus* corpus, const char* user_context_file,
                                const char* out_path) {
  return guarded([&] {
    require(cfg, "cfg");
    require(model, "model");
    require(corpus, "corpus");
    require(out_path, "out_path");
    cfg->cfg.validate();
    std::optional<std::map<std::string, std::string>> contexts;
    if (user_context_file != nullptr) {
      contexts = cotasr::pipeline::load_user_contexts(user_context_file);
    } else if (cfg->cfg.context_error_rate > 0.0) {
      throw cotasr::ConfigError("context_error_rate applies only with a user context file");
    }
    const auto lexicon = cotasr::pipeline::lexicon_for(cfg->cfg);
    const auto records =
        cotasr::pipeline::transcribe(model->model, corpus->corpus, contexts,
                                     cfg->cfg.context_error_rate, cfg->cfg.seed,
                                     cfg->cfg.max_len, lexicon);
    cotasr::pipeline::write_records(out_path, records);
  });
}

cotasr_status cotasr_score(const cotasr_corpus* corpus, const char* records_path,
                           const char* bias_list_file, int homophone_only,
                           const char* report_path, char** table_out) {
  return guarded([&] {
    require(corpus, "corpus");
    require(records_path, "records_path");
    cotasr::pipeline::ScoreOptions opts;
    if (bias_list_file != nullptr) opts.bias = cotasr::eval::BiasList::load(bias_list_file);
    opts.homophone_only = homophone_only != 0;
    if (opts.homophone_only) opts.set_name = "homophone";
    const auto records = cotasr::pipeline::read_records(records_path);
    auto metrics = cotasr::pipeline::score(corpus->corpus, records, opts);
    cotasr::eval::Report report;
    report.systems.push_back({"system", {metrics}});
    if (report_path != nullptr) write_text(report_path, cotasr::eval::report_to_json(report));
    if (table_out != nullptr) *table_out = dup_string(cotasr::eval::format_table(report));
  });
}

cotasr_status cotasr_gradcheck(size_t instances, unsigned long long seed,
                               const char* inject_fault, char** table_out, int* all_passed) {
  return guarded([&] {
    cotasr::gradcheck::SuiteOptions opts;
    opts.instances = instances;
    opts.seed = seed;
    if (inject_fault != nullptr) opts.inject_fault = inject_fault;
    const auto results = cotasr::gradcheck::run_suite(opts);
    bool ok = true;
    for (const auto& r : results) ok = ok && r.passed;
    if (all_passed != nullptr) *all_passed = ok ? 1 : 0;
    if (table_out != nullptr) *table_out = dup_string(cotasr::gradcheck::format_table(results));
  });
}

cotasr_status cotasr_ablate(const cotasr_config* cfg, const char* out_dir,
                            cotasr_progress_callback progress, void* user, char** table_out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(out_dir, "out_dir");
    const auto& rc = cfg->cfg;
    rc.validate();
    const auto lexicon = cotasr::pipeline::lexicon_for(rc);
    auto train_cfg = rc.corpus_config();
    train_cfg.n_utterances = rc.ablate_train_n;
    auto test_cfg = train_cfg;
    test_cfg.seed = rc.ablate_test_seed;
    test_cfg.n_utterances = rc.ablate_test_n;
    test_cfg.id_prefix = "test";
    const auto train_set = cotasr::synth::synth_corpus(train_cfg, lexicon);
    const auto test_set = cotasr::synth::synth_corpus(test_cfg, lexicon);
    const auto rows = cotasr::pipeline::run_ablation(rc, train_set, test_set, [&](const std::string& m) {
      if (progress != nullptr) progress(m.c_str(), user);
    });
    std::filesystem::create_directories(out_dir);
    const std::string dir(out_dir);
    const std::string table = cotasr::pipeline::format_ablation(rows, true);
    write_text(dir + "/ablation.txt", table);
    write_text(dir + "/ablation_metrics.txt", cotasr::pipeline::format_ablation(rows, false));
    write_text(dir + "/ablation.json",
               cotasr::eval::report_to_json(cotasr::pipeline::ablation_report(rows)));
    write_text(dir + "/config.txt", rc.to_text());
    if (table_out != nullptr) *table_out = dup_string(table);
  });
}

}  // extern "C"
