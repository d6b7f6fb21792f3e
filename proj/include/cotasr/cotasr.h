/* C interface to the cotasr library. All handles are opaque; every call
 * that can fail returns a cotasr_status and leaves a message retrievable
 * with cotasr_last_error() on the calling thread. Strings returned through
 * char** out-parameters are owned by the caller and released with
 * cotasr_string_free(). */
#ifndef COTASR_COTASR_H
#define COTASR_COTASR_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define COTASR_API __declspec(dllexport)
#else
#define COTASR_API __attribute__((visibility("default")))
#endif

typedef enum cotasr_status {
  COTASR_OK = 0,
  COTASR_ERR_CONFIG = 1,
  COTASR_ERR_IO = 2,
  COTASR_ERR_DIMENSION = 3,
  COTASR_ERR_NUMERICAL = 4,
  COTASR_ERR_DIVERGED = 5,
  COTASR_ERR_CHECKPOINT = 6,
  COTASR_ERR_VOCAB = 7,
  COTASR_ERR_INPUT = 8,
  COTASR_ERR_UNDEFINED_METRIC = 9,
  COTASR_ERR_INTERNAL = 10
} cotasr_status;

typedef struct cotasr_config cotasr_config;
typedef struct cotasr_corpus cotasr_corpus;
typedef struct cotasr_model cotasr_model;

typedef struct cotasr_step_record {
  size_t step;
  int stage;
  double lr;
  double ce;
  double ctc;
  double joint;
} cotasr_step_record;

typedef void (*cotasr_step_callback)(const cotasr_step_record* record, void* user);

COTASR_API const char* cotasr_version(void);
COTASR_API const char* cotasr_last_error(void);
COTASR_API const char* cotasr_status_name(cotasr_status status);
COTASR_API void cotasr_string_free(char* s);

/* Configuration: key = value settings with defaults for every key. */
COTASR_API cotasr_status cotasr_config_create(cotasr_config** out);
COTASR_API void cotasr_config_destroy(cotasr_config* cfg);
COTASR_API cotasr_status cotasr_config_set(cotasr_config* cfg, const char* key, const char* value);
COTASR_API cotasr_status cotasr_config_load_file(cotasr_config* cfg, const char* path);
COTASR_API cotasr_status cotasr_config_validate(const cotasr_config* cfg);
/* Full echo of the effective configuration. */
COTASR_API cotasr_status cotasr_config_text(const cotasr_config* cfg, char** out);
COTASR_API cotasr_status cotasr_config_write(const cotasr_config* cfg, const char* path);

/* Corpora. */
COTASR_API cotasr_status cotasr_corpus_synth(const cotasr_config* cfg, cotasr_corpus** out);
COTASR_API cotasr_status cotasr_corpus_load(const char* dir, cotasr_corpus** out);
COTASR_API cotasr_status cotasr_corpus_save(const cotasr_corpus* corpus, const char* dir);
COTASR_API size_t cotasr_corpus_size(const cotasr_corpus* corpus);
COTASR_API void cotasr_corpus_destroy(cotasr_corpus* corpus);
/* Writes "id<TAB>context" lines with each utterance's reference context. */
COTASR_API cotasr_status cotasr_corpus_write_contexts(const cotasr_corpus* corpus, const char* path);

/* Models. on_step may be NULL. On divergence the callback has already seen
 * every completed step and COTASR_ERR_DIVERGED is returned. */
COTASR_API cotasr_status cotasr_model_train(const cotasr_config* cfg, const cotasr_corpus* corpus,
                                            cotasr_step_callback on_step, void* user,
                                            cotasr_model** out);
COTASR_API cotasr_status cotasr_model_save(const cotasr_model* model, const char* path);
COTASR_API cotasr_status cotasr_model_load(const char* path, cotasr_model** out);
COTASR_API size_t cotasr_model_parameter_count(const cotasr_model* model);
COTASR_API void cotasr_model_destroy(cotasr_model* model);

/* Decodes every utterance and writes one JSON record per line to out_path.
 * user_context_file (may be NULL) switches to user-guided mode; the
 * config's context_error_rate corrupts those contexts. */
COTASR_API cotasr_status cotasr_transcribe(const cotasr_config* cfg, const cotasr_model* model,
                                           const cotasr_corpus* corpus,
                                           const char* user_context_file, const char* out_path);

/* Scores a transcript file against the corpus. bias_list_file and
 * report_path may be NULL; homophone_only restricts to that subset.
 * table_out receives the formatted table. */
COTASR_API cotasr_status cotasr_score(const cotasr_corpus* corpus, const char* records_path,
                                      const char* bias_list_file, int homophone_only,
                                      const char* report_path, char** table_out);

/* Runs the finite-difference suite. inject_fault names a component whose
 * analytic gradient is negated (NULL for none). all_passed is set to 0/1. */
COTASR_API cotasr_status cotasr_gradcheck(size_t instances, unsigned long long seed,
                                          const char* inject_fault, char** table_out,
                                          int* all_passed);

/* Trains and decodes the four mode x adapter systems. Synthesizes the
 * train and test corpora from cfg (train_n / test_n / test_seed). Writes
 * ablation.txt and ablation.json into out_dir. progress may be NULL. */
typedef void (*cotasr_progress_callback)(const char* message, void* user);
COTASR_API cotasr_status cotasr_ablate(const cotasr_config* cfg, const char* out_dir,
                                       cotasr_progress_callback progress, void* user,
                                       char** table_out);

#ifdef __cplusplus
}
#endif

#endif
