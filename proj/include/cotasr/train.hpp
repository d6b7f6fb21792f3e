#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cotasr/ctc.hpp"
#include "cotasr/model.hpp"

namespace cotasr::train {

// cot: targets carry the context block before the transcript.
// plain: transcript block only.
enum class Mode { Cot, Plain };

struct TrainConfig {
  double lambda = 0.5;
  std::size_t stage1_steps = 300;
  std::size_t stage2_steps = 3000;
  double peak_lr = 5e-3;
  std::size_t warmup_steps = 100;
  std::size_t batch_size = 12;
  std::uint64_t seed = 42;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // Global gradient-norm clip; 0 disables.
  double clip_norm = 1.0;

  // Throws ConfigError on out-of-range values.
  void validate() const;
};

struct Example {
  std::string id;
  Matrix features;
  TokenSequence instruction;  // I, fed after the speech prompt
  TokenSequence target;       // decoder target y
  ctc::Target ctc_target;     // transcript characters only
};

Example make_example(std::string id, Matrix features, const std::string& context,
                     const std::string& transcript, Mode mode);

struct LossParts {
  double ce = 0.0;
  double ctc = 0.0;
  double joint = 0.0;
  std::size_t target_tokens = 0;
};

// Joint CE + lambda * CTC for one utterance (teacher forcing over
// [A; I; y]). With grad != nullptr, accumulates grad_scale * dLoss into it.
// The CTC term is skipped for linear adapters or lambda == 0.
LossParts forward_backward(const model::CotAsrModel& m, const Example& ex, double lambda,
                           model::CotAsrModel* grad, double grad_scale = 1.0);

// Linear warmup over `warmup` steps to `peak`, then linear decay towards 0
// at step `total`.
double learning_rate(std::size_t step, std::size_t total, std::size_t warmup, double peak);

// Adam with decoupled weight decay on weight matrices and embeddings
// (biases and norm parameters are not decayed).
class AdamW {
 public:
  AdamW(const model::CotAsrModel& shape, const TrainConfig& config);
  // Updates the parameters whose names satisfy `trainable`.
  void step(model::CotAsrModel& m, const model::CotAsrModel& grad, double lr,
            const std::function<bool(const std::string&)>& trainable);
  std::size_t steps_taken() const { return t_; }

 private:
  TrainConfig config_;
  model::CotAsrModel first_;
  model::CotAsrModel second_;
  std::size_t t_ = 0;
};

// Scales grad in place so its global L2 norm is at most max_norm; returns
// the pre-clip norm.
double clip_gradients(model::CotAsrModel& grad, double max_norm,
                      const std::function<bool(const std::string&)>& trainable);

struct LossRecord {
  std::size_t step = 0;  // global, 1-based
  int stage = 1;
  double lr = 0.0;
  double ce = 0.0;
  double ctc = 0.0;
  double joint = 0.0;
};

struct TrainResult {
  model::CotAsrModel model;
  std::vector<LossRecord> curve;
};

bool is_adapter_param(const std::string& name);

// Stage 1 updates only the adapter (encoder and decoder frozen); stage 2
// updates everything. Each stage has its own warmup/decay schedule and
// fresh optimizer state. Throws TrainingDivergedError on a non-finite loss
// (records up to that step have already been passed to on_step).
TrainResult train_two_stage(const std::vector<Example>& corpus, const TrainConfig& config,
                            const model::ModelConfig& model_config,
                            const std::function<void(const LossRecord&)>& on_step = {});

// Continues training an existing model (used by tests for the freeze and
// determinism contracts).
TrainResult train_two_stage(model::CotAsrModel init, const std::vector<Example>& corpus,
                            const TrainConfig& config,
                            const std::function<void(const LossRecord&)>& on_step = {});

// Mean of the last `window` joint losses of stage `stage` (or all if fewer).
double moving_average(const std::vector<LossRecord>& curve, int stage, std::size_t window,
                      bool from_end);

}  // namespace cotasr::train
