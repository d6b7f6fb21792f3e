#include "cotasr/train.hpp"

#include <cmath>
#include <numeric>

#include "cotasr/cot.hpp"
#include "cotasr/errors.hpp"

namespace cotasr::train {

void TrainConfig::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (!(peak_lr > 0.0)) throw ConfigError("peak_lr must be > 0");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (warmup_steps > stage1_steps + stage2_steps) {
    throw ConfigError("warmup_steps exceeds total steps");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(clip_norm >= 0.0) || !(weight_decay >= 0.0)) {
    throw ConfigError("clip_norm and weight_decay must be >= 0");
  }
}

Example make_example(std::string id, Matrix features, const std::string& context,
                     const std::string& transcript, Mode mode) {
  Example ex;
  ex.id = std::move(id);
  ex.features = std::move(features);
  ex.instruction = cot::prompt_tokens(std::nullopt);
  ex.target = cot::build_target(context, transcript, mode == Mode::Cot);
  ex.ctc_target = Vocabulary::encode(transcript);
  return ex;
}

LossParts forward_backward(const model::CotAsrModel& m, const Example& ex, double lambda,
                           model::CotAsrModel* grad, double grad_scale) {
  if (ex.target.empty()) throw EmptyTargetError("example " + ex.id + " has an empty target");
  const auto& dec = m.decoder;
  model::SpeechCache speech_cache;
  const model::SpeechPrompt sp =
      model::speech_prompt(m, ex.features, grad ? &speech_cache : nullptr);
  const std::size_t L = sp.prompt.rows();
  const TokenSequence& instruction = ex.instruction;
  const std::size_t P = L + instruction.size();
  const std::size_t N = ex.target.size();
  const TokenSequence shifted(ex.target.begin(), ex.target.end() - 1);

  Matrix inputs(P + N - 1, dec.d_model());
  {
    auto dst = inputs.values().begin();
    dst = std::copy(sp.prompt.values().begin(), sp.prompt.values().end(), dst);
    const Matrix ins = model::embed(dec, instruction);
    dst = std::copy(ins.values().begin(), ins.values().end(), dst);
    const Matrix ys = model::embed(dec, shifted);
    std::copy(ys.values().begin(), ys.values().end(), dst);
  }

  model::DecoderCache dec_cache;
  const Matrix hidden = model::decoder_forward(inputs, dec, grad ? &dec_cache : nullptr);
  const Matrix logits = model::tied_logits(hidden, dec, P - 1);
  const std::vector<unsigned char> mask(N, 1);

  LossParts parts;
  parts.target_tokens = N;
  Matrix d_logits;
  parts.ce = grad ? model::ce_loss_and_grad(logits, ex.target, mask, d_logits)
                  : model::ce_loss(logits, ex.target, mask);

  const bool use_ctc = sp.has_ctc && lambda > 0.0;
  ctc::LossAndGrad ctc_part;
  if (use_ctc) {
    ctc_part = ctc::loss_and_grad(sp.blank_logits, sp.nonblank_logits, ex.ctc_target);
    parts.ctc = ctc_part.loss;
  }
  parts.joint = model::joint_loss(parts.ce, parts.ctc, lambda);
  if (grad == nullptr) return parts;

  scale_inplace(d_logits, grad_scale);
  // logits = hidden_rows * E^T
  Matrix hidden_rows(N, dec.d_model());
  std::copy(hidden.values().begin() + static_cast<long>((P - 1) * dec.d_model()),
            hidden.values().end(), hidden_rows.values().begin());
  matmul_tn_acc(d_logits, hidden_rows, grad->decoder.embedding);
  const Matrix d_rows = matmul(d_logits, dec.embedding);
  Matrix d_hidden(hidden.rows(), hidden.cols());
  std::copy(d_rows.values().begin(), d_rows.values().end(),
            d_hidden.values().begin() + static_cast<long>((P - 1) * dec.d_model()));

  const Matrix d_inputs = model::decoder_backward(dec_cache, dec, d_hidden, grad->decoder);
  model::embed_backward(instruction, d_inputs, L, grad->decoder.embedding);
  model::embed_backward(shifted, d_inputs, P, grad->decoder.embedding);

  Matrix d_prompt(L, dec.d_model());
  std::copy(d_inputs.values().begin(), d_inputs.values().begin() + static_cast<long>(L * dec.d_model()),
            d_prompt.values().begin());
  if (use_ctc) {
    const double s = lambda * grad_scale;
    for (double& g : ctc_part.grad_blank) g *= s;
    scale_inplace(ctc_part.grad_nonblank, s);
  }
  model::speech_prompt_backward(m, speech_cache, d_prompt, ctc_part.grad_blank,
                                ctc_part.grad_nonblank, *grad);
  return parts;
}

double learning_rate(std::size_t step, std::size_t total, std::size_t warmup, double peak) {
  if (step < warmup) return peak * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (total <= warmup) return peak;
  return peak * static_cast<double>(total - step) / static_cast<double>(total - warmup);
}

namespace {

bool decays(const std::string& name) {
  return name.ends_with(".weight") || name.ends_with(".embedding");
}

std::vector<Matrix*> tensors(model::CotAsrModel& m) {
  std::vector<Matrix*> out;
  model::visit_params(m, [&](const std::string&, Matrix& t) { out.push_back(&t); });
  return out;
}

std::vector<const Matrix*> tensors(const model::CotAsrModel& m) {
  std::vector<const Matrix*> out;
  model::visit_params(m, [&](const std::string&, const Matrix& t) { out.push_back(&t); });
  return out;
}

std::vector<std::string> names(const model::CotAsrModel& m) {
  std::vector<std::string> out;
  model::visit_params(m, [&](const std::string& n, const Matrix&) { out.push_back(n); });
  return out;
}

}  // namespace

AdamW::AdamW(const model::CotAsrModel& shape, const TrainConfig& config)
    : config_(config), first_(shape.zeros_like()), second_(shape.zeros_like()) {}

void AdamW::step(model::CotAsrModel& m, const model::CotAsrModel& grad, double lr,
                 const std::function<bool(const std::string&)>& trainable) {
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const auto param_names = names(m);
  auto params = tensors(m);
  const auto grads = tensors(grad);
  auto m1 = tensors(first_);
  auto m2 = tensors(second_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!trainable(param_names[i])) continue;
    const bool decay = decays(param_names[i]) && config_.weight_decay > 0.0;
    double* p = params[i]->data();
    const double* g = grads[i]->data();
    double* mo = m1[i]->data();
    double* ve = m2[i]->data();
    for (std::size_t k = 0; k < params[i]->size(); ++k) {
      mo[k] = b1 * mo[k] + (1.0 - b1) * g[k];
      ve[k] = b2 * ve[k] + (1.0 - b2) * g[k] * g[k];
      const double mhat = mo[k] / c1;
      const double vhat = ve[k] / c2;
      if (decay) p[k] -= lr * config_.weight_decay * p[k];
      p[k] -= lr * mhat / (std::sqrt(vhat) + config_.adam_eps);
    }
  }
}

double clip_gradients(model::CotAsrModel& grad, double max_norm,
                      const std::function<bool(const std::string&)>& trainable) {
  double sq = 0.0;
  model::visit_params(grad, [&](const std::string& n, const Matrix& t) {
    if (!trainable(n)) return;
    for (double v : t.values()) sq += v * v;
  });
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    model::visit_params(grad, [&](const std::string& n, Matrix& t) {
      if (trainable(n)) scale_inplace(t, s);
    });
  }
  return norm;
}

bool is_adapter_param(const std::string& name) { return name.starts_with("adapter."); }

TrainResult train_two_stage(const std::vector<Example>& corpus, const TrainConfig& config,
                            const model::ModelConfig& model_config,
                            const std::function<void(const LossRecord&)>& on_step) {
  return train_two_stage(model::CotAsrModel::create(model_config, Rng::derive(config.seed, 1)),
                         corpus, config, on_step);
}

TrainResult train_two_stage(model::CotAsrModel init, const std::vector<Example>& corpus,
                            const TrainConfig& config,
                            const std::function<void(const LossRecord&)>& on_step) {
  config.validate();
  if (corpus.empty()) throw InputError("training corpus is empty");
  TrainResult result;
  result.model = std::move(init);
  model::CotAsrModel& m = result.model;
  const bool has_ctc = m.config.adapter_kind == adapter::Kind::CtcGuided;
  const double lambda = has_ctc ? config.lambda : 0.0;

  // Deterministic epoch-wise shuffling.
  Rng order_rng(Rng::derive(config.seed, 2));
  std::vector<std::size_t> order(corpus.size());
  std::size_t cursor = order.size();
  auto next_index = [&]() {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);
      cursor = 0;
    }
    return order[cursor++];
  };

  std::size_t global_step = 0;
  for (int stage = 1; stage <= 2; ++stage) {
    const std::size_t steps = stage == 1 ? config.stage1_steps : config.stage2_steps;
    if (steps == 0) continue;
    const std::function<bool(const std::string&)> trainable =
        stage == 1 ? std::function<bool(const std::string&)>(is_adapter_param)
                   : [](const std::string&) { return true; };
    AdamW opt(m, config);
    const std::size_t warmup = std::min(config.warmup_steps, steps);
    for (std::size_t s = 0; s < steps; ++s) {
      ++global_step;
      model::CotAsrModel grad = m.zeros_like();
      LossRecord rec;
      rec.step = global_step;
      rec.stage = stage;
      const double scale = 1.0 / static_cast<double>(config.batch_size);
      try {
        for (std::size_t b = 0; b < config.batch_size; ++b) {
          const LossParts parts = forward_backward(m, corpus[next_index()], lambda, &grad, scale);
          rec.ce += parts.ce * scale;
          rec.ctc += parts.ctc * scale;
          rec.joint += parts.joint * scale;
        }
      } catch (const NumericalError&) {
        // Overflowing activations are divergence, not a data problem.
        throw TrainingDivergedError(global_step);
      }
      if (!std::isfinite(rec.joint)) throw TrainingDivergedError(global_step);
      clip_gradients(grad, config.clip_norm, trainable);
      rec.lr = learning_rate(s, steps, warmup, config.peak_lr);
      opt.step(m, grad, rec.lr, trainable);
      bool finite = true;
      model::visit_params(m, [&](const std::string&, const Matrix& t) {
        if (finite && !t.all_finite()) finite = false;
      });
      if (!finite) throw TrainingDivergedError(global_step);
      result.curve.push_back(rec);
      if (on_step) on_step(rec);
    }
  }
  return result;
}

double moving_average(const std::vector<LossRecord>& curve, int stage, std::size_t window,
                      bool from_end) {
  std::vector<double> xs;
  for (const auto& r : curve)
    if (r.stage == stage) xs.push_back(r.joint);
  if (xs.empty()) return 0.0;
  const std::size_t n = std::min(window, xs.size());
  const auto begin = from_end ? xs.end() - static_cast<long>(n) : xs.begin();
  return std::accumulate(begin, begin + static_cast<long>(n), 0.0) / static_cast<double>(n);
}

}  // namespace cotasr::train
