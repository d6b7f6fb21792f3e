#include "cotasr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

#include "cotasr/adapter.hpp"
#include "cotasr/ctc.hpp"
#include "cotasr/decoder.hpp"
#include "cotasr/encoder.hpp"
#include "cotasr/errors.hpp"
#include "cotasr/model.hpp"
#include "cotasr/train.hpp"

namespace cotasr::gradcheck {

namespace {

using Tensors = std::vector<Matrix*>;

std::vector<double> flatten(const Tensors& ts) {
  std::vector<double> out;
  for (const auto* t : ts) out.insert(out.end(), t->values().begin(), t->values().end());
  return out;
}

void unflatten(const Tensors& ts, std::span<const double> x) {
  std::size_t at = 0;
  for (auto* t : ts) {
    std::copy(x.begin() + static_cast<long>(at), x.begin() + static_cast<long>(at + t->size()),
              t->values().begin());
    at += t->size();
  }
}

// One instance: S holds every tensor the loss depends on.
template <class S>
struct Problem {
  S state;
  std::function<Tensors(S&)> tensors;
  std::function<double(const S&)> loss;
  std::function<std::vector<double>(const S&)> gradient;  // same order as tensors
};

template <class S>
std::pair<double, std::size_t> run(Problem<S> p, double eps, bool fault) {
  const std::vector<double> x = flatten(p.tensors(p.state));
  std::vector<double> analytic = p.gradient(p.state);
  if (analytic.size() != x.size()) throw InvariantError("gradcheck: gradient size mismatch");
  if (fault)
    for (double& g : analytic) g = -g;
  auto f = [&](std::span<const double> v) {
    S s = p.state;
    unflatten(p.tensors(s), v);
    return p.loss(s);
  };
  return {grad_check(f, analytic, x, eps).max_rel_error, x.size()};
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return static_cast<std::size_t>(
      rng.between(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
}

double weighted_sum(const Matrix& w, const Matrix& m) {
  double s = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) s += w.data()[i] * m.data()[i];
  return s;
}

ctc::Target feasible_target(Rng& rng, std::size_t frames, std::size_t vocab,
                            std::size_t max_len) {
  for (;;) {
    ctc::Target t(pick(rng, 0, max_len));
    for (auto& v : t) v = static_cast<int>(rng.below(vocab));
    if (ctc::min_frames(t) <= frames) return t;
  }
}

// Thresholding is a step function; keep probes away from the edge.
bool near_threshold(const Matrix& p, double tau) {
  return std::any_of(p.values().begin(), p.values().end(),
                     [&](double v) { return std::abs(v - tau) < 1e-3; });
}

template <class P>
void append_grads(std::vector<double>& out, P& params, std::string_view prefix) {
  visit_params(params, prefix, [&](const std::string&, const Matrix& t) {
    out.insert(out.end(), t.values().begin(), t.values().end());
  });
}

template <class P>
void append_tensors(Tensors& out, P& params, std::string_view prefix) {
  visit_params(params, prefix, [&](const std::string&, Matrix& t) { out.push_back(&t); });
}

// ---------------------------------------------------------------------------

std::pair<double, std::size_t> ctc_instance(Rng& rng, const SuiteOptions& o, bool fault) {
  struct S {
    Matrix blank, nonblank;
    ctc::Target target;
  };
  const std::size_t T = pick(rng, 1, 6), V = pick(rng, 2, 3);
  Problem<S> p;
  p.state.blank = random_normal(T, 1, 2.0, rng);
  p.state.nonblank = random_normal(T, V, 2.0, rng);
  p.state.target = feasible_target(rng, T, V, 3);
  p.tensors = [](S& s) { return Tensors{&s.blank, &s.nonblank}; };
  p.loss = [](const S& s) {
    return ctc::loss_and_grad(s.blank.values(), s.nonblank, s.target).loss;
  };
  p.gradient = [](const S& s) {
    const auto r = ctc::loss_and_grad(s.blank.values(), s.nonblank, s.target);
    std::vector<double> g = r.grad_blank;
    g.insert(g.end(), r.grad_nonblank.values().begin(), r.grad_nonblank.values().end());
    return g;
  };
  return run(std::move(p), o.eps, fault);
}

std::pair<double, std::size_t> ce_instance(Rng& rng, const SuiteOptions& o, bool fault) {
  struct S {
    Matrix logits;
    std::vector<TokenId> targets;
    std::vector<unsigned char> mask;
  };
  const std::size_t n = pick(rng, 1, 4), V = pick(rng, 2, 5);
  Problem<S> p;
  p.state.logits = random_normal(n, V, 2.0, rng);
  for (std::size_t i = 0; i < n; ++i) {
    p.state.targets.push_back(static_cast<TokenId>(rng.below(V)));
    p.state.mask.push_back(rng.bernoulli(0.7) ? 1 : 0);
  }
  p.state.mask[rng.below(n)] = 1;
  p.tensors = [](S& s) { return Tensors{&s.logits}; };
  p.loss = [](const S& s) { return model::ce_loss(s.logits, s.targets, s.mask); };
  p.gradient = [](const S& s) {
    Matrix g;
    model::ce_loss_and_grad(s.logits, s.targets, s.mask, g);
    return std::vector<double>(g.values().begin(), g.values().end());
  };
  return run(std::move(p), o.eps, fault);
}

std::pair<double, std::size_t> adapter_instance(Rng& rng, const SuiteOptions& o, bool fault) {
  struct S {
    Matrix frames, embedding, weights;
    adapter::CtcAdapterParams params;
    adapter::CtcAdapterOptions options;
    ctc::Target target;
  };
  const std::size_t L = pick(rng, 1, 3), d_enc = 3, V = 3, D = 4, hidden = 5;
  Problem<S> p;
  for (;;) {
    p.state.frames = random_normal(L, d_enc, 1.0, rng);
    p.state.embedding = random_normal(V, D, 1.0, rng);
    p.state.params = adapter::CtcAdapterParams::random(d_enc, hidden, V, D, rng);
    p.state.options.tau = 0.05;
    p.state.options.renormalize = rng.bernoulli(0.25);
    const auto out = adapter::ctc_adapter_forward(p.state.frames, p.state.embedding,
                                                  p.state.params, p.state.options);
    if (!near_threshold(out.posteriors.nonblank, p.state.options.tau)) break;
  }
  p.state.weights = random_normal(L, D, 1.0, rng);
  p.state.target = feasible_target(rng, L, V, 2);
  p.tensors = [](S& s) {
    Tensors t{&s.frames, &s.embedding};
    append_tensors(t, s.params, "a");
    return t;
  };
  p.loss = [](const S& s) {
    const auto out = adapter::ctc_adapter_forward(s.frames, s.embedding, s.params, s.options);
    return weighted_sum(s.weights, out.prompt) +
           0.5 * ctc::loss_and_grad(out.blank_logits, out.nonblank_logits, s.target).loss;
  };
  p.gradient = [](const S& s) {
    adapter::CtcAdapterCache cache;
    const auto out =
        adapter::ctc_adapter_forward(s.frames, s.embedding, s.params, s.options, &cache);
    auto c = ctc::loss_and_grad(out.blank_logits, out.nonblank_logits, s.target);
    for (double& g : c.grad_blank) g *= 0.5;
    scale_inplace(c.grad_nonblank, 0.5);
    auto gp = adapter::CtcAdapterParams::zeros(s.frames.cols(), s.params.out_proj.hidden(),
                                               s.params.vocab(), s.params.d_model());
    Matrix gemb(s.embedding.rows(), s.embedding.cols());
    const Matrix dframes = adapter::ctc_adapter_backward(cache, s.embedding, s.params, s.weights,
                                                         c.grad_blank, c.grad_nonblank, gp, gemb);
    std::vector<double> g(dframes.values().begin(), dframes.values().end());
    g.insert(g.end(), gemb.values().begin(), gemb.values().end());
    append_grads(g, gp, "a");
    return g;
  };
  return run(std::move(p), o.eps, fault);
}

std::pair<double, std::size_t> linear_adapter_instance(Rng& rng, const SuiteOptions& o,
                                                       bool fault) {
  struct S {
    Matrix frames, weights;
    adapter::LinearAdapterParams params;
  };
  const std::size_t L = pick(rng, 1, 4), d_enc = 3, D = 4, hidden = 5;
  Problem<S> p;
  p.state.frames = random_normal(L, d_enc, 1.0, rng);
  p.state.params = adapter::LinearAdapterParams::random(d_enc, hidden, D, rng);
  p.state.weights = random_normal(L, D, 1.0, rng);
  p.tensors = [](S& s) {
    Tensors t{&s.frames};
    append_tensors(t, s.params, "a");
    return t;
  };
  p.loss = [](const S& s) {
    return weighted_sum(s.weights, adapter::linear_adapter_forward(s.frames, s.params));
  };
  p.gradient = [](const S& s) {
    FeedForwardCache cache;
    adapter::linear_adapter_forward(s.frames, s.params, &cache);
    adapter::LinearAdapterParams gp{FeedForward::zeros(s.params.proj.in(), s.params.proj.hidden(),
                                                       s.params.proj.out())};
    const Matrix d = adapter::linear_adapter_backward(cache, s.params, s.weights, gp);
    std::vector<double> g(d.values().begin(), d.values().end());
    append_grads(g, gp, "a");
    return g;
  };
  return run(std::move(p), o.eps, fault);
}

std::pair<double, std::size_t> encoder_instance(Rng& rng, const SuiteOptions& o, bool fault) {
  struct S {
    Matrix features, weights;
    model::EncoderParams params;
  };
  const std::size_t window = pick(rng, 1, 3), stride = pick(rng, 1, 3);
  const std::size_t n = pick(rng, window, 9), d_feat = 3, d_enc = 4;
  Problem<S> p;
  p.state.features = random_normal(n, d_feat, 1.0, rng);
  p.state.params = model::EncoderParams::random(d_feat, d_enc, window, stride, 2, rng);
  // Make the residual blocks matter for the check.
  for (auto& b : p.state.params.blocks) scale_inplace(b.second.weight, 5.0);
  p.state.weights = random_normal(model::encoded_length(n, stride), d_enc, 1.0, rng);
  p.tensors = [](S& s) {
    Tensors t{&s.features};
    append_tensors(t, s.params, "e");
    return t;
  };
  p.loss = [](const S& s) { return weighted_sum(s.weights, model::encode(s.features, s.params)); };
  p.gradient = [](const S& s) {
    model::EncoderCache cache;
    model::encode(s.features, s.params, &cache);
    model::EncoderParams gp = s.params;
    visit_params(gp, "e", [](const std::string&, Matrix& t) { t.fill(0.0); });
    const Matrix d = model::encode_backward(cache, s.params, s.weights, gp);
    std::vector<double> g(d.values().begin(), d.values().end());
    append_grads(g, gp, "e");
    return g;
  };
  return run(std::move(p), o.eps, fault);
}

std::pair<double, std::size_t> decoder_instance(Rng& rng, const SuiteOptions& o, bool fault) {
  struct S {
    Matrix inputs, weights;
    model::DecoderParams params;
  };
  const std::size_t n = pick(rng, 1, 5), D = 8, V = 5;
  Problem<S> p;
  p.state.params = model::DecoderParams::random(V, D, pick(rng, 1, 2), 2, rng);
  for (auto& b : p.state.params.blocks) {
    // Non-trivial norm parameters so their gradients are exercised.
    for (double& v : b.norm_attn.gain.values()) v += 0.3 * rng.normal();
    for (double& v : b.norm_ff.bias.values()) v += 0.3 * rng.normal();
  }
  p.state.inputs = random_normal(n, D, 1.0, rng);
  p.state.weights = random_normal(n, V, 1.0, rng);
  p.tensors = [](S& s) {
    Tensors t{&s.inputs};
    append_tensors(t, s.params, "d");
    return t;
  };
  p.loss = [](const S& s) {
    return weighted_sum(s.weights, model::lm_next_token_logits(s.inputs, s.params));
  };
  p.gradient = [](const S& s) {
    model::DecoderCache cache;
    const Matrix hidden = model::decoder_forward(s.inputs, s.params, &cache);
    model::DecoderParams gp = s.params;
    visit_params(gp, "d", [](const std::string&, Matrix& t) { t.fill(0.0); });
    matmul_tn_acc(s.weights, hidden, gp.embedding);
    const Matrix d_hidden = matmul(s.weights, s.params.embedding);
    const Matrix d = model::decoder_backward(cache, s.params, d_hidden, gp);
    std::vector<double> g(d.values().begin(), d.values().end());
    append_grads(g, gp, "d");
    return g;
  };
  return run(std::move(p), o.eps, fault);
}

std::pair<double, std::size_t> joint_instance(Rng& rng, const SuiteOptions& o, bool fault) {
  struct S {
    model::CotAsrModel model;
    train::Example example;
    double lambda = 0.5;
  };
  model::ModelConfig mc;
  mc.vocab = 5;
  mc.d_feat = 2;
  mc.d_enc = 3;
  mc.d_model = 8;
  mc.heads = 2;
  mc.decoder_blocks = 1;
  mc.encoder_window = 2;
  mc.encoder_stride = 2;
  mc.encoder_blocks = 1;
  mc.adapter_hidden = 4;
  mc.adapter_kind = rng.bernoulli(0.8) ? adapter::Kind::CtcGuided : adapter::Kind::Linear;
  Problem<S> p;
  for (;;) {
    p.state.model = model::CotAsrModel::create(mc, rng.uniform() * 1e9);
    p.state.example.features = random_normal(pick(rng, 2, 8), mc.d_feat, 1.0, rng);
    const auto sp = model::speech_prompt(p.state.model, p.state.example.features);
    if (!sp.has_ctc || !near_threshold(sp.posteriors.nonblank, mc.ctc_options.tau)) break;
  }
  const std::size_t L = model::encoded_length(p.state.example.features.rows(), mc.encoder_stride);
  p.state.example.id = "micro";
  p.state.example.instruction = {static_cast<TokenId>(rng.below(5))};
  p.state.example.ctc_target = feasible_target(rng, L, 5, 3);
  p.state.example.target.resize(pick(rng, 1, 4));
  for (auto& t : p.state.example.target) t = static_cast<TokenId>(rng.below(5));
  p.tensors = [](S& s) {
    Tensors t;
    model::visit_params(s.model, [&](const std::string&, Matrix& m) { t.push_back(&m); });
    return t;
  };
  p.loss = [](const S& s) {
    return train::forward_backward(s.model, s.example, s.lambda, nullptr).joint;
  };
  p.gradient = [](const S& s) {
    model::CotAsrModel g = s.model.zeros_like();
    train::forward_backward(s.model, s.example, s.lambda, &g);
    std::vector<double> out;
    model::visit_params(g, [&](const std::string&, const Matrix& m) {
      out.insert(out.end(), m.values().begin(), m.values().end());
    });
    return out;
  };
  return run(std::move(p), o.eps, fault);
}

using InstanceFn = std::pair<double, std::size_t> (*)(Rng&, const SuiteOptions&, bool);

struct Entry {
  const char* name;
  InstanceFn fn;
};

constexpr Entry kEntries[] = {
    {"ctc", ctc_instance},
    {"ce", ce_instance},
    {"adapter", adapter_instance},
    {"linear_adapter", linear_adapter_instance},
    {"encoder", encoder_instance},
    {"decoder", decoder_instance},
    {"joint", joint_instance},
};

}  // namespace

const std::vector<std::string>& components() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& e : kEntries) out.emplace_back(e.name);
    return out;
  }();
  return names;
}

ComponentResult check_component(const std::string& name, const SuiteOptions& options) {
  if (options.instances == 0) throw InputError("gradcheck: instances must be >= 1");
  for (std::size_t c = 0; c < std::size(kEntries); ++c) {
    if (name != kEntries[c].name) continue;
    ComponentResult res;
    res.component = name;
    res.tolerance = options.tolerance;
    const bool fault = options.inject_fault && *options.inject_fault == name;
    for (std::size_t k = 0; k < options.instances; ++k) {
      Rng rng(Rng::derive(Rng::derive(options.seed, c), k));
      const auto [err, coords] = kEntries[c].fn(rng, options, fault);
      res.max_rel_error = std::max(res.max_rel_error, err);
      res.parameters += coords;
      ++res.instances;
    }
    res.passed = res.max_rel_error <= options.tolerance;
    return res;
  }
  throw InputError("gradcheck: unknown component '" + name + "'");
}

std::vector<ComponentResult> run_suite(const SuiteOptions& options) {
  if (options.inject_fault) {
    const auto& names = components();
    if (std::find(names.begin(), names.end(), *options.inject_fault) == names.end()) {
      throw InputError("gradcheck: unknown component '" + *options.inject_fault + "'");
    }
  }
  std::vector<ComponentResult> out;
  for (const auto& name : components()) out.push_back(check_component(name, options));
  return out;
}

std::string format_table(const std::vector<ComponentResult>& results) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %9s %8s %14s %10s  %s\n", "component", "instances",
                "coords", "max_rel_error", "tolerance", "result");
  out << line;
  for (const auto& r : results) {
    std::snprintf(line, sizeof line, "%-16s %9zu %8zu %14.3e %10.1e  %s\n", r.component.c_str(),
                  r.instances, r.parameters, r.max_rel_error, r.tolerance,
                  r.passed ? "PASS" : "FAIL");
    out << line;
  }
  return out.str();
}

}  // namespace cotasr::gradcheck
