#include "cotasr/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cotasr/errors.hpp"

namespace cotasr::model {

namespace {

constexpr double kNormEps = 1e-5;
constexpr double kRopeBase = 10000.0;

void norm_row(std::span<const double> x, const LayerNormParams& p, std::span<double> y,
              std::span<double> normalized, double& inv_std) {
  const std::size_t d = x.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(d);
  inv_std = 1.0 / std::sqrt(var + kNormEps);
  for (std::size_t j = 0; j < d; ++j) {
    normalized[j] = (x[j] - mean) * inv_std;
    y[j] = normalized[j] * p.gain(0, j) + p.bias(0, j);
  }
}

Matrix norm_forward(const Matrix& x, const LayerNormParams& p, LayerNormCache* cache) {
  Matrix y(x.rows(), x.cols());
  Matrix normalized(x.rows(), x.cols());
  std::vector<double> inv(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i)
    norm_row(x.row(i), p, y.row(i), normalized.row(i), inv[i]);
  if (cache != nullptr) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv);
  }
  return y;
}

Matrix norm_backward(const LayerNormCache& cache, const LayerNormParams& p, const Matrix& dy,
                     LayerNormParams& grad) {
  const std::size_t n = dy.rows(), d = dy.cols();
  Matrix dx(n, d);
  std::vector<double> dxhat(d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto xhat = cache.normalized.row(i);
    double mean_d = 0.0, mean_dx = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      grad.gain(0, j) += dy(i, j) * xhat[j];
      grad.bias(0, j) += dy(i, j);
      dxhat[j] = dy(i, j) * p.gain(0, j);
      mean_d += dxhat[j];
      mean_dx += dxhat[j] * xhat[j];
    }
    mean_d /= static_cast<double>(d);
    mean_dx /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j)
      dx(i, j) = cache.inv_std[i] * (dxhat[j] - mean_d - xhat[j] * mean_dx);
  }
  return dx;
}

struct Rope {
  std::vector<double> inv_freq;  // per rotated pair within a head

  explicit Rope(std::size_t head_dim) : inv_freq(head_dim / 2) {
    for (std::size_t i = 0; i < inv_freq.size(); ++i)
      inv_freq[i] = std::pow(kRopeBase, -2.0 * static_cast<double>(i) /
                                            static_cast<double>(head_dim));
  }

  // Rotates every head of one row at sequence position pos; sign = -1 undoes
  // the rotation (used for gradients).
  void apply(std::span<double> row, std::size_t heads, std::size_t pos, double sign) const {
    const std::size_t hd = row.size() / heads;
    for (std::size_t i = 0; i < inv_freq.size(); ++i) {
      const double angle = static_cast<double>(pos) * inv_freq[i];
      const double c = std::cos(angle), s = sign * std::sin(angle);
      for (std::size_t h = 0; h < heads; ++h) {
        double& x0 = row[h * hd + 2 * i];
        double& x1 = row[h * hd + 2 * i + 1];
        const double a = x0, b = x1;
        x0 = a * c - b * s;
        x1 = a * s + b * c;
      }
    }
  }
};

// Causal attention of one query row (absolute position pos) over key/value
// rows 0..pos for a single head. probs receives pos + 1 weights.
void attend(const double* q, const double* keys, const double* values, std::size_t pos,
            std::size_t stride, std::size_t head_offset, std::size_t head_dim, double* out,
            double* probs) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  for (std::size_t j = 0; j <= pos; ++j) {
    const double* k = keys + j * stride + head_offset;
    double acc = 0.0;
    for (std::size_t c = 0; c < head_dim; ++c) acc += q[head_offset + c] * k[c];
    probs[j] = acc * scale;
  }
  softmax_inplace(std::span<double>(probs, pos + 1));
  for (std::size_t c = 0; c < head_dim; ++c) out[head_offset + c] = 0.0;
  for (std::size_t j = 0; j <= pos; ++j) {
    const double* v = values + j * stride + head_offset;
    const double p = probs[j];
    for (std::size_t c = 0; c < head_dim; ++c) out[head_offset + c] += p * v[c];
  }
}

void check_heads(const DecoderParams& params) {
  const std::size_t d = params.d_model();
  if (params.heads == 0 || d % params.heads != 0 || (d / params.heads) % 2 != 0) {
    throw ConfigError("decoder: model dim " + std::to_string(d) + " must split into " +
                      std::to_string(params.heads) + " heads of even width");
  }
}

}  // namespace

LayerNormParams LayerNormParams::identity(std::size_t d) {
  return {Matrix(1, d, 1.0), Matrix(1, d, 0.0)};
}

DecoderParams DecoderParams::random(std::size_t vocab, std::size_t d_model,
                                    std::size_t num_blocks, std::size_t heads, Rng& rng) {
  DecoderParams p;
  p.heads = heads;
  p.embedding = random_normal(vocab, d_model, 1.0 / std::sqrt(static_cast<double>(d_model)), rng);
  const double out_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(num_blocks));
  for (std::size_t b = 0; b < num_blocks; ++b) {
    DecoderBlock blk;
    blk.norm_attn = LayerNormParams::identity(d_model);
    blk.query = Dense::random(d_model, d_model, rng);
    blk.key = Dense::random(d_model, d_model, rng);
    blk.value = Dense::random(d_model, d_model, rng);
    blk.output = Dense::random(d_model, d_model, rng);
    scale_inplace(blk.output.weight, out_scale);
    blk.norm_ff = LayerNormParams::identity(d_model);
    blk.ff = FeedForward::random(d_model, 4 * d_model, d_model, rng);
    scale_inplace(blk.ff.second.weight, out_scale);
    p.blocks.push_back(std::move(blk));
  }
  check_heads(p);
  return p;
}

Matrix decoder_forward(const Matrix& inputs, const DecoderParams& params, DecoderCache* cache) {
  check_heads(params);
  const std::size_t n = inputs.rows(), d = params.d_model(), heads = params.heads;
  if (inputs.cols() != d) throw DimensionError("decoder: input width mismatch");
  const std::size_t hd = d / heads;
  const Rope rope(hd);
  if (cache != nullptr) cache->blocks.assign(params.blocks.size(), {});

  Matrix x = inputs;
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    const DecoderBlock& blk = params.blocks[b];
    DecoderBlockCache local;
    DecoderBlockCache& c = cache ? cache->blocks[b] : local;
    c.input = x;
    c.attn_in = norm_forward(x, blk.norm_attn, &c.norm_attn);
    c.q = blk.query.forward(c.attn_in);
    c.k = blk.key.forward(c.attn_in);
    c.v = blk.value.forward(c.attn_in);
    for (std::size_t i = 0; i < n; ++i) {
      rope.apply(c.q.row(i), heads, i, 1.0);
      rope.apply(c.k.row(i), heads, i, 1.0);
    }
    c.attn_concat = Matrix(n, d);
    if (cache != nullptr) c.probs.assign(heads, Matrix(n, n));
    std::vector<double> scratch(n);
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        double* probs = cache ? c.probs[h].row(i).data() : scratch.data();
        attend(c.q.row(i).data(), c.k.data(), c.v.data(), i, d, h * hd, hd,
               c.attn_concat.row(i).data(), probs);
      }
    }
    add_inplace(x, blk.output.forward(c.attn_concat));
    c.mid = x;
    const Matrix ff_in = norm_forward(x, blk.norm_ff, &c.norm_ff);
    add_inplace(x, blk.ff.forward(ff_in, &c.ff));
  }
  if (cache != nullptr) cache->hidden = x;
  return x;
}

Matrix tied_logits(const Matrix& hidden, const DecoderParams& params, std::size_t first) {
  if (first > hidden.rows()) throw DimensionError("tied_logits: first row out of range");
  Matrix rows(hidden.rows() - first, hidden.cols());
  for (std::size_t i = first; i < hidden.rows(); ++i) {
    const auto src = hidden.row(i);
    std::copy(src.begin(), src.end(), rows.row(i - first).begin());
  }
  return matmul_nt(rows, params.embedding);
}

Matrix decoder_backward(const DecoderCache& cache, const DecoderParams& params,
                        const Matrix& d_hidden, DecoderParams& grad) {
  if (cache.blocks.size() != params.blocks.size()) {
    throw StateError("decoder backward called without a forward cache");
  }
  const std::size_t d = params.d_model(), heads = params.heads, hd = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const Rope rope(hd);
  Matrix dx = d_hidden;
  for (std::size_t b = params.blocks.size(); b-- > 0;) {
    const DecoderBlock& blk = params.blocks[b];
    DecoderBlock& g = grad.blocks[b];
    const DecoderBlockCache& c = cache.blocks[b];
    const std::size_t n = c.input.rows();

    // x = mid + ff(norm_ff(mid))
    const Matrix d_ff_in = blk.ff.backward(c.ff, dx, g.ff);
    add_inplace(dx, norm_backward(c.norm_ff, blk.norm_ff, d_ff_in, g.norm_ff));

    // mid = input + output(attention(norm_attn(input)))
    const Matrix d_concat = blk.output.backward(c.attn_concat, dx, g.output);
    Matrix dq(n, d), dk(n, d), dv(n, d);
    std::vector<double> dp(n);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * hd;
      for (std::size_t i = 0; i < n; ++i) {
        const auto probs = c.probs[h].row(i);
        const double* dout = d_concat.row(i).data() + off;
        double inner = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          const double* v = c.v.row(j).data() + off;
          double acc = 0.0;
          for (std::size_t cc = 0; cc < hd; ++cc) acc += dout[cc] * v[cc];
          dp[j] = acc;
          inner += acc * probs[j];
          double* dvr = dv.row(j).data() + off;
          for (std::size_t cc = 0; cc < hd; ++cc) dvr[cc] += probs[j] * dout[cc];
        }
        const double* q = c.q.row(i).data() + off;
        double* dqr = dq.row(i).data() + off;
        for (std::size_t j = 0; j <= i; ++j) {
          const double ds = probs[j] * (dp[j] - inner) * scale;
          if (ds == 0.0) continue;
          const double* k = c.k.row(j).data() + off;
          double* dkr = dk.row(j).data() + off;
          for (std::size_t cc = 0; cc < hd; ++cc) {
            dqr[cc] += ds * k[cc];
            dkr[cc] += ds * q[cc];
          }
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      rope.apply(dq.row(i), heads, i, -1.0);
      rope.apply(dk.row(i), heads, i, -1.0);
    }
    Matrix d_attn_in = blk.query.backward(c.attn_in, dq, g.query);
    add_inplace(d_attn_in, blk.key.backward(c.attn_in, dk, g.key));
    add_inplace(d_attn_in, blk.value.backward(c.attn_in, dv, g.value));
    add_inplace(dx, norm_backward(c.norm_attn, blk.norm_attn, d_attn_in, g.norm_attn));
  }
  return dx;
}

DecoderState::DecoderState(const DecoderParams& params)
    : params_(&params), keys_(params.blocks.size()), values_(params.blocks.size()) {
  check_heads(params);
}

Matrix DecoderState::append(const Matrix& inputs) {
  const DecoderParams& params = *params_;
  const std::size_t m = inputs.rows(), d = params.d_model(), heads = params.heads;
  if (inputs.cols() != d) throw DimensionError("decoder: input width mismatch");
  const std::size_t hd = d / heads;
  const Rope rope(hd);
  const std::size_t start = length_;
  const std::size_t total = start + m;

  Matrix x = inputs;
  std::vector<double> probs(total);
  LayerNormCache unused;
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    const DecoderBlock& blk = params.blocks[b];
    const Matrix attn_in = norm_forward(x, blk.norm_attn, &unused);
    Matrix q = blk.query.forward(attn_in);
    Matrix k = blk.key.forward(attn_in);
    const Matrix v = blk.value.forward(attn_in);
    for (std::size_t i = 0; i < m; ++i) {
      rope.apply(q.row(i), heads, start + i, 1.0);
      rope.apply(k.row(i), heads, start + i, 1.0);
    }
    keys_[b].insert(keys_[b].end(), k.values().begin(), k.values().end());
    values_[b].insert(values_[b].end(), v.values().begin(), v.values().end());
    Matrix concat(m, d);
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < m; ++i) {
        attend(q.row(i).data(), keys_[b].data(), values_[b].data(), start + i, d, h * hd, hd,
               concat.row(i).data(), probs.data());
      }
    }
    add_inplace(x, blk.output.forward(concat));
    const Matrix ff_in = norm_forward(x, blk.norm_ff, &unused);
    add_inplace(x, blk.ff.forward(ff_in));
  }
  length_ = total;
  return x;
}

Matrix lm_next_token_logits(const Matrix& inputs, const DecoderParams& params) {
  if (inputs.rows() == 0) throw DimensionError("lm_next_token_logits: empty prefix");
  return tied_logits(decoder_forward(inputs, params), params);
}

}  // namespace cotasr::model
