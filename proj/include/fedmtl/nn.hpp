#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include "fedmtl/params.hpp"
#include "fedmtl/tensor.hpp"
#include "fedmtl/util.hpp"

// Differentiable layer kernel: 1-D valid convolution over time, LSTM,
// dense, softmax cross-entropy, and plain SGD. Gradients are hand-derived
// per layer and verified against central finite differences in the tests.
namespace fedmtl::nn {

// ---------------------------------------------------------------------------
// conv1d: input [T x C_in], weights [C_out x C_in x K], bias [C_out]
// output [T-K+1 x C_out]; valid (no padding) cross-correlation.
// ---------------------------------------------------------------------------

inline Tensor conv1d_forward(const Tensor& input, const Tensor& weights,
                             const Tensor& bias) {
  if (input.rank() != 2 || weights.rank() != 3 || bias.rank() != 1) {
    throw std::invalid_argument("conv1d: bad tensor ranks");
  }
  const std::size_t t_in = input.dim(0), c_in = input.dim(1);
  const std::size_t c_out = weights.dim(0), k = weights.dim(2);
  if (weights.dim(1) != c_in) {
    throw std::invalid_argument("conv1d: channel mismatch");
  }
  if (bias.dim(0) != c_out) {
    throw std::invalid_argument("conv1d: bias size mismatch");
  }
  if (t_in < k) {
    throw std::invalid_argument("conv1d: window shorter than kernel");
  }
  const std::size_t t_out = t_in - k + 1;
  Tensor out({t_out, c_out});
  for (std::size_t t = 0; t < t_out; ++t) {
    for (std::size_t o = 0; o < c_out; ++o) {
      double acc = bias(o);
      for (std::size_t c = 0; c < c_in; ++c) {
        for (std::size_t kk = 0; kk < k; ++kk) {
          acc += input(t + kk, c) * weights(o, c, kk);
        }
      }
      out(t, o) = acc;
    }
  }
  return out;
}

struct Conv1dGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

inline Conv1dGrads conv1d_backward(const Tensor& input, const Tensor& weights,
                                   const Tensor& grad_out) {
  const std::size_t t_in = input.dim(0), c_in = input.dim(1);
  const std::size_t c_out = weights.dim(0), k = weights.dim(2);
  const std::size_t t_out = t_in - k + 1;
  require_shape(grad_out, {t_out, c_out}, "conv1d_backward");
  Conv1dGrads g{Tensor({t_in, c_in}), Tensor({c_out, c_in, k}),
                Tensor({c_out})};
  for (std::size_t t = 0; t < t_out; ++t) {
    for (std::size_t o = 0; o < c_out; ++o) {
      const double go = grad_out(t, o);
      g.bias(o) += go;
      for (std::size_t c = 0; c < c_in; ++c) {
        for (std::size_t kk = 0; kk < k; ++kk) {
          g.weights(o, c, kk) += go * input(t + kk, c);
          g.input(t + kk, c) += go * weights(o, c, kk);
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// LSTM: seq [T x D], W [4H x D], U [4H x H], b [4H]; h_0 = c_0 = 0.
// Gate order in the 4H packing is (input, forget, cell, output); the
// checkpoint format documents the same layout.
// ---------------------------------------------------------------------------

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct LstmCache {
  Tensor input;         // T x D
  Tensor gate_i, gate_f, gate_g, gate_o;  // T x H each
  Tensor cell;          // T x H
  Tensor hidden;        // T x H
};

inline LstmCache lstm_forward(const Tensor& seq, const Tensor& w,
                              const Tensor& u, const Tensor& b) {
  if (seq.rank() != 2 || w.rank() != 2 || u.rank() != 2 || b.rank() != 1) {
    throw std::invalid_argument("lstm: bad tensor ranks");
  }
  const std::size_t t_len = seq.dim(0), d = seq.dim(1);
  if (t_len < 1) throw std::invalid_argument("lstm: empty sequence");
  const std::size_t h4 = w.dim(0);
  if (h4 % 4 != 0) throw std::invalid_argument("lstm: weight rows not 4*H");
  const std::size_t h = h4 / 4;
  if (w.dim(1) != d) throw std::invalid_argument("lstm: input size mismatch");
  require_shape(u, {h4, h}, "lstm U");
  require_shape(b, {h4}, "lstm b");

  LstmCache cache;
  cache.input = seq;
  cache.gate_i = Tensor({t_len, h});
  cache.gate_f = Tensor({t_len, h});
  cache.gate_g = Tensor({t_len, h});
  cache.gate_o = Tensor({t_len, h});
  cache.cell = Tensor({t_len, h});
  cache.hidden = Tensor({t_len, h});

  std::vector<double> z(h4);
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t r = 0; r < h4; ++r) {
      double acc = b(r);
      for (std::size_t c = 0; c < d; ++c) acc += w(r, c) * seq(t, c);
      if (t > 0) {
        for (std::size_t c = 0; c < h; ++c) {
          acc += u(r, c) * cache.hidden(t - 1, c);
        }
      }
      z[r] = acc;
    }
    for (std::size_t j = 0; j < h; ++j) {
      const double gi = sigmoid(z[j]);
      const double gf = sigmoid(z[h + j]);
      const double gg = std::tanh(z[2 * h + j]);
      const double go = sigmoid(z[3 * h + j]);
      const double c_prev = t > 0 ? cache.cell(t - 1, j) : 0.0;
      const double c_now = gf * c_prev + gi * gg;
      cache.gate_i(t, j) = gi;
      cache.gate_f(t, j) = gf;
      cache.gate_g(t, j) = gg;
      cache.gate_o(t, j) = go;
      cache.cell(t, j) = c_now;
      cache.hidden(t, j) = go * std::tanh(c_now);
    }
  }
  return cache;
}

struct LstmGrads {
  Tensor input;  // T x D
  Tensor w;      // 4H x D
  Tensor u;      // 4H x H
  Tensor b;      // 4H
};

/// Backpropagation through time. grad_hidden carries dLoss/dh_t for every
/// timestep (zeros where the loss does not read the hidden state).
inline LstmGrads lstm_backward(const LstmCache& cache, const Tensor& w,
                               const Tensor& u, const Tensor& grad_hidden) {
  const std::size_t t_len = cache.input.dim(0), d = cache.input.dim(1);
  const std::size_t h = cache.hidden.dim(1);
  const std::size_t h4 = 4 * h;
  require_shape(grad_hidden, {t_len, h}, "lstm_backward grad_hidden");

  LstmGrads g{Tensor({t_len, d}), Tensor({h4, d}), Tensor({h4, h}),
              Tensor({h4})};
  std::vector<double> dh(h, 0.0), dc(h, 0.0), dz(h4);
  for (std::size_t ti = t_len; ti-- > 0;) {
    for (std::size_t j = 0; j < h; ++j) {
      const double gi = cache.gate_i(ti, j);
      const double gf = cache.gate_f(ti, j);
      const double gg = cache.gate_g(ti, j);
      const double go = cache.gate_o(ti, j);
      const double c_now = cache.cell(ti, j);
      const double tanh_c = std::tanh(c_now);
      const double dh_total = grad_hidden(ti, j) + dh[j];
      const double dcell = dc[j] + dh_total * go * (1.0 - tanh_c * tanh_c);
      const double c_prev = ti > 0 ? cache.cell(ti - 1, j) : 0.0;
      dz[j] = dcell * gg * gi * (1.0 - gi);                  // input gate
      dz[h + j] = dcell * c_prev * gf * (1.0 - gf);          // forget gate
      dz[2 * h + j] = dcell * gi * (1.0 - gg * gg);          // cell candidate
      dz[3 * h + j] = dh_total * tanh_c * go * (1.0 - go);   // output gate
      dc[j] = dcell * gf;
    }
    for (std::size_t r = 0; r < h4; ++r) {
      const double dzr = dz[r];
      g.b(r) += dzr;
      for (std::size_t c = 0; c < d; ++c) {
        g.w(r, c) += dzr * cache.input(ti, c);
        g.input(ti, c) += dzr * w(r, c);
      }
    }
    if (ti > 0) {
      for (std::size_t r = 0; r < h4; ++r) {
        const double dzr = dz[r];
        for (std::size_t c = 0; c < h; ++c) {
          g.u(r, c) += dzr * cache.hidden(ti - 1, c);
        }
      }
      for (std::size_t c = 0; c < h; ++c) {
        double acc = 0.0;
        for (std::size_t r = 0; r < h4; ++r) acc += u(r, c) * dz[r];
        dh[c] = acc;
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// dense: x [D], weights [C x D], bias [C] -> logits [C]
// ---------------------------------------------------------------------------

inline Tensor dense_forward(const Tensor& x, const Tensor& weights,
                            const Tensor& bias) {
  if (x.rank() != 1 || weights.rank() != 2 || bias.rank() != 1) {
    throw std::invalid_argument("dense: bad tensor ranks");
  }
  const std::size_t d = x.dim(0), c_out = weights.dim(0);
  if (weights.dim(1) != d || bias.dim(0) != c_out) {
    throw std::invalid_argument("dense: shape mismatch");
  }
  Tensor out({c_out});
  for (std::size_t i = 0; i < c_out; ++i) {
    double acc = bias(i);
    for (std::size_t j = 0; j < d; ++j) acc += weights(i, j) * x(j);
    out(i) = acc;
  }
  return out;
}

struct DenseGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

inline DenseGrads dense_backward(const Tensor& x, const Tensor& weights,
                                 const Tensor& grad_out) {
  const std::size_t d = x.dim(0), c_out = weights.dim(0);
  require_shape(grad_out, {c_out}, "dense_backward");
  DenseGrads g{Tensor({d}), Tensor({c_out, d}), Tensor({c_out})};
  for (std::size_t i = 0; i < c_out; ++i) {
    const double go = grad_out(i);
    g.bias(i) = go;
    for (std::size_t j = 0; j < d; ++j) {
      g.weights(i, j) = go * x(j);
      g.input(j) += go * weights(i, j);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// softmax cross-entropy
// ---------------------------------------------------------------------------

inline Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 1 || logits.numel() == 0) {
    throw std::invalid_argument("softmax: expects a non-empty vector");
  }
  Tensor out({logits.dim(0)});
  const double m = *std::max_element(logits.data.begin(), logits.data.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.numel(); ++i) {
    out(i) = std::exp(logits(i) - m);
    sum += out(i);
  }
  for (std::size_t i = 0; i < logits.numel(); ++i) out(i) /= sum;
  return out;
}

struct CrossEntropy {
  double loss;
  Tensor grad_logits;
};

inline CrossEntropy softmax_cross_entropy(const Tensor& logits,
                                          std::size_t label) {
  if (logits.rank() != 1) {
    throw std::invalid_argument("cross_entropy: expects a vector");
  }
  const std::size_t c = logits.dim(0);
  if (label >= c) {
    throw std::invalid_argument("cross_entropy: label out of range");
  }
  const double m = *std::max_element(logits.data.begin(), logits.data.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < c; ++i) sum += std::exp(logits(i) - m);
  const double log_sum = std::log(sum);
  CrossEntropy r;
  r.loss = log_sum - (logits(label) - m);
  r.grad_logits = Tensor({c});
  for (std::size_t i = 0; i < c; ++i) {
    r.grad_logits(i) = std::exp(logits(i) - m) / sum;
  }
  r.grad_logits(label) -= 1.0;
  return r;
}

// ---------------------------------------------------------------------------
// SGD
// ---------------------------------------------------------------------------

/// p <- p - lr*g elementwise on tensors the mask marks trainable. Frozen
/// tensors are copied verbatim, so they stay bit-identical.
inline ParameterStore sgd_step(const ParameterStore& params,
                               const Gradients& grads, double lr,
                               const TrainMask& mask) {
  if (!(lr >= 0.0)) throw std::invalid_argument("sgd: negative learning rate");
  require_congruent(params, grads);
  require_mask_congruent(params, mask);
  ParameterStore out = params;
  for (auto& [name, entry] : out.entries) {
    if (!mask.at(name)) continue;
    const Tensor& g = grads.at(name);
    for (std::size_t i = 0; i < entry.value.numel(); ++i) {
      entry.value(i) -= lr * g(i);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient check harness
// ---------------------------------------------------------------------------

/// Compares analytic gradients against central finite differences of the
/// loss closure. Samples at most max_coords coordinates per tensor (uniform,
/// without replacement) and returns the max relative error
/// |a - cd| / max(|a|, |cd|, 1e-8).
inline double gradient_check(
    const std::function<double(const ParameterStore&)>& loss,
    const ParameterStore& params, const Gradients& analytic, double eps,
    std::size_t max_coords = 200, std::uint64_t seed = 0) {
  if (eps < 1e-6 || eps > 1e-3) {
    throw std::invalid_argument("gradient_check: eps outside [1e-6, 1e-3]");
  }
  require_congruent(params, analytic);
  Rng rng(derive_seed(seed, "gradient_check"));
  ParameterStore work = params;
  double max_rel = 0.0;
  for (auto& [name, entry] : work.entries) {
    const std::size_t n = entry.value.numel();
    std::vector<std::size_t> coords(n);
    for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    if (n > max_coords) {
      rng.shuffle(coords);
      coords.resize(max_coords);
    }
    for (std::size_t idx : coords) {
      const double saved = entry.value(idx);
      entry.value(idx) = saved + eps;
      const double up = loss(work);
      entry.value(idx) = saved - eps;
      const double down = loss(work);
      entry.value(idx) = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw std::runtime_error("gradient_check: non-finite loss");
      }
      const double cd = (up - down) / (2.0 * eps);
      const double a = analytic.at(name)(idx);
      const double denom = std::max({std::fabs(a), std::fabs(cd), 1e-8});
      max_rel = std::max(max_rel, std::fabs(a - cd) / denom);
    }
  }
  return max_rel;
}

}  // namespace fedmtl::nn
