#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "safnet/neuron.hpp"
#include "safnet/tensor.hpp"

namespace safnet::ad {

// One trainable tensor plus its gradient and optimizer state. `value` points
// into the model's weight storage so the pure and trainable paths share
// parameters.
struct ParamSlot {
  std::string name;
  DenseTensor* value = nullptr;
  DenseTensor grad;
  DenseTensor m, v;  // optimizer moments

  void zero_grad() { grad = DenseTensor::zeros(value->shape); }
};

struct Node {
  DenseTensor val;
  DenseTensor grad;  // allocated on first contribution
  bool needs_grad = false;
  std::function<void(Node&)> back;
  ParamSlot* slot = nullptr;
};

inline void accumulate(Node* n, const DenseTensor& g) {
  if (!n->needs_grad) return;
  if (n->grad.data.empty()) n->grad = DenseTensor::zeros(n->val.shape);
  for (std::size_t i = 0; i < g.data.size(); ++i) n->grad.data[i] += g.data[i];
}

// Append-only evaluation trace. Creation order is a topological order, so the
// backward sweep is a single reverse pass. With gradients disabled the tape
// stores values only (cheap primal evaluation for finite differences).
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_(grad_enabled) {}

  bool grad_on() const { return grad_; }

  Node* value(DenseTensor v) {
    nodes_.push_back(std::make_unique<Node>());
    Node* n = nodes_.back().get();
    n->val = std::move(v);
    return n;
  }

  Node* constant(DenseTensor v) { return value(std::move(v)); }

  Node* leaf(ParamSlot* s) {
    Node* n = value(*s->value);
    if (!grad_) return n;
    n->needs_grad = true;
    n->slot = s;
    n->back = [s](Node& self) {
      if (s->grad.data.empty()) s->grad = DenseTensor::zeros(s->value->shape);
      for (std::size_t i = 0; i < self.grad.data.size(); ++i) {
        s->grad.data[i] += self.grad.data[i];
      }
    };
    return n;
  }

  Node* op(DenseTensor v, std::initializer_list<Node*> parents,
           std::function<void(Node&)> back) {
    Node* n = value(std::move(v));
    if (!grad_) return n;
    bool needs = false;
    for (Node* p : parents) needs = needs || p->needs_grad;
    if (!needs) return n;
    n->needs_grad = true;
    n->back = std::move(back);
    return n;
  }

  void backward(Node* loss) {
    if (!grad_) throw ConfigError("tape: backward on a gradient-disabled tape");
    loss->grad = DenseTensor::full(loss->val.shape, 1.0);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node* n = it->get();
      if (n->needs_grad && n->back && !n->grad.data.empty()) n->back(*n);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::unique_ptr<Node>> nodes_;
  bool grad_;
};

// Reset gates, Top-K masks and dynamic k recorded at a base point and
// replayed during finite-difference probes, so FD differentiates exactly the
// function the detached analytic gradient computes.
struct FrozenContext {
  bool recording = true;
  std::vector<DenseTensor> reset_gates;
  std::vector<DenseTensor> masks;
  std::vector<std::size_t> topk;
  std::size_t reset_cursor = 0, mask_cursor = 0, topk_cursor = 0;

  void rewind() { reset_cursor = mask_cursor = topk_cursor = 0; }

  const DenseTensor& next_reset() {
    if (reset_cursor >= reset_gates.size()) throw ConfigError("frozen context: reset underrun");
    return reset_gates[reset_cursor++];
  }
  const DenseTensor& next_mask() {
    if (mask_cursor >= masks.size()) throw ConfigError("frozen context: mask underrun");
    return masks[mask_cursor++];
  }
  std::size_t next_topk() {
    if (topk_cursor >= topk.size()) throw ConfigError("frozen context: k underrun");
    return topk[topk_cursor++];
  }
};

// ---------------- elementwise ----------------

inline Node* add(Tape& t, Node* a, Node* b) {
  if (!a->val.same_shape(b->val)) throw ConfigError("ad::add: shape mismatch");
  DenseTensor v = a->val;
  for (std::size_t i = 0; i < v.size(); ++i) v.data[i] += b->val.data[i];
  return t.op(std::move(v), {a, b}, [a, b](Node& self) {
    accumulate(a, self.grad);
    accumulate(b, self.grad);
  });
}

inline Node* mul(Tape& t, Node* a, Node* b) {
  if (!a->val.same_shape(b->val)) throw ConfigError("ad::mul: shape mismatch");
  DenseTensor v = a->val;
  for (std::size_t i = 0; i < v.size(); ++i) v.data[i] *= b->val.data[i];
  return t.op(std::move(v), {a, b}, [a, b](Node& self) {
    if (a->needs_grad) {
      DenseTensor g = self.grad;
      for (std::size_t i = 0; i < g.size(); ++i) g.data[i] *= b->val.data[i];
      accumulate(a, g);
    }
    if (b->needs_grad) {
      DenseTensor g = self.grad;
      for (std::size_t i = 0; i < g.size(); ++i) g.data[i] *= a->val.data[i];
      accumulate(b, g);
    }
  });
}

inline Node* scale(Tape& t, Node* a, double s) {
  DenseTensor v = a->val;
  for (auto& x : v.data) x *= s;
  return t.op(std::move(v), {a}, [a, s](Node& self) {
    DenseTensor g = self.grad;
    for (auto& x : g.data) x *= s;
    accumulate(a, g);
  });
}

// elementwise product with a constant tensor (frozen masks)
inline Node* mul_const(Tape& t, Node* a, DenseTensor c) {
  if (!a->val.same_shape(c)) throw ConfigError("ad::mul_const: shape mismatch");
  DenseTensor v = a->val;
  for (std::size_t i = 0; i < v.size(); ++i) v.data[i] *= c.data[i];
  auto cp = std::make_shared<DenseTensor>(std::move(c));
  return t.op(std::move(v), {a}, [a, cp](Node& self) {
    DenseTensor g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) g.data[i] *= cp->data[i];
    accumulate(a, g);
  });
}

inline Node* relu(Tape& t, Node* a) {
  DenseTensor v = a->val;
  for (auto& x : v.data) x = x > 0.0 ? x : 0.0;
  return t.op(std::move(v), {a}, [a](Node& self) {
    DenseTensor g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (a->val.data[i] <= 0.0) g.data[i] = 0.0;
    }
    accumulate(a, g);
  });
}

// out[..., :] = sum over the last axis
inline Node* sum_lastdim(Tape& t, Node* a) {
  const std::size_t C = a->val.shape.back();
  const std::size_t M = a->val.size() / C;
  std::vector<std::size_t> shape(a->val.shape.begin(), a->val.shape.end() - 1);
  DenseTensor v(shape);
  for (std::size_t m = 0; m < M; ++m) {
    double acc = 0.0;
    for (std::size_t c = 0; c < C; ++c) acc += a->val.data[m * C + c];
    v.data[m] = acc;
  }
  return t.op(std::move(v), {a}, [a, C, M](Node& self) {
    DenseTensor g(a->val.shape);
    for (std::size_t m = 0; m < M; ++m) {
      for (std::size_t c = 0; c < C; ++c) g.data[m * C + c] = self.grad.data[m];
    }
    accumulate(a, g);
  });
}

// x[..., C] scaled per leading index by gate[...]
inline Node* mul_broadcast_lastdim(Tape& t, Node* x, Node* gate) {
  const std::size_t C = x->val.shape.back();
  const std::size_t M = x->val.size() / C;
  if (gate->val.size() != M) throw ConfigError("ad::mul_broadcast_lastdim: shape mismatch");
  DenseTensor v = x->val;
  for (std::size_t m = 0; m < M; ++m) {
    const double g = gate->val.data[m];
    for (std::size_t c = 0; c < C; ++c) v.data[m * C + c] *= g;
  }
  return t.op(std::move(v), {x, gate}, [x, gate, C, M](Node& self) {
    if (x->needs_grad) {
      DenseTensor g(x->val.shape);
      for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t c = 0; c < C; ++c) {
          g.data[m * C + c] = self.grad.data[m * C + c] * gate->val.data[m];
        }
      }
      accumulate(x, g);
    }
    if (gate->needs_grad) {
      DenseTensor g(gate->val.shape);
      for (std::size_t m = 0; m < M; ++m) {
        double acc = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
          acc += self.grad.data[m * C + c] * x->val.data[m * C + c];
        }
        g.data[m] = acc;
      }
      accumulate(gate, g);
    }
  });
}

// ---------------- shape ----------------

inline Node* reshape(Tape& t, Node* a, std::vector<std::size_t> shape) {
  DenseTensor v = a->val.reshaped(shape);
  return t.op(std::move(v), {a}, [a](Node& self) {
    accumulate(a, self.grad.reshaped(a->val.shape));
  });
}

inline Node* tokens_to_grid_node(Tape& t, Node* a, std::size_t h, std::size_t w) {
  const std::size_t T = a->val.shape[0], B = a->val.shape[1];
  DenseTensor v = tokens_to_grid(a->val, h, w);
  return t.op(std::move(v), {a}, [a, T, B](Node& self) {
    accumulate(a, grid_to_tokens(self.grad, T, B));
  });
}

inline Node* grid_to_tokens_node(Tape& t, Node* a, std::size_t T, std::size_t B) {
  const std::size_t h = a->val.shape[2], w = a->val.shape[3];
  DenseTensor v = grid_to_tokens(a->val, T, B);
  return t.op(std::move(v), {a}, [a, h, w](Node& self) {
    accumulate(a, tokens_to_grid(self.grad, h, w));
  });
}

inline Node* concat_channels(Tape& t, Node* a, Node* b) {
  const std::size_t B = a->val.shape[0], Ca = a->val.shape[1], Cb = b->val.shape[1];
  const std::size_t HW = a->val.shape[2] * a->val.shape[3];
  DenseTensor v({B, Ca + Cb, a->val.shape[2], a->val.shape[3]});
  for (std::size_t i = 0; i < B; ++i) {
    std::copy_n(&a->val.data[i * Ca * HW], Ca * HW, &v.data[i * (Ca + Cb) * HW]);
    std::copy_n(&b->val.data[i * Cb * HW], Cb * HW, &v.data[(i * (Ca + Cb) + Ca) * HW]);
  }
  return t.op(std::move(v), {a, b}, [a, b, B, Ca, Cb, HW](Node& self) {
    if (a->needs_grad) {
      DenseTensor g(a->val.shape);
      for (std::size_t i = 0; i < B; ++i) {
        std::copy_n(&self.grad.data[i * (Ca + Cb) * HW], Ca * HW, &g.data[i * Ca * HW]);
      }
      accumulate(a, g);
    }
    if (b->needs_grad) {
      DenseTensor g(b->val.shape);
      for (std::size_t i = 0; i < B; ++i) {
        std::copy_n(&self.grad.data[(i * (Ca + Cb) + Ca) * HW], Cb * HW, &g.data[i * Cb * HW]);
      }
      accumulate(b, g);
    }
  });
}

inline Node* slice_channels_node(Tape& t, Node* a, std::size_t from, std::size_t to) {
  const std::size_t B = a->val.shape[0], C = a->val.shape[1];
  const std::size_t HW = a->val.shape[2] * a->val.shape[3];
  DenseTensor v({B, to - from, a->val.shape[2], a->val.shape[3]});
  for (std::size_t i = 0; i < B; ++i) {
    std::copy_n(&a->val.data[(i * C + from) * HW], (to - from) * HW,
                &v.data[i * (to - from) * HW]);
  }
  return t.op(std::move(v), {a}, [a, from, to, B, C, HW](Node& self) {
    DenseTensor g(a->val.shape);
    for (std::size_t i = 0; i < B; ++i) {
      std::copy_n(&self.grad.data[i * (to - from) * HW], (to - from) * HW,
                  &g.data[(i * C + from) * HW]);
    }
    accumulate(a, g);
  });
}

inline Node* mean_over_axis(Tape& t, Node* a, std::size_t axis) {
  const auto& shape = a->val.shape;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t n = shape[axis];
  std::vector<std::size_t> out_shape;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out_shape.push_back(shape[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  DenseTensor v(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < n; ++k) {
      const double* p = &a->val.data[(o * n + k) * inner];
      double* q = &v.data[o * inner];
      for (std::size_t i = 0; i < inner; ++i) q[i] += p[i];
    }
  }
  for (auto& x : v.data) x /= static_cast<double>(n);
  return t.op(std::move(v), {a}, [a, outer, inner, n](Node& self) {
    DenseTensor g(a->val.shape);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t k = 0; k < n; ++k) {
        double* p = &g.data[(o * n + k) * inner];
        const double* q = &self.grad.data[o * inner];
        for (std::size_t i = 0; i < inner; ++i) p[i] = q[i] * inv;
      }
    }
    accumulate(a, g);
  });
}

// ---------------- linear / conv ----------------

inline Node* linear(Tape& t, Node* x, Node* w) {
  const std::size_t C = x->val.shape.back();
  if (w->val.rank() != 2 || w->val.shape[0] != C) {
    throw ConfigError("ad::linear: weight shape " + shape_str(w->val.shape) +
                      " incompatible with " + shape_str(x->val.shape));
  }
  const std::size_t Co = w->val.shape[1];
  const std::size_t M = x->val.size() / C;
  std::vector<std::size_t> out_shape = x->val.shape;
  out_shape.back() = Co;
  DenseTensor v(out_shape);
  for (std::size_t m = 0; m < M; ++m) {
    const double* xr = &x->val.data[m * C];
    double* yr = &v.data[m * Co];
    for (std::size_t c = 0; c < C; ++c) {
      const double xv = xr[c];
      if (xv == 0.0) continue;
      const double* wr = &w->val.data[c * Co];
      for (std::size_t co = 0; co < Co; ++co) yr[co] += xv * wr[co];
    }
  }
  return t.op(std::move(v), {x, w}, [x, w, M, C, Co](Node& self) {
    if (x->needs_grad) {
      DenseTensor g(x->val.shape);
      for (std::size_t m = 0; m < M; ++m) {
        const double* gy = &self.grad.data[m * Co];
        double* gx = &g.data[m * C];
        for (std::size_t c = 0; c < C; ++c) {
          const double* wr = &w->val.data[c * Co];
          double acc = 0.0;
          for (std::size_t co = 0; co < Co; ++co) acc += gy[co] * wr[co];
          gx[c] = acc;
        }
      }
      accumulate(x, g);
    }
    if (w->needs_grad) {
      DenseTensor g(w->val.shape);
      for (std::size_t m = 0; m < M; ++m) {
        const double* gy = &self.grad.data[m * Co];
        const double* xr = &x->val.data[m * C];
        for (std::size_t c = 0; c < C; ++c) {
          const double xv = xr[c];
          if (xv == 0.0) continue;
          double* gw = &g.data[c * Co];
          for (std::size_t co = 0; co < Co; ++co) gw[co] += xv * gy[co];
        }
      }
      accumulate(w, g);
    }
  });
}

inline Node* add_bias(Tape& t, Node* x, Node* b) {
  const std::size_t K = x->val.shape.back();
  if (b->val.size() != K) throw ConfigError("ad::add_bias: shape mismatch");
  const std::size_t M = x->val.size() / K;
  DenseTensor v = x->val;
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t k = 0; k < K; ++k) v.data[m * K + k] += b->val.data[k];
  }
  return t.op(std::move(v), {x, b}, [x, b, M, K](Node& self) {
    accumulate(x, self.grad);
    if (b->needs_grad) {
      DenseTensor g(b->val.shape);
      for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t k = 0; k < K; ++k) g.data[k] += self.grad.data[m * K + k];
      }
      accumulate(b, g);
    }
  });
}

inline Node* conv2d_node(Tape& t, Node* x, Node* w, const ConvSpec& spec) {
  DenseTensor v = conv2d(x->val, spec, w->val);
  return t.op(std::move(v), {x, w}, [x, w, spec](Node& self) {
    const std::size_t B = x->val.shape[0], Cin = x->val.shape[1], H = x->val.shape[2],
                      W = x->val.shape[3];
    const std::size_t k = spec.kernel, s = spec.stride, p = spec.padding, g = spec.groups;
    const std::size_t Cg = Cin / g, Og = spec.out_channels / g;
    const std::size_t Ho = self.val.shape[2], Wo = self.val.shape[3];
    DenseTensor gx = x->needs_grad ? DenseTensor::zeros(x->val.shape) : DenseTensor();
    DenseTensor gw = w->needs_grad ? DenseTensor::zeros(w->val.shape) : DenseTensor();
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t oc = 0; oc < spec.out_channels; ++oc) {
        const std::size_t gi = oc / Og;
        for (std::size_t oh = 0; oh < Ho; ++oh) {
          for (std::size_t ow = 0; ow < Wo; ++ow) {
            const double gy = self.grad.data[((b * spec.out_channels + oc) * Ho + oh) * Wo + ow];
            if (gy == 0.0) continue;
            for (std::size_t ic = 0; ic < Cg; ++ic) {
              const std::size_t xc = (b * Cin + gi * Cg + ic) * H;
              const std::size_t wc = (oc * Cg + ic) * k;
              for (std::size_t kh = 0; kh < k; ++kh) {
                const std::ptrdiff_t ih =
                    static_cast<std::ptrdiff_t>(oh * s + kh) - static_cast<std::ptrdiff_t>(p);
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                for (std::size_t kw = 0; kw < k; ++kw) {
                  const std::ptrdiff_t iw =
                      static_cast<std::ptrdiff_t>(ow * s + kw) - static_cast<std::ptrdiff_t>(p);
                  if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                  const std::size_t xi = (xc + ih) * W + iw;
                  const std::size_t wi = (wc + kh) * k + kw;
                  if (x->needs_grad) gx.data[xi] += gy * w->val.data[wi];
                  if (w->needs_grad) gw.data[wi] += gy * x->val.data[xi];
                }
              }
            }
          }
        }
      }
    }
    if (x->needs_grad) accumulate(x, gx);
    if (w->needs_grad) accumulate(w, gw);
  });
}

// ---------------- normalization ----------------

// Train mode normalizes with batch statistics (full gradient through them)
// and updates running stats only when the tape records gradients, so
// finite-difference probe evaluations never mutate persistent state.
inline Node* batch_norm_node(Tape& t, Node* x, Node* gamma, Node* beta, std::size_t ch_axis,
                             BnMode mode, BnParams* bn) {
  const std::size_t C = x->val.shape[ch_axis];
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ch_axis; ++i) outer *= x->val.shape[i];
  for (std::size_t i = ch_axis + 1; i < x->val.rank(); ++i) inner *= x->val.shape[i];
  const std::size_t count = outer * inner;

  auto mean = std::make_shared<std::vector<double>>(C, 0.0);
  auto invstd = std::make_shared<std::vector<double>>(C, 0.0);
  if (mode == BnMode::train) {
    for (std::size_t c = 0; c < C; ++c) {
      double m = 0.0;
      for (std::size_t o = 0; o < outer; ++o) {
        const double* p = &x->val.data[(o * C + c) * inner];
        for (std::size_t i = 0; i < inner; ++i) m += p[i];
      }
      m /= static_cast<double>(count);
      double var = 0.0;
      for (std::size_t o = 0; o < outer; ++o) {
        const double* p = &x->val.data[(o * C + c) * inner];
        for (std::size_t i = 0; i < inner; ++i) {
          const double d = p[i] - m;
          var += d * d;
        }
      }
      var /= static_cast<double>(count);
      (*mean)[c] = m;
      (*invstd)[c] = 1.0 / std::sqrt(var + bn->eps);
      if (t.grad_on()) {
        bn->running_mean.data[c] = (1.0 - bn->momentum) * bn->running_mean.data[c] +
                                   bn->momentum * m;
        bn->running_var.data[c] = (1.0 - bn->momentum) * bn->running_var.data[c] +
                                  bn->momentum * var;
      }
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      (*mean)[c] = bn->running_mean.data[c];
      (*invstd)[c] = 1.0 / std::sqrt(bn->running_var.data[c] + bn->eps);
    }
  }

  auto xhat = std::make_shared<DenseTensor>(x->val.shape);
  DenseTensor v(x->val.shape);
  for (std::size_t c = 0; c < C; ++c) {
    const double m = (*mean)[c], is = (*invstd)[c];
    const double g = gamma->val.data[c], b = beta->val.data[c];
    for (std::size_t o = 0; o < outer; ++o) {
      const double* p = &x->val.data[(o * C + c) * inner];
      double* xh = &xhat->data[(o * C + c) * inner];
      double* q = &v.data[(o * C + c) * inner];
      for (std::size_t i = 0; i < inner; ++i) {
        xh[i] = (p[i] - m) * is;
        q[i] = xh[i] * g + b;
      }
    }
  }

  return t.op(std::move(v), {x, gamma, beta},
              [x, gamma, beta, xhat, invstd, mode, C, outer, inner, count](Node& self) {
                if (gamma->needs_grad || beta->needs_grad) {
                  DenseTensor gg({C}), gb({C});
                  for (std::size_t c = 0; c < C; ++c) {
                    double sg = 0.0, sb = 0.0;
                    for (std::size_t o = 0; o < outer; ++o) {
                      const double* gr = &self.grad.data[(o * C + c) * inner];
                      const double* xh = &xhat->data[(o * C + c) * inner];
                      for (std::size_t i = 0; i < inner; ++i) {
                        sg += gr[i] * xh[i];
                        sb += gr[i];
                      }
                    }
                    gg.data[c] = sg;
                    gb.data[c] = sb;
                  }
                  accumulate(gamma, gg);
                  accumulate(beta, gb);
                }
                if (!x->needs_grad) return;
                DenseTensor gx(x->val.shape);
                for (std::size_t c = 0; c < C; ++c) {
                  const double g = gamma->val.data[c], is = (*invstd)[c];
                  if (mode == BnMode::infer) {
                    for (std::size_t o = 0; o < outer; ++o) {
                      const double* gr = &self.grad.data[(o * C + c) * inner];
                      double* q = &gx.data[(o * C + c) * inner];
                      for (std::size_t i = 0; i < inner; ++i) q[i] = gr[i] * g * is;
                    }
                    continue;
                  }
                  double sum_g = 0.0, sum_gx = 0.0;
                  for (std::size_t o = 0; o < outer; ++o) {
                    const double* gr = &self.grad.data[(o * C + c) * inner];
                    const double* xh = &xhat->data[(o * C + c) * inner];
                    for (std::size_t i = 0; i < inner; ++i) {
                      sum_g += gr[i];
                      sum_gx += gr[i] * xh[i];
                    }
                  }
                  const double n = static_cast<double>(count);
                  for (std::size_t o = 0; o < outer; ++o) {
                    const double* gr = &self.grad.data[(o * C + c) * inner];
                    const double* xh = &xhat->data[(o * C + c) * inner];
                    double* q = &gx.data[(o * C + c) * inner];
                    for (std::size_t i = 0; i < inner; ++i) {
                      q[i] = g * is * (gr[i] - sum_g / n - xh[i] * sum_gx / n);
                    }
                  }
                }
                accumulate(x, gx);
              });
}

// ---------------- spiking ----------------

namespace detail {

inline double spike_derivative(double u, const LifParams& p, bool relaxed, double temperature) {
  if (!relaxed) return surrogate_grad(u, p);
  const double a = p.surrogate_width;
  const double z = 1.5707963267948966 * a * (u - p.v_threshold) / temperature;
  return a / (2.0 * temperature * (1.0 + z * z));
}

}  // namespace detail

// Temporal LIF over the leading axis. The reset term uses the spike values as
// constants (detach-reset); with a frozen context those constants are
// recorded/replayed so probe evaluations see the identical reset schedule.
inline Node* lif_seq(Tape& t, Node* x, const LifParams& params, bool relaxed,
                     double temperature, FrozenContext* fc) {
  const std::size_t T = x->val.shape[0];
  const std::size_t n = x->val.size() / T;
  DenseTensor s_out(x->val.shape);
  auto u_trace = std::make_shared<DenseTensor>(x->val.shape);
  DenseTensor reset_used(x->val.shape);

  const bool replay = fc && !fc->recording;
  const DenseTensor* frozen = replay ? &fc->next_reset() : nullptr;

  std::vector<double> h(n, 0.0);
  for (std::size_t tt = 0; tt < T; ++tt) {
    const double* xd = &x->val.data[tt * n];
    double* ud = &u_trace->data[tt * n];
    double* sd = &s_out.data[tt * n];
    double* rd = &reset_used.data[tt * n];
    for (std::size_t i = 0; i < n; ++i) {
      const double u = params.leak * h[i] + xd[i];
      ud[i] = u;
      const double s = relaxed ? soft_spike(u, params, temperature)
                               : (u - params.v_threshold >= 0.0 ? 1.0 : 0.0);
      sd[i] = s;
      const double r = frozen ? frozen->data[tt * n + i] : s;
      rd[i] = r;
      if (params.reset_mode == ResetMode::hard) {
        h[i] = u * (1.0 - r) + params.v_reset * r;
      } else {
        h[i] = u - params.v_threshold * r;
      }
    }
  }
  if (fc && fc->recording) fc->reset_gates.push_back(reset_used);

  auto reset_cp = std::make_shared<DenseTensor>(std::move(reset_used));
  return t.op(std::move(s_out), {x},
              [x, u_trace, reset_cp, params, relaxed, temperature, T, n](Node& self) {
                DenseTensor gx(x->val.shape);
                std::vector<double> dh(n, 0.0);
                for (std::size_t tt = T; tt-- > 0;) {
                  const double* u = &u_trace->data[tt * n];
                  const double* r = &reset_cp->data[tt * n];
                  const double* gs = &self.grad.data[tt * n];
                  double* g = &gx.data[tt * n];
                  for (std::size_t i = 0; i < n; ++i) {
                    const double dsdu =
                        detail::spike_derivative(u[i], params, relaxed, temperature);
                    const double dhdu =
                        params.reset_mode == ResetMode::hard ? 1.0 - r[i] : 1.0;
                    const double du = gs[i] * dsdu + dh[i] * dhdu;
                    g[i] = du;
                    dh[i] = params.leak * du;
                  }
                }
                accumulate(x, gx);
              });
}

// Stateless single-step spiking nonlinearity (attention gate).
inline Node* spike_step_node(Tape& t, Node* u, const LifParams& params, bool relaxed,
                             double temperature) {
  DenseTensor v(u->val.shape);
  for (std::size_t i = 0; i < v.size(); ++i) {
    v.data[i] = relaxed ? soft_spike(u->val.data[i], params, temperature)
                        : (u->val.data[i] - params.v_threshold >= 0.0 ? 1.0 : 0.0);
  }
  return t.op(std::move(v), {u}, [u, params, relaxed, temperature](Node& self) {
    DenseTensor g(u->val.shape);
    for (std::size_t i = 0; i < g.size(); ++i) {
      g.data[i] = self.grad.data[i] *
                  detail::spike_derivative(u->val.data[i], params, relaxed, temperature);
    }
    accumulate(u, g);
  });
}

// ---------------- pooling / loss ----------------

inline Node* max_pool_node(Tape& t, Node* x, std::size_t window, std::size_t stride) {
  const std::size_t B = x->val.shape[0], C = x->val.shape[1], H = x->val.shape[2],
                    W = x->val.shape[3];
  auto out_size = [&](std::size_t nn) {
    return nn <= window ? std::size_t{1} : (nn - window + stride - 1) / stride + 1;
  };
  const std::size_t Ho = out_size(H), Wo = out_size(W);
  DenseTensor v({B, C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<std::size_t>>(B * C * Ho * Wo);
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const double* p = &x->val.data[bc * H * W];
    for (std::size_t oh = 0; oh < Ho; ++oh) {
      for (std::size_t ow = 0; ow < Wo; ++ow) {
        double m = -std::numeric_limits<double>::infinity();
        std::size_t best = 0;
        for (std::size_t kh = 0; kh < window; ++kh) {
          const std::size_t ih = oh * stride + kh;
          if (ih >= H) break;
          for (std::size_t kw = 0; kw < window; ++kw) {
            const std::size_t iw = ow * stride + kw;
            if (iw >= W) break;
            if (p[ih * W + iw] > m) {
              m = p[ih * W + iw];
              best = ih * W + iw;
            }
          }
        }
        v.data[(bc * Ho + oh) * Wo + ow] = m;
        (*argmax)[(bc * Ho + oh) * Wo + ow] = bc * H * W + best;
      }
    }
  }
  return t.op(std::move(v), {x}, [x, argmax](Node& self) {
    DenseTensor g(x->val.shape);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      g.data[(*argmax)[i]] += self.grad.data[i];
    }
    accumulate(x, g);
  });
}

// Mean cross-entropy over the batch; fused softmax backward.
inline Node* cross_entropy_mean(Tape& t, Node* logits, const std::vector<int>& labels) {
  const std::size_t B = logits->val.shape[0], K = logits->val.shape[1];
  if (labels.size() != B) throw ConfigError("cross_entropy: label count mismatch");
  auto softmax = std::make_shared<DenseTensor>(logits->val.shape);
  double loss = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const double* z = &logits->val.data[b * K];
    double m = z[0];
    for (std::size_t k = 1; k < K; ++k) m = std::max(m, z[k]);
    double sum = 0.0;
    for (std::size_t k = 0; k < K; ++k) sum += std::exp(z[k] - m);
    const double lse = m + std::log(sum);
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= K) {
      throw ConfigError("cross_entropy: label out of range");
    }
    loss += lse - z[labels[b]];
    for (std::size_t k = 0; k < K; ++k) {
      softmax->data[b * K + k] = std::exp(z[k] - m) / sum;
    }
  }
  loss /= static_cast<double>(B);
  DenseTensor v({1});
  v.data[0] = loss;
  auto labels_cp = std::make_shared<std::vector<int>>(labels);
  return t.op(std::move(v), {logits}, [logits, softmax, labels_cp, B, K](Node& self) {
    DenseTensor g(logits->val.shape);
    const double scale = self.grad.data[0] / static_cast<double>(B);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t k = 0; k < K; ++k) {
        const double onehot = static_cast<int>(k) == (*labels_cp)[b] ? 1.0 : 0.0;
        g.data[b * K + k] = (softmax->data[b * K + k] - onehot) * scale;
      }
    }
    accumulate(logits, g);
  });
}

}  // namespace safnet::ad
