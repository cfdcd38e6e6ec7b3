#pragma once

#include <algorithm>
#include <numeric>
#include <string>

#include "safnet/energy.hpp"
#include "safnet/neuron.hpp"
#include "safnet/tensor.hpp"

namespace safnet {

// Projections and normalization state for one SAF attention layer. All token
// tensors are laid out [T,B,N,C]; the channels-before-tokens layout some
// callers use is transposed at this boundary.
struct AttentionWeights {
  DenseTensor w_q, w_k;    // [C,C] token-wise linear projections
  DenseTensor dw_q, dw_k;  // [C,1,3,3] depthwise kernels
  BnParams bn_q, bn_k;
  DenseTensor sgm_w1;  // [C, C/4]
  DenseTensor sgm_w2;  // [C/4, 1]

  void validate(std::size_t c) const {
    const std::vector<std::size_t> square{c, c};
    if (w_q.shape != square || w_k.shape != square) {
      throw ConfigError("attention weights: projections must be " + shape_str(square));
    }
    if (sgm_w2.shape.size() != 2 || sgm_w2.shape[1] != 1) {
      throw ConfigError("attention weights: sgm_w2 must map to one channel per token");
    }
    if (sgm_w1.shape.size() != 2 || sgm_w1.shape[0] != c ||
        sgm_w1.shape[1] != sgm_w2.shape[0]) {
      throw ConfigError("attention weights: sgm projection shapes inconsistent");
    }
  }

  static AttentionWeights init(std::size_t c, Rng& rng, double scale_mul = 1.0) {
    if (c % 4 != 0 || c == 0) {
      throw ConfigError("attention weights: channels " + std::to_string(c) +
                        " not divisible by 4");
    }
    AttentionWeights w;
    auto fill = [&](DenseTensor& t, std::size_t fan_in) {
      const double bound = scale_mul / std::sqrt(static_cast<double>(fan_in));
      for (auto& v : t.data) v = rng.uniform(-bound, bound);
    };
    w.w_q = DenseTensor({c, c});
    w.w_k = DenseTensor({c, c});
    fill(w.w_q, c);
    fill(w.w_k, c);
    w.dw_q = DenseTensor({c, 1, 3, 3});
    w.dw_k = DenseTensor({c, 1, 3, 3});
    fill(w.dw_q, 9);
    fill(w.dw_k, 9);
    w.bn_q = BnParams::identity(c);
    w.bn_k = BnParams::identity(c);
    const std::size_t hidden = c / 4;
    w.sgm_w1 = DenseTensor({c, hidden});
    w.sgm_w2 = DenseTensor({hidden, 1});
    fill(w.sgm_w1, c);
    fill(w.sgm_w2, hidden);
    return w;
  }
};

// Per-token channel sums of binary Q: integers in [0,C].
struct SaliencyScores {
  DenseTensor a_t;  // [T,B,N]
};

// Exactly k ones per (t,b) slice, covering the k highest saliency scores.
struct TopKMask {
  SpikeTensor m_k;  // [T,B,N]
  std::size_t k = 0;
};

enum class SparsityMode { dynamic, fixed_ratio, dense };

struct QkPair {
  SpikeTensor q, k;
};

namespace detail {

inline std::size_t grid_side(std::size_t n) {
  std::size_t h = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  while (h * h < n) ++h;
  while (h > 0 && h * h > n) --h;
  return h;
}

// out[...,co] = sum_c x[...,c] * w[c,co]; counts one event per nonzero input
// element per output channel when a counter is attached.
inline DenseTensor token_linear(const DenseTensor& x, const DenseTensor& w, OpCounter* ops) {
  const std::size_t C = x.shape.back();
  if (w.rank() != 2 || w.shape[0] != C) {
    throw ConfigError("token_linear: weight shape " + shape_str(w.shape) +
                      " incompatible with input " + shape_str(x.shape));
  }
  const std::size_t Co = w.shape[1];
  const std::size_t M = x.size() / C;
  std::vector<std::size_t> out_shape = x.shape;
  out_shape.back() = Co;
  DenseTensor y(out_shape);
  std::uint64_t events = 0;
  for (std::size_t m = 0; m < M; ++m) {
    const double* xr = &x.data[m * C];
    double* yr = &y.data[m * Co];
    for (std::size_t c = 0; c < C; ++c) {
      const double xv = xr[c];
      if (xv == 0.0) continue;
      ++events;
      const double* wr = &w.data[c * Co];
      for (std::size_t co = 0; co < Co; ++co) yr[co] += xv * wr[co];
    }
  }
  if (ops) ops->add(events * Co);
  return y;
}

inline std::uint64_t nonzero_count(const DenseTensor& x) {
  std::uint64_t n = 0;
  for (double v : x.data) n += v != 0.0 ? 1 : 0;
  return n;
}

// events for a conv: one accumulation per nonzero input element per output
// tap it feeds; computed output-side for simplicity
inline std::uint64_t conv_events(const DenseTensor& x, const ConvSpec& spec) {
  const std::size_t B = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3];
  const std::size_t k = spec.kernel, s = spec.stride, p = spec.padding, g = spec.groups;
  const std::size_t Cg = Cin / g, Og = spec.out_channels / g;
  const std::size_t Ho = (H + 2 * p - k) / s + 1, Wo = (W + 2 * p - k) / s + 1;
  std::uint64_t events = 0;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t gi = 0; gi < g; ++gi) {
      for (std::size_t ic = 0; ic < Cg; ++ic) {
        const double* xc = &x.data[((b * Cin + gi * Cg + ic) * H) * W];
        std::uint64_t hits = 0;
        for (std::size_t oh = 0; oh < Ho; ++oh) {
          for (std::size_t ow = 0; ow < Wo; ++ow) {
            for (std::size_t kh = 0; kh < k; ++kh) {
              const std::ptrdiff_t ih =
                  static_cast<std::ptrdiff_t>(oh * s + kh) - static_cast<std::ptrdiff_t>(p);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
              for (std::size_t kw = 0; kw < k; ++kw) {
                const std::ptrdiff_t iw =
                    static_cast<std::ptrdiff_t>(ow * s + kw) - static_cast<std::ptrdiff_t>(p);
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                if (xc[ih * static_cast<std::ptrdiff_t>(W) + iw] != 0.0) ++hits;
              }
            }
          }
        }
        events += hits * Og;
      }
    }
  }
  return events;
}

}  // namespace detail

// Spike Q/K generation: SN(BN(DWConv(X*W))) per path, with the DWConv skipped
// entirely when use_dwconv is off. Output binary, same token shape as x.
inline QkPair gen_qk(const SpikeTensor& x, AttentionWeights& w, const LifParams& lif,
                     bool use_dwconv, std::size_t grid_h = 0, std::size_t grid_w = 0,
                     BnMode bn_mode = BnMode::infer, OpCounter* ops = nullptr,
                     EnergyProbe* probe = nullptr, const std::string& id_prefix = "attn") {
  if (x.rank() != 4) throw ConfigError("gen_qk: input must be [T,B,N,C]");
  const std::size_t T = x.shape[0], B = x.shape[1], N = x.shape[2], C = x.shape[3];
  w.validate(C);
  if (use_dwconv) {
    if (grid_h == 0 && grid_w == 0) {
      grid_h = grid_w = detail::grid_side(N);
    }
    if (grid_h * grid_w != N) {
      throw ConfigError("gen_qk: " + std::to_string(N) + " tokens do not form a " +
                        std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
    }
  }
  const DenseTensor xd = x.to_dense();
  const std::uint64_t x_spikes = x.spike_count();
  const std::size_t o_side = detail::grid_side(N);

  auto run_path = [&](const DenseTensor& proj, const DenseTensor& dw, BnParams& bn,
                      const char* tag) {
    if (probe) {
      probe->record(id_prefix + ".w" + tag, LayerKind::snn, o_side, C, C, 1, x_spikes, x.size());
    }
    DenseTensor lin = detail::token_linear(xd, proj, ops);
    if (use_dwconv) {
      DenseTensor grid = tokens_to_grid(lin, grid_h, grid_w);
      if (probe) {
        probe->record(id_prefix + ".dw" + tag, LayerKind::snn, o_side, C, 1, 3,
                      detail::nonzero_count(grid), grid.size());
      }
      if (ops) ops->add(detail::conv_events(grid, ConvSpec{C, C, 3, 1, 1, C}));
      grid = depthwise_conv2d(grid, 3, dw);
      lin = grid_to_tokens(grid, T, B);
    }
    DenseTensor normed = batch_norm(lin, 3, bn, bn_mode);
    return lif_forward(normed, lif).spikes;
  };

  QkPair qk;
  qk.q = run_path(w.w_q, w.dw_q, w.bn_q, "q");
  qk.k = run_path(w.w_k, w.dw_k, w.bn_k, "k");
  return qk;
}

// A_t[t,b,n] = sum_c Q[t,b,n,c]; integer-valued in [0,C].
inline SaliencyScores saliency(const SpikeTensor& q, OpCounter* ops = nullptr) {
  if (q.rank() != 4) throw ConfigError("saliency: input must be [T,B,N,C]");
  const std::size_t C = q.shape[3];
  const std::size_t M = q.size() / C;
  SaliencyScores s;
  s.a_t = DenseTensor({q.shape[0], q.shape[1], q.shape[2]});
  std::uint64_t events = 0;
  for (std::size_t m = 0; m < M; ++m) {
    const std::uint8_t* row = &q.data[m * C];
    std::uint64_t acc = 0;
    for (std::size_t c = 0; c < C; ++c) acc += row[c];
    events += acc;
    s.a_t.data[m] = static_cast<double>(acc);
  }
  if (ops) ops->add(events);
  return s;
}

struct SgmResult {
  std::size_t k = 0;
  double p = 0.0;
  SpikeTensor guidance;  // [T,B,N]
};

// Sparsity guidance: F = ReLU(Linear1(x)); G = SN(Linear2(F)); p = mean of
// the T*B*N binary guidance values; k = floor(N*p) clamped to [1,N].
inline SgmResult sgm_predict_k(const SpikeTensor& x, const AttentionWeights& w,
                               const LifParams& lif, OpCounter* ops = nullptr,
                               EnergyProbe* probe = nullptr,
                               const std::string& id_prefix = "attn") {
  if (x.rank() != 4) throw ConfigError("sgm_predict_k: input must be [T,B,N,C]");
  const std::size_t T = x.shape[0], B = x.shape[1], N = x.shape[2], C = x.shape[3];
  if (N == 0) throw ConfigError("sgm_predict_k: no tokens");
  const DenseTensor xd = x.to_dense();
  const std::size_t o_side = detail::grid_side(N);
  if (probe) {
    probe->record(id_prefix + ".sgm1", LayerKind::snn, o_side, C, w.sgm_w1.shape[1], 1,
                  x.spike_count(), x.size());
  }
  DenseTensor f = detail::token_linear(xd, w.sgm_w1, ops);
  for (auto& v : f.data) v = v > 0.0 ? v : 0.0;
  if (probe) {
    probe->record(id_prefix + ".sgm2", LayerKind::snn, o_side, w.sgm_w1.shape[1], 1, 1,
                  detail::nonzero_count(f), f.size());
  }
  DenseTensor g_pre = detail::token_linear(f, w.sgm_w2, ops).reshaped({T, B, N});
  SgmResult r;
  r.guidance = lif_forward(g_pre, lif).spikes;
  r.p = static_cast<double>(r.guidance.spike_count()) / static_cast<double>(T * B * N);
  const auto floor_k = static_cast<std::size_t>(static_cast<double>(N) * r.p);
  r.k = std::clamp<std::size_t>(floor_k, 1, N);
  return r;
}

// Binary mask selecting the k highest-scoring tokens per (t,b) slice; ties
// broken by lowest token index.
inline TopKMask topk_mask(const SaliencyScores& a, std::size_t k) {
  const std::size_t T = a.a_t.shape[0], B = a.a_t.shape[1], N = a.a_t.shape[2];
  if (k < 1 || k > N) {
    throw ConfigError("topk_mask: k=" + std::to_string(k) + " out of range [1," +
                      std::to_string(N) + "]");
  }
  TopKMask m;
  m.k = k;
  m.m_k = SpikeTensor({T, B, N});
  std::vector<std::size_t> idx(N);
  for (std::size_t tb = 0; tb < T * B; ++tb) {
    const double* row = &a.a_t.data[tb * N];
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) {
      if (row[i] != row[j]) return row[i] > row[j];
      return i < j;
    });
    for (std::size_t r = 0; r < k; ++r) m.m_k.data[tb * N + idx[r]] = 1;
  }
  return m;
}

// Gated output: out[t,b,n,c] = K[t,b,n,c] * SN(M_k * A_t)[t,b,n]. The gate is
// a fresh single-step neuron, so the per-token closed form holds exactly.
inline SpikeTensor saf_gate_output(const SpikeTensor& k_mat, const SaliencyScores& a,
                                   const TopKMask& mask, const LifParams& lif,
                                   SpikeTensor* gate_out = nullptr, OpCounter* ops = nullptr,
                                   EnergyProbe* probe = nullptr,
                                   const std::string& id_prefix = "attn") {
  const std::size_t T = k_mat.shape[0], B = k_mat.shape[1], N = k_mat.shape[2],
                    C = k_mat.shape[3];
  DenseTensor gate_u({T, B, N});
  for (std::size_t i = 0; i < gate_u.size(); ++i) {
    gate_u.data[i] = static_cast<double>(mask.m_k.data[i]) * a.a_t.data[i];
  }
  const SpikeTensor gate = spike_step(gate_u, lif);
  if (probe) {
    probe->record(id_prefix + ".gate_mul", LayerKind::snn, detail::grid_side(N), C, 1, 1,
                  gate.spike_count(), gate.size());
  }
  SpikeTensor out({T, B, N, C});
  std::uint64_t events = 0;
  for (std::size_t m = 0; m < T * B * N; ++m) {
    if (!gate.data[m]) continue;
    events += C;
    std::copy_n(&k_mat.data[m * C], C, &out.data[m * C]);
  }
  if (ops) ops->add(events);
  if (gate_out) *gate_out = gate;
  return out;
}

// Internals of one saf_forward call, for verification instruments.
struct SafTrace {
  SpikeTensor q, k;
  SaliencyScores scores;
  TopKMask mask;
  std::size_t dynamic_k = 0;
  SpikeTensor gate;
};

// Full SAF attention: Q/K generation, saliency, sparsity budget k (from the
// SGM, a fixed ratio, or dense), Top-K masking, and the gated output. Never
// materializes an NxN product; cost is linear in the token count.
inline SpikeTensor saf_forward(const SpikeTensor& x, AttentionWeights& w, const LifParams& lif,
                               SparsityMode mode, double fixed_ratio = 1.0,
                               bool use_dwconv = true, std::size_t grid_h = 0,
                               std::size_t grid_w = 0, BnMode bn_mode = BnMode::infer,
                               SafTrace* trace = nullptr, OpCounter* ops = nullptr,
                               EnergyProbe* probe = nullptr,
                               const std::string& id_prefix = "attn") {
  const std::size_t N = x.shape[2];
  QkPair qk = gen_qk(x, w, lif, use_dwconv, grid_h, grid_w, bn_mode, ops, probe, id_prefix);
  SaliencyScores a = saliency(qk.q, ops);
  std::size_t k = N;
  if (mode == SparsityMode::dynamic) {
    k = sgm_predict_k(x, w, lif, ops, probe, id_prefix).k;
  } else if (mode == SparsityMode::fixed_ratio) {
    k = std::clamp<std::size_t>(
        static_cast<std::size_t>(fixed_ratio * static_cast<double>(N)), 1, N);
  }
  TopKMask mask = topk_mask(a, k);
  SpikeTensor gate;
  SpikeTensor out = saf_gate_output(qk.k, a, mask, lif, &gate, ops, probe, id_prefix);
  if (trace) {
    trace->q = std::move(qk.q);
    trace->k = std::move(qk.k);
    trace->scores = std::move(a);
    trace->mask = std::move(mask);
    trace->dynamic_k = k;
    trace->gate = std::move(gate);
  }
  return out;
}

// Dense quadratic spiking attention y_i = SN(sum_j <Q_i,K_j> * V_j * scale).
// Verification subject only; never part of the SAF forward path.
inline DenseTensor ssa_reference(const SpikeTensor& q, const SpikeTensor& k,
                                 const SpikeTensor& v, double scale = 1.0,
                                 const LifParams& lif = LifParams{},
                                 OpCounter* ops = nullptr) {
  if (q.shape != k.shape || q.shape != v.shape || q.rank() != 4) {
    throw ConfigError("ssa_reference: Q,K,V must share a [T,B,N,C] shape");
  }
  const std::size_t T = q.shape[0], B = q.shape[1], N = q.shape[2], C = q.shape[3];
  DenseTensor y({T, B, N, C});
  std::uint64_t events = 0;
  std::vector<double> wij(N);
  std::vector<std::uint64_t> v_nnz(N);
  for (std::size_t tb = 0; tb < T * B; ++tb) {
    const std::uint8_t* qd = &q.data[tb * N * C];
    const std::uint8_t* kd = &k.data[tb * N * C];
    const std::uint8_t* vd = &v.data[tb * N * C];
    for (std::size_t j = 0; j < N; ++j) {
      std::uint64_t n = 0;
      for (std::size_t c = 0; c < C; ++c) n += vd[j * C + c];
      v_nnz[j] = n;
    }
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t j = 0; j < N; ++j) {
        std::uint64_t dot = 0;
        for (std::size_t c = 0; c < C; ++c) {
          const bool both = qd[i * C + c] && kd[j * C + c];
          dot += both ? 1 : 0;
          events += both ? 1 : 0;
        }
        wij[j] = static_cast<double>(dot);
      }
      for (std::size_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < N; ++j) {
          if (wij[j] == 0.0) continue;
          acc += wij[j] * vd[j * C + c];
        }
        y.data[(tb * N + i) * C + c] =
            acc * scale - lif.v_threshold >= 0.0 ? 1.0 : 0.0;
      }
      for (std::size_t j = 0; j < N; ++j) {
        if (wij[j] != 0.0) events += v_nnz[j];
      }
    }
  }
  if (ops) ops->add(events);
  return y;
}

}  // namespace safnet
