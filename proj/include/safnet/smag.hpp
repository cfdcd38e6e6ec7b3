#pragma once

#include <string>

#include "safnet/attention.hpp"
#include "safnet/energy.hpp"
#include "safnet/neuron.hpp"
#include "safnet/tensor.hpp"

namespace safnet {

// Ablation switches for the gated feedforward path.
struct SmagToggles {
  bool no_pconv = false;
  bool no_multiscale = false;
  std::size_t kernel_a = 3;
  std::size_t kernel_b = 7;

  std::size_t gate_kernel_a() const { return no_multiscale ? 3 : kernel_a; }
  std::size_t gate_kernel_b() const { return no_multiscale ? 3 : kernel_b; }

  void validate() const {
    if (kernel_a % 2 == 0 || kernel_b % 2 == 0 || kernel_a == 0 || kernel_b == 0) {
      throw ConfigError("smag: gate kernels must be odd and positive");
    }
  }
};

// Weights for SMAG. The 4C expansion splits (C, C, 2C) into the two gate
// branches and the main path; a final pointwise projection restores C.
struct SmagWeights {
  DenseTensor pconv_w;    // [C/4, C/4, 3, 3] (absent with no_pconv)
  DenseTensor expand_w;   // [4C, C, 1, 1]
  DenseTensor dw_a_w;     // [C, 1, ka, ka]
  DenseTensor dw_b_w;     // [C, 1, kb, kb]
  DenseTensor project_w;  // [C, 2C, 1, 1]
  BnParams bn_expand, bn_gate_a, bn_gate_b, bn_project;

  static SmagWeights init(std::size_t c, const SmagToggles& toggles, Rng& rng,
                          double scale_mul = 1.0) {
    if (c % 4 != 0 || c == 0) {
      throw ConfigError("smag: channels " + std::to_string(c) + " not divisible by 4");
    }
    toggles.validate();
    SmagWeights w;
    auto fill = [&](DenseTensor& t, std::size_t fan_in) {
      const double bound = scale_mul / std::sqrt(static_cast<double>(fan_in));
      for (auto& v : t.data) v = rng.uniform(-bound, bound);
    };
    if (!toggles.no_pconv) {
      w.pconv_w = DenseTensor({c / 4, c / 4, 3, 3});
      fill(w.pconv_w, 9 * (c / 4));
    }
    w.expand_w = DenseTensor({4 * c, c, 1, 1});
    fill(w.expand_w, c);
    const std::size_t ka = toggles.gate_kernel_a(), kb = toggles.gate_kernel_b();
    w.dw_a_w = DenseTensor({c, 1, ka, ka});
    w.dw_b_w = DenseTensor({c, 1, kb, kb});
    fill(w.dw_a_w, ka * ka);
    fill(w.dw_b_w, kb * kb);
    w.project_w = DenseTensor({c, 2 * c, 1, 1});
    fill(w.project_w, 2 * c);
    w.bn_expand = BnParams::identity(4 * c);
    w.bn_gate_a = BnParams::identity(c);
    w.bn_gate_b = BnParams::identity(c);
    w.bn_project = BnParams::identity(c);
    return w;
  }

  std::size_t conv_param_count() const {
    return pconv_w.size() + expand_w.size() + dw_a_w.size() + dw_b_w.size() + project_w.size();
  }
};

// Vanilla spiking MLP: two 1x1 convolutions with a 4x expansion.
struct SmlpWeights {
  DenseTensor expand_w;   // [4C, C, 1, 1]
  DenseTensor project_w;  // [C, 4C, 1, 1]
  BnParams bn_expand, bn_project;

  static SmlpWeights init(std::size_t c, Rng& rng, double scale_mul = 1.0) {
    if (c == 0) throw ConfigError("smlp: zero channels");
    SmlpWeights w;
    auto fill = [&](DenseTensor& t, std::size_t fan_in) {
      const double bound = scale_mul / std::sqrt(static_cast<double>(fan_in));
      for (auto& v : t.data) v = rng.uniform(-bound, bound);
    };
    w.expand_w = DenseTensor({4 * c, c, 1, 1});
    fill(w.expand_w, c);
    w.project_w = DenseTensor({c, 4 * c, 1, 1});
    fill(w.project_w, 4 * c);
    w.bn_expand = BnParams::identity(4 * c);
    w.bn_project = BnParams::identity(c);
    return w;
  }

  std::size_t conv_param_count() const { return expand_w.size() + project_w.size(); }
};

// Closed form for the default SMAG configuration (biasless convs):
//   9*(C/4)^2 + 4C^2 + 9C + 49C + 2C^2  =  6.5625*C^2 + 58*C
inline std::size_t smag_param_count(std::size_t c) {
  if (c == 0 || c % 4 != 0) {
    throw ConfigError("smag_param_count: C=" + std::to_string(c) +
                      " must be positive and divisible by 4");
  }
  return 105 * c * c / 16 + 58 * c;
}

inline std::size_t smlp_param_count(std::size_t c) {
  if (c == 0 || c % 4 != 0) {
    throw ConfigError("smlp_param_count: C=" + std::to_string(c) +
                      " must be positive and divisible by 4");
  }
  return 8 * c * c;
}

namespace detail {

// [T,B,C,H,W] -> [T*B,C,H,W] view-copy and back
inline DenseTensor merge_tb(const DenseTensor& x) {
  return x.reshaped({x.shape[0] * x.shape[1], x.shape[2], x.shape[3], x.shape[4]});
}
inline DenseTensor split_tb(const DenseTensor& x, std::size_t t, std::size_t b) {
  return x.reshaped({t, b, x.shape[1], x.shape[2], x.shape[3]});
}

inline DenseTensor slice_channels(const DenseTensor& x, std::size_t from, std::size_t to) {
  const std::size_t B = x.shape[0], C = x.shape[1], HW = x.shape[2] * x.shape[3];
  DenseTensor y({B, to - from, x.shape[2], x.shape[3]});
  for (std::size_t b = 0; b < B; ++b) {
    std::copy_n(&x.data[(b * C + from) * HW], (to - from) * HW, &y.data[b * (to - from) * HW]);
  }
  return y;
}

}  // namespace detail

// Multi-scale adaptive gated feedforward over [T,B,C,H,W]:
//   X' = SN(BN(W1 * PConv(X))), split (C,C,2C);
//   G1 = SN(BN(DWConv_ka(X'1))), G2 = SN(BN(DWConv_kb(X'2)));
//   gated = Concat(G1,G2) (.) X'3; out = SN(BN(project(gated)) [+ residual]).
// Accepts membrane-domain inputs (small-integer residual sums); the first
// BN+SN renormalizes. The optional residual joins the final membrane before
// the last spiking step, so the output stays binary.
inline SpikeTensor smag_forward(const DenseTensor& x, SmagWeights& w, const LifParams& lif,
                                const SmagToggles& toggles, BnMode bn_mode = BnMode::infer,
                                const DenseTensor* residual = nullptr,
                                OpCounter* ops = nullptr, EnergyProbe* probe = nullptr,
                                const std::string& id_prefix = "ffn") {
  if (x.rank() != 5) throw ConfigError("smag_forward: input must be [T,B,C,H,W]");
  toggles.validate();
  const std::size_t T = x.shape[0], B = x.shape[1], C = x.shape[2], H = x.shape[3],
                    W = x.shape[4];
  if (C % 4 != 0 || C == 0) {
    throw ConfigError("smag_forward: channels " + std::to_string(C) + " not divisible by 4");
  }
  x.require_finite("smag_forward");
  DenseTensor cur = detail::merge_tb(x);

  if (!toggles.no_pconv) {
    if (probe) {
      DenseTensor slice = detail::slice_channels(cur, 0, C / 4);
      probe->record(id_prefix + ".pconv", LayerKind::snn, H, C / 4, C / 4, 3,
                    detail::nonzero_count(slice), slice.size());
    }
    if (ops) {
      DenseTensor slice = detail::slice_channels(cur, 0, C / 4);
      ops->add(detail::conv_events(slice, ConvSpec{C / 4, C / 4, 3, 1, 1, 1}));
    }
    cur = partial_conv(cur, w.pconv_w);
  }

  if (probe) {
    probe->record(id_prefix + ".expand", LayerKind::snn, H, C, 4 * C, 1,
                  detail::nonzero_count(cur), cur.size());
  }
  if (ops) ops->add(detail::conv_events(cur, ConvSpec{C, 4 * C, 1, 1, 0, 1}));
  DenseTensor expanded = conv2d(cur, ConvSpec{C, 4 * C, 1, 1, 0, 1}, w.expand_w);
  expanded = batch_norm(expanded, 1, w.bn_expand, bn_mode);
  SpikeTensor xp = lif_forward(detail::split_tb(expanded, T, B), lif).spikes;
  DenseTensor xp_d = detail::merge_tb(xp.to_dense());

  DenseTensor x1 = detail::slice_channels(xp_d, 0, C);
  DenseTensor x2 = detail::slice_channels(xp_d, C, 2 * C);
  DenseTensor x3 = detail::slice_channels(xp_d, 2 * C, 4 * C);

  const std::size_t ka = toggles.gate_kernel_a(), kb = toggles.gate_kernel_b();
  auto gate_branch = [&](const DenseTensor& xin, const DenseTensor& dw, BnParams& bn,
                         std::size_t k, const char* tag) {
    if (probe) {
      probe->record(id_prefix + ".dw_" + tag, LayerKind::snn, H, C, 1, k,
                    detail::nonzero_count(xin), xin.size());
    }
    if (ops) ops->add(detail::conv_events(xin, ConvSpec{C, C, k, 1, k / 2, C}));
    DenseTensor g = depthwise_conv2d(xin, k, dw);
    g = batch_norm(g, 1, bn, bn_mode);
    return lif_forward(detail::split_tb(g, T, B), lif).spikes;
  };
  SpikeTensor g1 = gate_branch(x1, w.dw_a_w, w.bn_gate_a, ka, "a");
  SpikeTensor g2 = gate_branch(x2, w.dw_b_w, w.bn_gate_b, kb, "b");

  // Concat(G1,G2) (.) X'3 - binary x binary stays binary
  DenseTensor gated({T * B, 2 * C, H, W});
  const std::size_t chw = C * H * W;
  std::uint64_t gate_spikes = 0;
  for (std::size_t tb = 0; tb < T * B; ++tb) {
    const std::uint8_t* g1d = &g1.data[tb * chw];
    const std::uint8_t* g2d = &g2.data[tb * chw];
    const double* x3d = &x3.data[tb * 2 * chw];
    double* out = &gated.data[tb * 2 * chw];
    for (std::size_t i = 0; i < chw; ++i) {
      out[i] = g1d[i] ? x3d[i] : 0.0;
      gate_spikes += g1d[i];
    }
    for (std::size_t i = 0; i < chw; ++i) {
      out[chw + i] = g2d[i] ? x3d[chw + i] : 0.0;
      gate_spikes += g2d[i];
    }
  }
  if (ops) ops->add(gate_spikes);
  if (probe) {
    probe->record(id_prefix + ".gate_mul", LayerKind::snn, H, 2 * C, 1, 1, gate_spikes,
                  static_cast<std::uint64_t>(T) * B * 2 * chw);
  }

  if (probe) {
    probe->record(id_prefix + ".project", LayerKind::snn, H, 2 * C, C, 1,
                  detail::nonzero_count(gated), gated.size());
  }
  if (ops) ops->add(detail::conv_events(gated, ConvSpec{2 * C, C, 1, 1, 0, 1}));
  DenseTensor proj = conv2d(gated, ConvSpec{2 * C, C, 1, 1, 0, 1}, w.project_w);
  proj = batch_norm(proj, 1, w.bn_project, bn_mode);
  DenseTensor membrane = detail::split_tb(proj, T, B);
  if (residual) {
    if (!membrane.same_shape(*residual)) {
      throw ConfigError("smag_forward: residual shape " + shape_str(residual->shape) +
                        " != " + shape_str(membrane.shape));
    }
    for (std::size_t i = 0; i < membrane.size(); ++i) membrane.data[i] += residual->data[i];
  }
  return lif_forward(membrane, lif).spikes;
}

inline SpikeTensor smag_forward(const SpikeTensor& x, SmagWeights& w, const LifParams& lif,
                                const SmagToggles& toggles, BnMode bn_mode = BnMode::infer,
                                const DenseTensor* residual = nullptr,
                                OpCounter* ops = nullptr, EnergyProbe* probe = nullptr,
                                const std::string& id_prefix = "ffn") {
  return smag_forward(x.to_dense(), w, lif, toggles, bn_mode, residual, ops, probe, id_prefix);
}

// SMLP baseline: SN(BN(Conv1x1 C->4C)) then SN(BN(Conv1x1 4C->C) [+residual]).
inline SpikeTensor smlp_forward(const DenseTensor& x, SmlpWeights& w, const LifParams& lif,
                                BnMode bn_mode = BnMode::infer,
                                const DenseTensor* residual = nullptr,
                                OpCounter* ops = nullptr, EnergyProbe* probe = nullptr,
                                const std::string& id_prefix = "ffn") {
  if (x.rank() != 5) throw ConfigError("smlp_forward: input must be [T,B,C,H,W]");
  const std::size_t T = x.shape[0], B = x.shape[1], C = x.shape[2], H = x.shape[3];
  x.require_finite("smlp_forward");
  DenseTensor cur = detail::merge_tb(x);
  if (probe) {
    probe->record(id_prefix + ".expand", LayerKind::snn, H, C, 4 * C, 1,
                  detail::nonzero_count(cur), cur.size());
  }
  if (ops) ops->add(detail::conv_events(cur, ConvSpec{C, 4 * C, 1, 1, 0, 1}));
  DenseTensor expanded = conv2d(cur, ConvSpec{C, 4 * C, 1, 1, 0, 1}, w.expand_w);
  expanded = batch_norm(expanded, 1, w.bn_expand, bn_mode);
  SpikeTensor hidden = lif_forward(detail::split_tb(expanded, T, B), lif).spikes;
  DenseTensor hidden_d = detail::merge_tb(hidden.to_dense());
  if (probe) {
    probe->record(id_prefix + ".project", LayerKind::snn, H, 4 * C, C, 1,
                  hidden.spike_count(), hidden.size());
  }
  if (ops) ops->add(detail::conv_events(hidden_d, ConvSpec{4 * C, C, 1, 1, 0, 1}));
  DenseTensor proj = conv2d(hidden_d, ConvSpec{4 * C, C, 1, 1, 0, 1}, w.project_w);
  proj = batch_norm(proj, 1, w.bn_project, bn_mode);
  DenseTensor membrane = detail::split_tb(proj, T, B);
  if (residual) {
    if (!membrane.same_shape(*residual)) {
      throw ConfigError("smlp_forward: residual shape mismatch");
    }
    for (std::size_t i = 0; i < membrane.size(); ++i) membrane.data[i] += residual->data[i];
  }
  return lif_forward(membrane, lif).spikes;
}

inline SpikeTensor smlp_forward(const SpikeTensor& x, SmlpWeights& w, const LifParams& lif,
                                BnMode bn_mode = BnMode::infer,
                                const DenseTensor* residual = nullptr,
                                OpCounter* ops = nullptr, EnergyProbe* probe = nullptr,
                                const std::string& id_prefix = "ffn") {
  return smlp_forward(x.to_dense(), w, lif, bn_mode, residual, ops, probe, id_prefix);
}

}  // namespace safnet
