#pragma once

#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "safnet/attention.hpp"
#include "safnet/smag.hpp"

namespace safnet {

// Weighted directed information-flow graph over token vertices. Edges are
// (source j -> target i) pairs.
struct FlowGraph {
  std::size_t n = 0;
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  std::vector<double> weights;

  static FlowGraph complete(std::size_t n) {
    FlowGraph g;
    g.n = n;
    g.edges.reserve(n * n);
    g.weights.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) g.edges.emplace_back(j, i);
    }
    return g;
  }

  static FlowGraph self_loops(std::size_t n, const std::vector<std::size_t>& active) {
    FlowGraph g;
    g.n = n;
    for (auto v : active) g.edges.emplace_back(v, v);
    g.weights.assign(active.size(), 0.0);
    return g;
  }
};

struct VerifyResult {
  bool pass = true;
  std::string witness;
};

// Complete-graph aggregation oracle for the dense reference attention:
// builds w_ij = <Q_i, K_j> for every ordered pair and evaluates
// y_i = SN(sum_j w_ij * V_j * scale); asserts exact equality with
// ssa_reference. Integer spike arithmetic keeps both routes bit-identical.
inline VerifyResult verify_prop1(const SpikeTensor& q, const SpikeTensor& k,
                                 const SpikeTensor& v, double scale = 1.0,
                                 const LifParams& lif = LifParams{}) {
  const std::size_t T = q.shape[0], B = q.shape[1], N = q.shape[2], C = q.shape[3];
  const DenseTensor module_out = ssa_reference(q, k, v, scale, lif);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t b = 0; b < B; ++b) {
      FlowGraph g = FlowGraph::complete(N);
      for (std::size_t e = 0; e < g.edges.size(); ++e) {
        const auto [j, i] = g.edges[e];
        std::uint64_t dot = 0;
        for (std::size_t c = 0; c < C; ++c) {
          dot += static_cast<std::uint64_t>(q(t, b, i, c)) * k(t, b, j, c);
        }
        g.weights[e] = static_cast<double>(dot);
      }
      for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t c = 0; c < C; ++c) {
          double acc = 0.0;
          for (std::size_t e = 0; e < g.edges.size(); ++e) {
            if (g.edges[e].second != i) continue;
            acc += g.weights[e] * static_cast<double>(v(t, b, g.edges[e].first, c));
          }
          const double y_graph = acc * scale - lif.v_threshold >= 0.0 ? 1.0 : 0.0;
          const double y_module = module_out(t, b, i, c);
          if (y_graph != y_module) {
            std::ostringstream os;
            os << "prop1 mismatch at t=" << t << " b=" << b << " i=" << i << " c=" << c
               << " graph=" << y_graph << " module=" << y_module;
            return {false, os.str()};
          }
        }
      }
    }
  }
  return {};
}

// Self-loop subgraph oracle for SAF: (a) the active vertex set has exactly k
// members, (b) every output equals the per-token closed form
// y_i = (M_k)_i * SN(sum_c Q_{c,i}) * K_i, (c) inactive vertices emit zero.
inline VerifyResult verify_prop2(const SpikeTensor& x, AttentionWeights& w,
                                 const LifParams& lif, bool use_dwconv = false,
                                 std::size_t grid_h = 0, std::size_t grid_w = 0) {
  const std::size_t T = x.shape[0], B = x.shape[1], N = x.shape[2], C = x.shape[3];
  SafTrace trace;
  const SpikeTensor out = saf_forward(x, w, lif, SparsityMode::dynamic, 1.0, use_dwconv,
                                      grid_h, grid_w, BnMode::infer, &trace);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t b = 0; b < B; ++b) {
      std::vector<std::size_t> active;
      for (std::size_t n = 0; n < N; ++n) {
        if (trace.mask.m_k(t, b, n)) active.push_back(n);
      }
      if (active.size() != trace.dynamic_k) {
        std::ostringstream os;
        os << "prop2: |V_active|=" << active.size() << " != k=" << trace.dynamic_k << " at t="
           << t << " b=" << b;
        return {false, os.str()};
      }
      FlowGraph g = FlowGraph::self_loops(N, active);
      for (std::size_t e = 0; e < g.edges.size(); ++e) {
        g.weights[e] = trace.scores.a_t(t, b, g.edges[e].first);
      }
      for (std::size_t n = 0; n < N; ++n) {
        std::uint64_t a = 0;
        for (std::size_t c = 0; c < C; ++c) a += trace.q(t, b, n, c);
        const bool masked_in = trace.mask.m_k(t, b, n) != 0;
        const double gate =
            masked_in && static_cast<double>(a) - lif.v_threshold >= 0.0 ? 1.0 : 0.0;
        for (std::size_t c = 0; c < C; ++c) {
          const double y_closed = gate * static_cast<double>(trace.k(t, b, n, c));
          const double y_module = static_cast<double>(out(t, b, n, c));
          if (y_closed != y_module) {
            std::ostringstream os;
            os << "prop2 closed-form mismatch at t=" << t << " b=" << b << " i=" << n
               << " c=" << c << " graph=" << y_closed << " module=" << y_module;
            return {false, os.str()};
          }
          if (!masked_in && y_module != 0.0) {
            std::ostringstream os;
            os << "prop2: inactive vertex " << n << " has nonzero output at t=" << t
               << " b=" << b << " c=" << c;
            return {false, os.str()};
          }
        }
      }
    }
  }
  return {};
}

struct AuditRow {
  std::string module;
  std::size_t width = 0;
  std::size_t closed_form = 0;
  std::size_t enumerated = 0;
  bool match = false;
};

struct AuditTable {
  std::vector<AuditRow> rows;
  std::size_t stage3_width = 0;
  double reduction_percent = 0.0;  // SMAG vs SMLP at the stage-3 width
  bool all_match = true;
};

// Closed-form parameter counts vs exact weight-element enumeration per stage
// width, plus the SMAG-vs-SMLP reduction at the deepest width.
inline AuditTable audit_params(std::size_t base_channels) {
  if (base_channels == 0 || base_channels % 4 != 0) {
    throw ConfigError("audit_params: base channels must be positive and divisible by 4");
  }
  AuditTable table;
  Rng rng(0);
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t c = base_channels << s;
    SmagWeights smag = SmagWeights::init(c, SmagToggles{}, rng);
    SmlpWeights smlp = SmlpWeights::init(c, rng);
    AuditRow r1{"smag", c, smag_param_count(c), smag.conv_param_count(), false};
    r1.match = r1.closed_form == r1.enumerated;
    AuditRow r2{"smlp", c, smlp_param_count(c), smlp.conv_param_count(), false};
    r2.match = r2.closed_form == r2.enumerated;
    table.all_match = table.all_match && r1.match && r2.match;
    table.rows.push_back(r1);
    table.rows.push_back(r2);
  }
  table.stage3_width = base_channels << 2;
  const double smag_c = static_cast<double>(smag_param_count(table.stage3_width));
  const double smlp_c = static_cast<double>(smlp_param_count(table.stage3_width));
  table.reduction_percent = (1.0 - smag_c / smlp_c) * 100.0;
  return table;
}

struct SpectrumResult {
  DenseTensor grid;       // [H,W] channel-averaged centered magnitude
  double hf_ratio = 0.0;  // spectral energy outside the central H/4 disk
};

// Channel-averaged centered spectrum of a [C,H,W] feature map and the
// fraction of spectral energy outside the central low-frequency disk of
// radius H/4.
inline SpectrumResult spectrum(const DenseTensor& feature_map) {
  if (feature_map.rank() != 3) throw ConfigError("spectrum: input must be [C,H,W]");
  const std::size_t C = feature_map.shape[0], H = feature_map.shape[1],
                    W = feature_map.shape[2];
  if (H != W) throw ConfigError("spectrum: feature map must be square");
  SpectrumResult r;
  r.grid = DenseTensor({H, W});
  for (std::size_t c = 0; c < C; ++c) {
    DenseTensor ch({H, W});
    std::copy_n(&feature_map.data[c * H * W], H * W, ch.data.begin());
    const DenseTensor mag = fft2_magnitude(ch);
    for (std::size_t i = 0; i < H * W; ++i) r.grid.data[i] += mag.data[i];
  }
  for (auto& v : r.grid.data) v /= static_cast<double>(C);
  const double cy = static_cast<double>(H / 2), cx = static_cast<double>(W / 2);
  const double radius = static_cast<double>(H) / 4.0;
  double total = 0.0, high = 0.0;
  for (std::size_t u = 0; u < H; ++u) {
    for (std::size_t v = 0; v < W; ++v) {
      const double e = r.grid.data[u * W + v] * r.grid.data[u * W + v];
      total += e;
      const double du = static_cast<double>(u) - cy, dv = static_cast<double>(v) - cx;
      if (std::sqrt(du * du + dv * dv) > radius) high += e;
    }
  }
  if (high <= total * 1e-24) high = 0.0;  // DFT roundoff floor
  r.hf_ratio = total > 0.0 ? high / total : 0.0;
  return r;
}

}  // namespace safnet
