#include <doctest.h>

#include "safnet/attention.hpp"

using namespace safnet;

namespace {

SpikeTensor random_spikes(std::vector<std::size_t> shape, Rng& rng, double p = 0.5) {
  SpikeTensor s(std::move(shape));
  for (auto& v : s.data) v = rng.uniform() < p ? 1 : 0;
  return s;
}

AttentionWeights strong_weights(std::size_t c, Rng& rng) {
  // larger init scale so random instances actually spike
  return AttentionWeights::init(c, rng, 3.0);
}

}  // namespace

TEST_CASE("gen_qk: silent input yields silent Q and K") {
  Rng rng(31);
  AttentionWeights w = AttentionWeights::init(8, rng);
  SpikeTensor x({2, 1, 4, 8});
  QkPair qk = gen_qk(x, w, LifParams{}, true, 2, 2);
  CHECK(qk.q.spike_count() == 0);
  CHECK(qk.k.spike_count() == 0);
  CHECK(qk.q.shape == x.shape);
}

TEST_CASE("gen_qk: strong diagonal projection reproduces the input pattern") {
  Rng rng(32);
  AttentionWeights w = AttentionWeights::init(4, rng);
  for (auto& v : w.w_q.data) v = 0.0;
  for (std::size_t c = 0; c < 4; ++c) w.w_q(c, c) = 10.0;
  SpikeTensor x = random_spikes({3, 2, 5, 4}, rng);
  QkPair qk = gen_qk(x, w, LifParams{}, false);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(qk.q.data[i] == x.data[i]);
}

TEST_CASE("gen_qk matches a step-by-step composition oracle") {
  Rng rng(33);
  AttentionWeights w = strong_weights(4, rng);
  SpikeTensor x = random_spikes({1, 1, 4, 4}, rng);
  QkPair qk = gen_qk(x, w, LifParams{}, true, 2, 2);

  // oracle: explicit per-token linear, then DWConv, BN(infer), LIF
  const std::size_t T = 1, B = 1, N = 4, C = 4;
  DenseTensor lin({T, B, N, C});
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t co = 0; co < C; ++co) {
      double acc = 0.0;
      for (std::size_t c = 0; c < C; ++c) acc += x(0, 0, n, c) * w.w_q(c, co);
      lin(0, 0, n, co) = acc;
    }
  }
  DenseTensor grid = tokens_to_grid(lin, 2, 2);
  grid = depthwise_conv2d(grid, 3, w.dw_q);
  DenseTensor tok = grid_to_tokens(grid, T, B);
  DenseTensor normed = batch_norm(tok, 3, w.bn_q);
  SpikeTensor want = lif_forward(normed, LifParams{}).spikes;
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(qk.q.data[i] == want.data[i]);
}

TEST_CASE("gen_qk rejects token counts that do not form the grid") {
  Rng rng(34);
  AttentionWeights w = AttentionWeights::init(4, rng);
  SpikeTensor x({1, 1, 6, 4});
  CHECK_THROWS_AS(gen_qk(x, w, LifParams{}, true), ConfigError);  // 6 is not square
  CHECK_NOTHROW(gen_qk(x, w, LifParams{}, true, 2, 3));           // explicit 2x3 grid
  CHECK_NOTHROW(gen_qk(x, w, LifParams{}, false));                // no grid needed
}

TEST_CASE("saliency counts channel spikes per token") {
  SpikeTensor ones({2, 1, 3, 8});
  for (auto& v : ones.data) v = 1;
  SaliencyScores a = saliency(ones);
  for (double v : a.a_t.data) CHECK(v == 8.0);

  SpikeTensor zeros({2, 1, 3, 8});
  for (double v : saliency(zeros).a_t.data) CHECK(v == 0.0);

  SpikeTensor q({1, 1, 3, 3});
  const std::uint8_t vals[] = {1, 0, 1, 0, 0, 0, 1, 1, 1};
  std::copy(std::begin(vals), std::end(vals), q.data.begin());
  SaliencyScores s = saliency(q);
  CHECK(s.a_t.data[0] == 2.0);
  CHECK(s.a_t.data[1] == 0.0);
  CHECK(s.a_t.data[2] == 3.0);
}

TEST_CASE("sgm: saturated guidance gives p=1 and k=N") {
  Rng rng(35);
  AttentionWeights w = AttentionWeights::init(8, rng);
  for (auto& v : w.sgm_w1.data) v = 1.0;
  for (auto& v : w.sgm_w2.data) v = 5.0;
  SpikeTensor x({1, 1, 16, 8});
  for (auto& v : x.data) v = 1;
  SgmResult r = sgm_predict_k(x, w, LifParams{});
  CHECK(r.p == 1.0);
  CHECK(r.k == 16);
}

TEST_CASE("sgm: silent guidance clamps k to 1") {
  Rng rng(36);
  AttentionWeights w = AttentionWeights::init(8, rng);
  SpikeTensor x({1, 1, 16, 8});
  SgmResult r = sgm_predict_k(x, w, LifParams{});
  CHECK(r.p == 0.0);
  CHECK(r.k == 1);
}

TEST_CASE("sgm: p is the exact mean of the binary guidance") {
  Rng rng(37);
  for (int trial = 0; trial < 50; ++trial) {
    AttentionWeights w = strong_weights(8, rng);
    SpikeTensor x = random_spikes({2, 2, 16, 8}, rng, rng.uniform(0.1, 0.9));
    SgmResult r = sgm_predict_k(x, w, LifParams{});
    CHECK(r.p == doctest::Approx(static_cast<double>(r.guidance.spike_count()) /
                                 static_cast<double>(r.guidance.size())));
    CHECK(r.p >= 0.0);
    CHECK(r.p <= 1.0);
    CHECK(r.k >= 1);
    CHECK(r.k <= 16);
    const auto floor_k = static_cast<std::size_t>(16.0 * r.p);
    CHECK(r.k == std::clamp<std::size_t>(floor_k, 1, 16));
  }
}

TEST_CASE("topk mask worked examples") {
  SaliencyScores a;
  a.a_t = DenseTensor({1, 1, 4});
  a.a_t.data = {3, 1, 2, 0};
  TopKMask m = topk_mask(a, 2);
  CHECK(m.m_k.data[0] == 1);
  CHECK(m.m_k.data[1] == 0);
  CHECK(m.m_k.data[2] == 1);
  CHECK(m.m_k.data[3] == 0);

  TopKMask full = topk_mask(a, 4);
  CHECK(full.m_k.spike_count() == 4);

  a.a_t.data = {2, 2, 2, 1};
  TopKMask tie = topk_mask(a, 2);
  CHECK(tie.m_k.data[0] == 1);
  CHECK(tie.m_k.data[1] == 1);
  CHECK(tie.m_k.data[2] == 0);
  CHECK(tie.m_k.data[3] == 0);

  CHECK_THROWS_AS(topk_mask(a, 0), ConfigError);
  CHECK_THROWS_AS(topk_mask(a, 5), ConfigError);
}

TEST_CASE("topk mask: exactly k ones and score dominance per slice") {
  Rng rng(38);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t N = 2 + rng.index(14);
    SaliencyScores a;
    a.a_t = DenseTensor({2, 2, N});
    for (auto& v : a.a_t.data) v = static_cast<double>(rng.index(6));
    const std::size_t k = 1 + rng.index(N);
    TopKMask m = topk_mask(a, k);
    for (std::size_t tb = 0; tb < 4; ++tb) {
      std::size_t count = 0;
      double min_in = 1e18, max_out = -1e18;
      for (std::size_t n = 0; n < N; ++n) {
        if (m.m_k.data[tb * N + n]) {
          ++count;
          min_in = std::min(min_in, a.a_t.data[tb * N + n]);
        } else {
          max_out = std::max(max_out, a.a_t.data[tb * N + n]);
        }
      }
      CHECK(count == k);
      if (k < N) CHECK(min_in >= max_out);
    }
  }
}

TEST_CASE("topk mask monotonicity: larger k gives nested active sets") {
  Rng rng(39);
  SaliencyScores a;
  a.a_t = DenseTensor({1, 2, 12});
  for (auto& v : a.a_t.data) v = static_cast<double>(rng.index(5));
  TopKMask prev = topk_mask(a, 1);
  for (std::size_t k = 2; k <= 12; ++k) {
    TopKMask cur = topk_mask(a, k);
    for (std::size_t i = 0; i < cur.m_k.size(); ++i) {
      CHECK(cur.m_k.data[i] >= prev.m_k.data[i]);
    }
    prev = cur;
  }
}

TEST_CASE("saf gate: masked-out tokens produce all-zero rows") {
  Rng rng(40);
  SpikeTensor k_mat = random_spikes({1, 1, 4, 3}, rng);
  SaliencyScores a;
  a.a_t = DenseTensor({1, 1, 4});
  a.a_t.data = {3, 1, 2, 0};
  TopKMask m = topk_mask(a, 2);  // tokens 0 and 2 active
  SpikeTensor gate;
  SpikeTensor out = saf_gate_output(k_mat, a, m, LifParams{}, &gate);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(out(0, 0, 1, c) == 0);
    CHECK(out(0, 0, 3, c) == 0);
    CHECK(out(0, 0, 0, c) == k_mat(0, 0, 0, c));
    CHECK(out(0, 0, 2, c) == k_mat(0, 0, 2, c));
  }
  CHECK(gate.data[0] == 1);
  CHECK(gate.data[1] == 0);
}

TEST_CASE("saf gate closed form on random Q,K") {
  Rng rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    SpikeTensor q = random_spikes({1, 1, 4, 3}, rng);
    SpikeTensor k_mat = random_spikes({1, 1, 4, 3}, rng);
    SaliencyScores a = saliency(q);
    TopKMask m = topk_mask(a, 2);
    SpikeTensor out = saf_gate_output(k_mat, a, m, LifParams{});
    for (std::size_t n = 0; n < 4; ++n) {
      std::uint64_t an = 0;
      for (std::size_t c = 0; c < 3; ++c) an += q(0, 0, n, c);
      const double sn = static_cast<double>(an) - 1.0 >= 0.0 ? 1.0 : 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double want = static_cast<double>(m.m_k(0, 0, n)) * sn * k_mat(0, 0, n, c);
        CHECK(static_cast<double>(out(0, 0, n, c)) == want);
      }
    }
  }
}

TEST_CASE("saf_forward: pass-through when everything is active and salient") {
  Rng rng(42);
  AttentionWeights w = AttentionWeights::init(4, rng);
  for (auto& v : w.w_q.data) v = 0.0;
  for (auto& v : w.w_k.data) v = 0.0;
  for (std::size_t c = 0; c < 4; ++c) {
    w.w_q(c, c) = 10.0;
    w.w_k(c, c) = 10.0;
  }
  SpikeTensor x({1, 1, 4, 4});
  for (auto& v : x.data) v = 1;  // every token fully salient
  SafTrace trace;
  SpikeTensor out = saf_forward(x, w, LifParams{}, SparsityMode::dense, 1.0, false, 0, 0,
                                BnMode::infer, &trace);
  CHECK(trace.dynamic_k == 4);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.data[i] == trace.k.data[i]);
}

TEST_CASE("saf_forward invariants: binarity, sparsity soundness, SGM range") {
  Rng rng(43);
  for (int trial = 0; trial < 40; ++trial) {
    AttentionWeights w = strong_weights(8, rng);
    SpikeTensor x = random_spikes({2, 2, 9, 8}, rng, rng.uniform(0.2, 0.8));
    SafTrace trace;
    SpikeTensor out = saf_forward(x, w, LifParams{}, SparsityMode::dynamic, 1.0, true, 3, 3,
                                  BnMode::infer, &trace);
    CHECK(trace.dynamic_k >= 1);
    CHECK(trace.dynamic_k <= 9);
    for (auto v : out.data) CHECK((v == 0 || v == 1));
    for (auto v : trace.gate.data) CHECK((v == 0 || v == 1));
    // nonzero-output tokens form a subset of the Top-k set
    for (std::size_t t = 0; t < 2; ++t)
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t n = 0; n < 9; ++n) {
          bool nonzero = false;
          for (std::size_t c = 0; c < 8; ++c) nonzero = nonzero || out(t, b, n, c);
          if (nonzero) CHECK(trace.mask.m_k(t, b, n) == 1);
        }
  }
}

TEST_CASE("saf_forward: fixed ratio 1.0 equals dense mode exactly") {
  Rng rng(44);
  for (int trial = 0; trial < 10; ++trial) {
    AttentionWeights w = strong_weights(8, rng);
    SpikeTensor x = random_spikes({2, 1, 16, 8}, rng);
    AttentionWeights w2 = w;
    SpikeTensor fixed = saf_forward(x, w, LifParams{}, SparsityMode::fixed_ratio, 1.0, true);
    SpikeTensor dense = saf_forward(x, w2, LifParams{}, SparsityMode::dense, 1.0, true);
    REQUIRE(fixed.size() == dense.size());
    for (std::size_t i = 0; i < fixed.size(); ++i) CHECK(fixed.data[i] == dense.data[i]);
  }
}

TEST_CASE("ssa_reference basics") {
  Rng rng(45);
  SpikeTensor q = random_spikes({1, 1, 3, 2}, rng);
  SpikeTensor k = random_spikes({1, 1, 3, 2}, rng);
  SpikeTensor zeros({1, 1, 3, 2});
  DenseTensor y = ssa_reference(q, k, zeros);
  for (double v : y.data) CHECK(v == 0.0);

  SpikeTensor q1({1, 1, 1, 2}), k1({1, 1, 1, 2}), v1({1, 1, 1, 2});
  q1.data = {1, 1};
  k1.data = {1, 0};
  v1.data = {1, 1};
  DenseTensor y1 = ssa_reference(q1, k1, v1);  // <q,k>=1; y = SN(1*v) = v
  CHECK(y1.data[0] == 1.0);
  CHECK(y1.data[1] == 1.0);
}

TEST_CASE("ssa_reference matches the triple-loop oracle exactly") {
  Rng rng(46);
  for (int trial = 0; trial < 50; ++trial) {
    SpikeTensor q = random_spikes({1, 2, 3, 2}, rng);
    SpikeTensor k = random_spikes({1, 2, 3, 2}, rng);
    SpikeTensor v = random_spikes({1, 2, 3, 2}, rng);
    const double scale = 1.0;
    DenseTensor got = ssa_reference(q, k, v, scale);
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t c = 0; c < 2; ++c) {
          double acc = 0.0;
          for (std::size_t j = 0; j < 3; ++j) {
            double dot = 0.0;
            for (std::size_t cc = 0; cc < 2; ++cc)
              dot += static_cast<double>(q(0, b, i, cc)) * k(0, b, j, cc);
            acc += dot * v(0, b, j, c);
          }
          const double want = acc * scale - 1.0 >= 0.0 ? 1.0 : 0.0;
          CHECK(got(0, b, i, c) == want);
        }
  }
}

TEST_CASE("accumulation events scale linearly for SAF, quadratically for SSA") {
  Rng rng(47);
  const std::size_t C = 16;
  auto half_spike_tokens = [&](std::size_t n) {
    SpikeTensor x({1, 1, n, C});
    for (std::size_t tok = 0; tok < n; ++tok) {
      std::vector<std::size_t> perm(C);
      std::iota(perm.begin(), perm.end(), 0);
      rng.shuffle(perm);
      for (std::size_t j = 0; j < C / 2; ++j) x.data[tok * C + perm[j]] = 1;
    }
    return x;
  };
  std::vector<double> saf_events, ssa_events;
  for (const std::size_t n : {16u, 64u, 256u}) {
    Rng wrng(48);
    AttentionWeights w = AttentionWeights::init(C, wrng, 3.0);
    SpikeTensor x = half_spike_tokens(n);
    OpCounter saf_ops;
    saf_forward(x, w, LifParams{}, SparsityMode::dynamic, 1.0, false, 0, 0, BnMode::infer,
                nullptr, &saf_ops);
    saf_events.push_back(static_cast<double>(saf_ops.acc_events));
    OpCounter ssa_ops;
    SpikeTensor q = half_spike_tokens(n), k = half_spike_tokens(n), v = half_spike_tokens(n);
    ssa_reference(q, k, v, 1.0, LifParams{}, &ssa_ops);
    ssa_events.push_back(static_cast<double>(ssa_ops.acc_events));
  }
  CHECK(saf_events[1] / saf_events[0] == doctest::Approx(4.0).epsilon(0.05));
  CHECK(saf_events[2] / saf_events[0] == doctest::Approx(16.0).epsilon(0.05));
  CHECK(ssa_events[1] / ssa_events[0] == doctest::Approx(16.0).epsilon(0.10));
  CHECK(ssa_events[2] / ssa_events[0] == doctest::Approx(256.0).epsilon(0.10));
}
