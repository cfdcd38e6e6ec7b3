#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "safnet/autodiff.hpp"
#include "safnet/dataset.hpp"
#include "safnet/model.hpp"

namespace safnet {

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  std::uint64_t seed = 1;
  std::string optimizer = "adam-variant";  // or "sgd-momentum"
  double momentum = 0.9;
  double grad_clip = 5.0;
  std::string loss = "cross-entropy";
  double target_accuracy = 0.0;  // >0: stop once train accuracy reaches it

  void validate() const {
    if (epochs == 0 || batch_size == 0) throw ConfigError("train: zero epochs or batch size");
    if (optimizer != "adam-variant" && optimizer != "sgd-momentum") {
      throw ConfigError("train: unknown optimizer '" + optimizer + "'");
    }
    if (loss != "cross-entropy") throw ConfigError("train: unsupported loss '" + loss + "'");
    if (!(learning_rate >= 0.0)) throw ConfigError("train: negative learning rate");
  }
};

// Model weights plus gradient/optimizer slots. Slots hold pointers into the
// weight storage, so the instance must stay put once initialized.
struct TrainableModel {
  ModelConfig config;
  ModelWeights weights;
  std::vector<ad::ParamSlot> slots;

  TrainableModel() = default;
  TrainableModel(const TrainableModel&) = delete;
  TrainableModel& operator=(const TrainableModel&) = delete;

  void init(const ModelConfig& cfg, std::uint64_t seed) {
    config = cfg;
    weights = init_weights(cfg, seed);
    rebuild_slots();
  }

  void rebuild_slots() {
    slots.clear();
    for (auto& ref : parameter_refs(weights)) {
      if (ref.kind != ParamKind::trainable) continue;
      ad::ParamSlot s;
      s.name = ref.name;
      s.value = ref.tensor;
      slots.push_back(std::move(s));
    }
  }

  void zero_grads() {
    for (auto& s : slots) s.zero_grad();
  }

  std::size_t trainable_scalars() const {
    std::size_t n = 0;
    for (const auto& s : slots) n += s.value->size();
    return n;
  }

  ad::ParamSlot* slot(const std::string& name) {
    for (auto& s : slots) {
      if (s.name == name) return &s;
    }
    return nullptr;
  }
};

namespace detail {

// value-level SGM pass: the dynamic k is a non-differentiable constant
// within a step, so it is computed outside the tape
inline std::size_t sgm_k_from_values(const DenseTensor& x_tok, const AttentionWeights& w,
                                     const LifParams& lif, bool relaxed, double temperature) {
  const std::size_t T = x_tok.shape[0], B = x_tok.shape[1], N = x_tok.shape[2];
  DenseTensor f = token_linear(x_tok, w.sgm_w1, nullptr);
  for (auto& v : f.data) v = v > 0.0 ? v : 0.0;
  DenseTensor g_pre = token_linear(f, w.sgm_w2, nullptr).reshaped({T, B, N});
  double p = 0.0;
  if (relaxed) {
    const DenseTensor g = relaxed_forward(g_pre, lif, temperature);
    for (double v : g.data) p += v;
    p /= static_cast<double>(g.size());
  } else {
    const SpikeTensor g = lif_forward(g_pre, lif).spikes;
    p = static_cast<double>(g.spike_count()) / static_cast<double>(g.size());
  }
  const auto floor_k = static_cast<std::size_t>(static_cast<double>(N) * p);
  return std::clamp<std::size_t>(floor_k, 1, N);
}

// Top-K mask over score values, ties broken by lowest token index; same rule
// as the inference-path mask
inline DenseTensor topk_mask_values(const DenseTensor& a, std::size_t k) {
  const std::size_t TB = a.shape[0] * a.shape[1], N = a.shape[2];
  DenseTensor m(a.shape);
  std::vector<std::size_t> idx(N);
  for (std::size_t tb = 0; tb < TB; ++tb) {
    const double* row = &a.data[tb * N];
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) {
      if (row[i] != row[j]) return row[i] > row[j];
      return i < j;
    });
    for (std::size_t r = 0; r < k; ++r) m.data[tb * N + idx[r]] = 1.0;
  }
  return m;
}

}  // namespace detail

struct BuildOptions {
  BnMode bn_mode = BnMode::train;
  bool relaxed = false;
  double temperature = 1.0;
  ad::FrozenContext* frozen = nullptr;
  std::vector<std::pair<std::string, ad::Node*>>* layer_trace = nullptr;
};

// Differentiable forward pass mirroring model_forward layer for layer. In
// hard (non-relaxed) mode with infer-mode BN its outputs match the pure
// inference path bit for bit.
inline ad::Node* build_logits(ad::Tape& tape, TrainableModel& m, const DenseTensor& images,
                              const BuildOptions& opt = {}) {
  using namespace ad;
  const ModelConfig& cfg = m.config;
  cfg.validate();
  const std::size_t B = images.shape[0], T = cfg.timesteps;
  auto trace = [&](const std::string& name, Node* n) {
    if (opt.layer_trace) opt.layer_trace->push_back({name, n});
  };
  auto slot_of = [&](const std::string& name) {
    ParamSlot* s = m.slot(name);
    if (!s) throw ConfigError("build_logits: no slot named " + name);
    return tape.leaf(s);
  };
  auto lif = [&](Node* x) {
    return lif_seq(tape, x, cfg.lif, opt.relaxed, opt.temperature, opt.frozen);
  };
  auto bn_at = [&](Node* x, std::size_t ch_axis, const std::string& prefix, BnParams* bn) {
    Node* g = slot_of(prefix + ".gamma");
    Node* b = slot_of(prefix + ".beta");
    return batch_norm_node(tape, x, g, b, ch_axis, opt.bn_mode, bn);
  };

  DenseTensor x_seq({T, B, cfg.input_channels, cfg.image_h, cfg.image_w});
  for (std::size_t t = 0; t < T; ++t) {
    std::copy(images.data.begin(), images.data.end(), x_seq.data.begin() + t * images.size());
  }
  Node* cur = tape.constant(
      x_seq.reshaped({T * B, cfg.input_channels, cfg.image_h, cfg.image_w}));

  for (std::size_t s = 0; s < 3; ++s) {
    const std::string sp = "stage" + std::to_string(s + 1);
    const std::size_t cin = cur->val.shape[1];
    const std::size_t cout = cfg.stage_channels(s);
    const std::size_t stride = s == 0 ? 2 : 1;
    ConvSpec spec{cin, cout, 3, stride, 1, 1};
    Node* conv = conv2d_node(tape, cur, slot_of(sp + ".embed.conv"), spec);
    Node* normed = bn_at(conv, 1, sp + ".embed.bn", &m.weights.embed[s].bn);
    const std::size_t eh = normed->val.shape[2], ew = normed->val.shape[3];
    Node* spk = lif(reshape(tape, normed, {T, B, cout, eh, ew}));
    Node* pooled = max_pool_node(tape, reshape(tape, spk, {T * B, cout, eh, ew}), 2, 2);
    cur = pooled;
    trace(sp + ".embed", cur);

    const std::size_t gh = cur->val.shape[2], gw = cur->val.shape[3];
    const std::size_t N = gh * gw;
    for (std::size_t bidx = 0; bidx < m.weights.blocks[s].size(); ++bidx) {
      const std::string bp = sp + ".block" + std::to_string(bidx);
      BlockWeights& blk = m.weights.blocks[s][bidx];
      Node* x_tok = grid_to_tokens_node(tape, cur, T, B);

      auto qk_path = [&](const char* tag, BnParams* bn) {
        Node* lin = linear(tape, x_tok, slot_of(bp + ".attn.w_" + tag));
        if (cfg.ablation.use_dwconv_qk) {
          Node* grid = tokens_to_grid_node(tape, lin, gh, gw);
          grid = conv2d_node(tape, grid, slot_of(bp + ".attn.dw_" + tag),
                             ConvSpec{cout, cout, 3, 1, 1, cout});
          lin = grid_to_tokens_node(tape, grid, T, B);
        }
        Node* normed_tok = bn_at(lin, 3, bp + ".attn.bn_" + tag, bn);
        return lif(normed_tok);
      };
      Node* q = qk_path("q", &blk.attn.bn_q);
      Node* k_mat = qk_path("k", &blk.attn.bn_k);
      Node* a = sum_lastdim(tape, q);

      std::size_t kk = N;
      DenseTensor mask;
      if (opt.frozen && !opt.frozen->recording) {
        kk = opt.frozen->next_topk();
        mask = opt.frozen->next_mask();
      } else {
        if (cfg.ablation.sgm_mode == SparsityMode::dynamic) {
          kk = safnet::detail::sgm_k_from_values(x_tok->val, blk.attn, cfg.lif, opt.relaxed,
                                         opt.temperature);
        } else if (cfg.ablation.sgm_mode == SparsityMode::fixed_ratio) {
          kk = std::clamp<std::size_t>(
              static_cast<std::size_t>(cfg.ablation.fixed_ratio * static_cast<double>(N)), 1, N);
        }
        mask = safnet::detail::topk_mask_values(a->val, kk);
        if (opt.frozen && opt.frozen->recording) {
          opt.frozen->topk.push_back(kk);
          opt.frozen->masks.push_back(mask);
        }
      }
      Node* gate_in = mul_const(tape, a, mask);
      Node* gate = spike_step_node(tape, gate_in, cfg.lif, opt.relaxed, opt.temperature);
      Node* attn_out = mul_broadcast_lastdim(tape, k_mat, gate);
      trace(bp + ".attn", attn_out);

      Node* r1_tok = add(tape, x_tok, attn_out);
      Node* r1 = tokens_to_grid_node(tape, r1_tok, gh, gw);  // [T*B, C, gh, gw]

      Node* ffn_membrane = nullptr;
      if (blk.ffn == FfnKind::smag) {
        Node* pc = r1;
        if (!cfg.ablation.smag.no_pconv) {
          const std::size_t cq = cout / 4;
          Node* head_ch = slice_channels_node(tape, r1, 0, cq);
          head_ch = conv2d_node(tape, head_ch, slot_of(bp + ".ffn.pconv"),
                                ConvSpec{cq, cq, 3, 1, 1, 1});
          pc = concat_channels(tape, head_ch, slice_channels_node(tape, r1, cq, cout));
        }
        Node* expanded = conv2d_node(tape, pc, slot_of(bp + ".ffn.expand"),
                                     ConvSpec{cout, 4 * cout, 1, 1, 0, 1});
        expanded = bn_at(expanded, 1, bp + ".ffn.bn_expand", &blk.smag.bn_expand);
        Node* xp = lif(reshape(tape, expanded, {T, B, 4 * cout, gh, gw}));
        xp = reshape(tape, xp, {T * B, 4 * cout, gh, gw});
        Node* x1 = slice_channels_node(tape, xp, 0, cout);
        Node* x2 = slice_channels_node(tape, xp, cout, 2 * cout);
        Node* x3 = slice_channels_node(tape, xp, 2 * cout, 4 * cout);
        auto gate_branch = [&](Node* xin, const char* tag, std::size_t kern, BnParams* bn) {
          Node* gx = conv2d_node(tape, xin, slot_of(bp + ".ffn.dw_" + tag),
                                 ConvSpec{cout, cout, kern, 1, kern / 2, cout});
          gx = bn_at(gx, 1, bp + std::string(".ffn.bn_gate_") + tag, bn);
          Node* spk2 = lif(reshape(tape, gx, {T, B, cout, gh, gw}));
          return reshape(tape, spk2, {T * B, cout, gh, gw});
        };
        Node* g1 = gate_branch(x1, "a", cfg.ablation.smag.gate_kernel_a(), &blk.smag.bn_gate_a);
        Node* g2 = gate_branch(x2, "b", cfg.ablation.smag.gate_kernel_b(), &blk.smag.bn_gate_b);
        Node* gated = mul(tape, concat_channels(tape, g1, g2), x3);
        Node* proj = conv2d_node(tape, gated, slot_of(bp + ".ffn.project"),
                                 ConvSpec{2 * cout, cout, 1, 1, 0, 1});
        ffn_membrane = bn_at(proj, 1, bp + ".ffn.bn_project", &blk.smag.bn_project);
      } else {
        Node* expanded = conv2d_node(tape, r1, slot_of(bp + ".ffn.expand"),
                                     ConvSpec{cout, 4 * cout, 1, 1, 0, 1});
        expanded = bn_at(expanded, 1, bp + ".ffn.bn_expand", &blk.smlp.bn_expand);
        Node* hidden = lif(reshape(tape, expanded, {T, B, 4 * cout, gh, gw}));
        hidden = reshape(tape, hidden, {T * B, 4 * cout, gh, gw});
        Node* proj = conv2d_node(tape, hidden, slot_of(bp + ".ffn.project"),
                                 ConvSpec{4 * cout, cout, 1, 1, 0, 1});
        ffn_membrane = bn_at(proj, 1, bp + ".ffn.bn_project", &blk.smlp.bn_project);
      }
      Node* with_res = add(tape, ffn_membrane, r1);
      Node* out = lif(reshape(tape, with_res, {T, B, cout, gh, gw}));
      cur = reshape(tape, out, {T * B, cout, gh, gw});
      trace(bp, cur);
    }
  }

  const std::size_t C3 = cur->val.shape[1], HW = cur->val.shape[2] * cur->val.shape[3];
  Node* tokens = reshape(tape, cur, {T, B, C3, HW});
  Node* feat = mean_over_axis(tape, tokens, 3);  // [T,B,C3]
  Node* head = linear(tape, feat, slot_of("head.w"));
  head = add_bias(tape, head, slot_of("head.b"));
  Node* logits = mean_over_axis(tape, head, 0);  // [B,num_classes]
  trace("head", logits);
  return logits;
}

struct LossResult {
  double loss = 0.0;
  DenseTensor logits;
};

// Cross-entropy on mean-over-T logits with reverse accumulation through all
// layers and time. Gradients land in the model's slots.
inline LossResult loss_and_grad(TrainableModel& m, const DenseTensor& images,
                                const std::vector<int>& labels, const BuildOptions& opt = {}) {
  m.zero_grads();
  ad::Tape tape(true);
  std::vector<std::pair<std::string, ad::Node*>> layers;
  BuildOptions o = opt;
  o.layer_trace = &layers;
  ad::Node* logits = build_logits(tape, m, images, o);
  ad::Node* loss = ad::cross_entropy_mean(tape, logits, labels);
  if (!std::isfinite(loss->val.data[0])) {
    for (const auto& [name, node] : layers) {
      if (!node->val.all_finite()) {
        throw ConfigError("loss_and_grad: non-finite loss; first offending layer: " + name);
      }
    }
    throw ConfigError("loss_and_grad: non-finite loss at the loss node");
  }
  tape.backward(loss);
  for (const auto& s : m.slots) {
    if (!s.grad.data.empty() && !s.grad.all_finite()) {
      throw ConfigError("loss_and_grad: non-finite gradient in " + s.name);
    }
  }
  LossResult r;
  r.loss = loss->val.data[0];
  r.logits = logits->val;
  return r;
}

inline double clip_global_norm(std::vector<ad::ParamSlot>& slots, double max_norm) {
  double sq = 0.0;
  for (const auto& s : slots) {
    for (double g : s.grad.data) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& s : slots) {
      for (auto& g : s.grad.data) g *= scale;
    }
  }
  return norm;
}

inline void sgd_momentum_step(std::vector<ad::ParamSlot>& slots, double lr, double momentum,
                              double weight_decay) {
  for (auto& s : slots) {
    if (s.m.data.empty()) s.m = DenseTensor::zeros(s.value->shape);
    for (std::size_t i = 0; i < s.value->size(); ++i) {
      const double g = s.grad.data[i] + weight_decay * s.value->data[i];
      s.m.data[i] = momentum * s.m.data[i] + g;
      s.value->data[i] -= lr * s.m.data[i];
    }
  }
}

inline void adamw_step(std::vector<ad::ParamSlot>& slots, double lr, double weight_decay,
                       std::size_t step, double beta1 = 0.9, double beta2 = 0.999,
                       double eps = 1e-8) {
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (auto& s : slots) {
    if (s.m.data.empty()) {
      s.m = DenseTensor::zeros(s.value->shape);
      s.v = DenseTensor::zeros(s.value->shape);
    }
    for (std::size_t i = 0; i < s.value->size(); ++i) {
      const double g = s.grad.data[i];
      s.m.data[i] = beta1 * s.m.data[i] + (1.0 - beta1) * g;
      s.v.data[i] = beta2 * s.v.data[i] + (1.0 - beta2) * g * g;
      const double mhat = s.m.data[i] / bc1;
      const double vhat = s.v.data[i] / bc2;
      s.value->data[i] -= lr * weight_decay * s.value->data[i];
      s.value->data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  std::size_t best_epoch = 0;
  double best_acc = 0.0;
};

inline std::size_t argmax_row(const DenseTensor& logits, std::size_t row) {
  const std::size_t K = logits.shape[1];
  std::size_t best = 0;
  for (std::size_t k = 1; k < K; ++k) {
    if (logits.data[row * K + k] > logits.data[row * K + best]) best = k;
  }
  return best;
}

// Single-threaded reference loop: fixed seed implies bit-identical weights
// and metric histories. `persist` is invoked when the best train accuracy
// improves and once at the end, with tags "best" and "final".
inline TrainResult train_loop(
    TrainableModel& m, const LabeledImages& data, const TrainConfig& tc,
    std::ostream* metrics_stream = nullptr,
    const std::function<void(const TrainableModel&, const std::string&)>& persist = {}) {
  tc.validate();
  if (data.count == 0) throw ConfigError("train_loop: empty dataset");
  if (data.channels != m.config.input_channels || data.height != m.config.image_h ||
      data.width != m.config.image_w) {
    throw ConfigError("train_loop: dataset shape does not match model config");
  }
  TrainResult result;
  std::vector<std::size_t> order(data.count);
  std::iota(order.begin(), order.end(), 0);
  std::size_t opt_step = 0;
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng shuffle_rng(tc.seed * 0x9e3779b97f4a7c15ULL + epoch + 1);
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < data.count; start += tc.batch_size) {
      const std::size_t end = std::min(data.count, start + tc.batch_size);
      std::vector<std::size_t> idx(order.begin() + start, order.begin() + end);
      std::vector<int> labels;
      DenseTensor batch = make_batch(data, idx, &labels);
      const LossResult lr = loss_and_grad(m, batch, labels);
      clip_global_norm(m.slots, tc.grad_clip);
      ++opt_step;
      if (tc.optimizer == "adam-variant") {
        adamw_step(m.slots, tc.learning_rate, tc.weight_decay, opt_step);
      } else {
        sgd_momentum_step(m.slots, tc.learning_rate, tc.momentum, tc.weight_decay);
      }
      loss_sum += lr.loss * static_cast<double>(idx.size());
      for (std::size_t b = 0; b < idx.size(); ++b) {
        if (static_cast<int>(argmax_row(lr.logits, b)) == labels[b]) ++correct;
      }
    }
    const auto t1 = std::chrono::steady_clock::now();
    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = loss_sum / static_cast<double>(data.count);
    em.train_acc = static_cast<double>(correct) / static_cast<double>(data.count);
    em.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    result.history.push_back(em);
    if (metrics_stream) {
      std::ostringstream os;
      os.setf(std::ios::fmtflags(0), std::ios::floatfield);
      os << std::setprecision(17) << "{\"epoch\":" << em.epoch
         << ",\"train_loss\":" << em.train_loss << ",\"train_acc\":" << em.train_acc
         << ",\"wall_ms\":" << em.wall_ms << "}";
      (*metrics_stream) << os.str() << "\n";
      metrics_stream->flush();
    }
    if (em.train_acc > result.best_acc || result.history.size() == 1) {
      result.best_acc = em.train_acc;
      result.best_epoch = epoch;
      if (persist) persist(m, "best");
    }
    if (tc.target_accuracy > 0.0 && em.train_acc >= tc.target_accuracy) break;
  }
  if (persist) persist(m, "final");
  return result;
}

struct GradReport {
  struct Entry {
    std::string name;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    bool pass = true;
  };
  std::vector<Entry> per_param;
  double max_rel_err = 0.0;
  double fraction_ok = 1.0;
  bool pass = false;
  std::vector<std::string> failing;
};

// Central finite differences per parameter against the analytic gradient, in
// relaxed mode with the Top-K masks, dynamic k and reset gates frozen at the
// base point. Guarded to models with <= 50k trainable scalars.
inline GradReport grad_check(TrainableModel& m, const DenseTensor& images,
                             const std::vector<int>& labels, double rtol,
                             double fd_eps = 1e-4, double min_fraction = 0.99,
                             double atol = 1e-7) {
  if (m.trainable_scalars() > 50000) {
    throw ConfigError("grad_check: model has " + std::to_string(m.trainable_scalars()) +
                      " trainable scalars (limit 50000)");
  }
  ad::FrozenContext fc;
  fc.recording = true;
  BuildOptions opt;
  opt.bn_mode = BnMode::train;
  opt.relaxed = true;
  opt.temperature = 1.0;
  opt.frozen = &fc;

  m.zero_grads();
  {
    ad::Tape tape(true);
    ad::Node* logits = build_logits(tape, m, images, opt);
    ad::Node* loss = ad::cross_entropy_mean(tape, logits, labels);
    tape.backward(loss);
  }
  std::vector<DenseTensor> analytic;
  for (auto& s : m.slots) analytic.push_back(s.grad);

  fc.recording = false;
  auto eval_loss = [&]() {
    fc.rewind();
    ad::Tape tape(false);
    ad::Node* logits = build_logits(tape, m, images, opt);
    ad::Node* loss = ad::cross_entropy_mean(tape, logits, labels);
    return loss->val.data[0];
  };

  GradReport report;
  std::size_t total = 0, ok_count = 0;
  for (std::size_t si = 0; si < m.slots.size(); ++si) {
    ad::ParamSlot& s = m.slots[si];
    GradReport::Entry e;
    e.name = s.name;
    for (std::size_t i = 0; i < s.value->size(); ++i) {
      const double orig = s.value->data[i];
      s.value->data[i] = orig + fd_eps;
      const double lp = eval_loss();
      s.value->data[i] = orig - fd_eps;
      const double lm = eval_loss();
      s.value->data[i] = orig;
      const double fd = (lp - lm) / (2.0 * fd_eps);
      const double an = analytic[si].data.empty() ? 0.0 : analytic[si].data[i];
      const double abs_err = std::abs(fd - an);
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-12});
      e.max_rel_err = std::max(e.max_rel_err, abs_err / denom);
      e.max_abs_err = std::max(e.max_abs_err, abs_err);
      ++total;
      if (abs_err <= atol + rtol * std::max(std::abs(fd), std::abs(an))) {
        ++ok_count;
      } else if (e.pass) {
        e.pass = false;
      }
    }
    report.max_rel_err = std::max(report.max_rel_err, e.max_rel_err);
    if (!e.pass) report.failing.push_back(e.name);
    report.per_param.push_back(std::move(e));
  }
  report.fraction_ok = total == 0 ? 1.0 : static_cast<double>(ok_count) / total;
  report.pass = report.fraction_ok >= min_fraction;
  return report;
}

// Pure-path evaluation accuracy (infer-mode BN, hard spikes).
inline double eval_accuracy(const ModelConfig& cfg, ModelWeights& w, const LabeledImages& data,
                            std::size_t batch_size = 64) {
  if (data.count == 0) throw ConfigError("eval_accuracy: empty dataset");
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.count; start += batch_size) {
    const std::size_t end = std::min(data.count, start + batch_size);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    std::vector<int> labels;
    DenseTensor batch = make_batch(data, idx, &labels);
    DenseTensor logits = model_forward(batch, cfg, w);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      if (static_cast<int>(argmax_row(logits, b)) == labels[b]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.count);
}

}  // namespace safnet
