#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "safnet/attention.hpp"
#include "safnet/smag.hpp"

namespace safnet {

enum class FfnKind { smag, smlp };

// Architecture and ablation switches for one model family member.
struct AblationToggles {
  bool use_dwconv_qk = true;
  SparsityMode sgm_mode = SparsityMode::dynamic;
  double fixed_ratio = 0.5;
  FfnKind ffn = FfnKind::smag;
  SmagToggles smag;
};

struct ModelConfig {
  std::size_t input_channels = 3;
  std::size_t base_channels = 16;   // stage widths C, 2C, 4C
  std::array<std::size_t, 3> stage_blocks{1, 1, 1};
  std::size_t timesteps = 2;
  std::size_t image_h = 32;
  std::size_t image_w = 32;
  std::size_t num_classes = 10;
  LifParams lif;
  AblationToggles ablation;

  void validate() const {
    if (input_channels == 0) throw ConfigError("model: zero input channels");
    if (base_channels == 0 || base_channels % 4 != 0) {
      throw ConfigError("model: base_channels " + std::to_string(base_channels) +
                        " must be positive and divisible by 4");
    }
    if (image_h % 16 != 0 || image_w % 16 != 0 || image_h == 0 || image_w == 0) {
      throw ConfigError("model: image size " + std::to_string(image_h) + "x" +
                        std::to_string(image_w) +
                        " must be divisible by 16 (three downsampling stages)");
    }
    if (image_h != image_w) {
      throw ConfigError("model: image must be square; got " + std::to_string(image_h) + "x" +
                        std::to_string(image_w));
    }
    if (timesteps == 0) throw ConfigError("model: timesteps must be >= 1");
    if (num_classes == 0) throw ConfigError("model: num_classes must be >= 1");
    lif.validate();
    ablation.smag.validate();
    if (ablation.sgm_mode == SparsityMode::fixed_ratio &&
        (ablation.fixed_ratio <= 0.0 || ablation.fixed_ratio > 1.0)) {
      throw ConfigError("model: fixed_ratio must be in (0,1]");
    }
  }

  std::size_t stage_channels(std::size_t s) const { return base_channels << s; }
  std::size_t stage_grid_h(std::size_t s) const { return image_h >> (2 + s); }
  std::size_t stage_grid_w(std::size_t s) const { return image_w >> (2 + s); }
  std::size_t stage_tokens(std::size_t s) const { return stage_grid_h(s) * stage_grid_w(s); }
};

struct PatchEmbedWeights {
  DenseTensor conv_w;
  BnParams bn;
};

struct BlockWeights {
  AttentionWeights attn;
  FfnKind ffn = FfnKind::smag;
  SmagWeights smag;
  SmlpWeights smlp;
};

struct ModelWeights {
  std::array<PatchEmbedWeights, 3> embed;
  std::array<std::vector<BlockWeights>, 3> blocks;
  DenseTensor head_w;  // [C3, num_classes]
  DenseTensor head_b;  // [num_classes]
};

inline ModelWeights init_weights(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ModelWeights w;
  auto fill = [&](DenseTensor& t, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.data) v = rng.uniform(-bound, bound);
  };
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t cin = s == 0 ? cfg.input_channels : cfg.stage_channels(s - 1);
    const std::size_t cout = cfg.stage_channels(s);
    w.embed[s].conv_w = DenseTensor({cout, cin, 3, 3});
    fill(w.embed[s].conv_w, cin * 9);
    w.embed[s].bn = BnParams::identity(cout);
    w.blocks[s].resize(cfg.stage_blocks[s]);
    for (auto& blk : w.blocks[s]) {
      blk.attn = AttentionWeights::init(cout, rng);
      blk.ffn = cfg.ablation.ffn;
      if (blk.ffn == FfnKind::smag) {
        blk.smag = SmagWeights::init(cout, cfg.ablation.smag, rng);
      } else {
        blk.smlp = SmlpWeights::init(cout, rng);
      }
    }
  }
  const std::size_t c3 = cfg.stage_channels(2);
  w.head_w = DenseTensor({c3, cfg.num_classes});
  fill(w.head_w, c3);
  w.head_b = DenseTensor::zeros({cfg.num_classes});
  return w;
}

enum class ParamKind { trainable, frozen, buffer };

struct ParamRef {
  std::string name;
  DenseTensor* tensor;
  ParamKind kind;
};

// Deterministic enumeration of every tensor in the model. frozen = the SGM
// projections (no gradient path by construction); buffer = BN running stats.
inline std::vector<ParamRef> parameter_refs(ModelWeights& w) {
  std::vector<ParamRef> refs;
  auto add = [&](const std::string& name, DenseTensor& t, ParamKind kind) {
    refs.push_back({name, &t, kind});
  };
  auto add_bn = [&](const std::string& p, BnParams& bn) {
    add(p + ".gamma", bn.gamma, ParamKind::trainable);
    add(p + ".beta", bn.beta, ParamKind::trainable);
    add(p + ".running_mean", bn.running_mean, ParamKind::buffer);
    add(p + ".running_var", bn.running_var, ParamKind::buffer);
  };
  for (std::size_t s = 0; s < 3; ++s) {
    const std::string sp = "stage" + std::to_string(s + 1);
    add(sp + ".embed.conv", w.embed[s].conv_w, ParamKind::trainable);
    add_bn(sp + ".embed.bn", w.embed[s].bn);
    for (std::size_t b = 0; b < w.blocks[s].size(); ++b) {
      const std::string bp = sp + ".block" + std::to_string(b);
      BlockWeights& blk = w.blocks[s][b];
      add(bp + ".attn.w_q", blk.attn.w_q, ParamKind::trainable);
      add(bp + ".attn.w_k", blk.attn.w_k, ParamKind::trainable);
      add(bp + ".attn.dw_q", blk.attn.dw_q, ParamKind::trainable);
      add(bp + ".attn.dw_k", blk.attn.dw_k, ParamKind::trainable);
      add_bn(bp + ".attn.bn_q", blk.attn.bn_q);
      add_bn(bp + ".attn.bn_k", blk.attn.bn_k);
      add(bp + ".attn.sgm_w1", blk.attn.sgm_w1, ParamKind::frozen);
      add(bp + ".attn.sgm_w2", blk.attn.sgm_w2, ParamKind::frozen);
      if (blk.ffn == FfnKind::smag) {
        if (blk.smag.pconv_w.size() > 0) {
          add(bp + ".ffn.pconv", blk.smag.pconv_w, ParamKind::trainable);
        }
        add(bp + ".ffn.expand", blk.smag.expand_w, ParamKind::trainable);
        add(bp + ".ffn.dw_a", blk.smag.dw_a_w, ParamKind::trainable);
        add(bp + ".ffn.dw_b", blk.smag.dw_b_w, ParamKind::trainable);
        add(bp + ".ffn.project", blk.smag.project_w, ParamKind::trainable);
        add_bn(bp + ".ffn.bn_expand", blk.smag.bn_expand);
        add_bn(bp + ".ffn.bn_gate_a", blk.smag.bn_gate_a);
        add_bn(bp + ".ffn.bn_gate_b", blk.smag.bn_gate_b);
        add_bn(bp + ".ffn.bn_project", blk.smag.bn_project);
      } else {
        add(bp + ".ffn.expand", blk.smlp.expand_w, ParamKind::trainable);
        add(bp + ".ffn.project", blk.smlp.project_w, ParamKind::trainable);
        add_bn(bp + ".ffn.bn_expand", blk.smlp.bn_expand);
        add_bn(bp + ".ffn.bn_project", blk.smlp.bn_project);
      }
    }
  }
  add("head.w", w.head_w, ParamKind::trainable);
  add("head.b", w.head_b, ParamKind::trainable);
  return refs;
}

// Captures time-averaged feature maps ([C,H,W], batch item 0) by layer id.
struct FeatureProbe {
  std::map<std::string, DenseTensor> maps;
  std::vector<std::string> order;

  void capture(const std::string& id, const SpikeTensor& s) {
    const std::size_t T = s.shape[0], B = s.shape[1], C = s.shape[2], H = s.shape[3],
                      W = s.shape[4];
    DenseTensor m({C, H, W});
    const std::size_t chw = C * H * W;
    for (std::size_t t = 0; t < T; ++t) {
      const std::uint8_t* p = &s.data[(t * B) * chw];
      for (std::size_t i = 0; i < chw; ++i) m.data[i] += p[i];
    }
    for (auto& v : m.data) v /= static_cast<double>(T);
    if (!maps.count(id)) order.push_back(id);
    maps[id] = std::move(m);
  }
};

struct ForwardHooks {
  EnergyProbe* energy = nullptr;
  FeatureProbe* features = nullptr;
  OpCounter* ops = nullptr;
};

// One downsampling stage: conv (stride 2 for stage 1, else 1) + BN + SN +
// max_pool(2,2). Output binary, channels C*2^s, spatial /4 then /2, /2.
inline SpikeTensor patch_embed(const DenseTensor& x_seq, std::size_t stage,
                               const ModelConfig& cfg, PatchEmbedWeights& w,
                               BnMode bn_mode = BnMode::infer,
                               const ForwardHooks& hooks = {}) {
  if (x_seq.rank() != 5) throw ConfigError("patch_embed: input must be [T,B,C,H,W]");
  if (stage > 2) throw ConfigError("patch_embed: stage out of range");
  const std::size_t T = x_seq.shape[0], B = x_seq.shape[1], Cin = x_seq.shape[2],
                    H = x_seq.shape[3], W = x_seq.shape[4];
  const std::size_t patch = stage == 0 ? 4 : 2;
  if (H % patch != 0 || W % patch != 0) {
    throw ConfigError("patch_embed: spatial size " + std::to_string(H) + "x" +
                      std::to_string(W) + " not divisible by the stage patch size " +
                      std::to_string(patch));
  }
  const std::size_t cout = cfg.stage_channels(stage);
  const std::size_t stride = stage == 0 ? 2 : 1;
  ConvSpec spec{Cin, cout, 3, stride, 1, 1};
  DenseTensor merged = x_seq.reshaped({T * B, Cin, H, W});
  if (hooks.energy) {
    const std::size_t o = H / stride;
    hooks.energy->record(stage == 0 ? "encoder" : "stage" + std::to_string(stage + 1) + ".embed",
                         stage == 0 ? LayerKind::ann_encoder : LayerKind::snn, o, Cin, cout, 3,
                         detail::nonzero_count(merged), merged.size());
  }
  if (hooks.ops) hooks.ops->add(detail::conv_events(merged, spec));
  DenseTensor conv = conv2d(merged, spec, w.conv_w);
  conv = batch_norm(conv, 1, w.bn, bn_mode);
  SpikeTensor spikes =
      lif_forward(conv.reshaped({T, B, cout, conv.shape[2], conv.shape[3]}), cfg.lif).spikes;
  if (hooks.features) {
    hooks.features->capture("stage" + std::to_string(stage + 1) + ".embed.pre_pool", spikes);
  }
  SpikeTensor pooled = max_pool(
      SpikeTensor::from_dense(
          spikes.to_dense().reshaped({T * B, cout, conv.shape[2], conv.shape[3]})),
      2, 2);
  SpikeTensor out(std::vector<std::size_t>{T, B, cout, pooled.shape[2], pooled.shape[3]});
  out.data = std::move(pooled.data);
  if (hooks.features) {
    hooks.features->capture("stage" + std::to_string(stage + 1) + ".embed", out);
  }
  return out;
}

namespace detail {

inline SpikeTensor tokens_from_grid_spikes(const SpikeTensor& s) {
  const std::size_t T = s.shape[0], B = s.shape[1];
  DenseTensor merged = s.to_dense().reshaped(
      {T * B, s.shape[2], s.shape[3], s.shape[4]});
  return SpikeTensor::from_dense(grid_to_tokens(merged, T, B));
}

}  // namespace detail

// One SAFformer block over grid spikes [T,B,C,H,W]:
//   A  = SAF(X)           (binary)
//   R1 = X + A            (membrane-domain, values in {0,1,2})
//   out = FFN(R1) with R1 re-injected at the FFN's final membrane, so the
//   block output is binary.
inline SpikeTensor block_forward(const SpikeTensor& x_grid, const ModelConfig& cfg,
                                 BlockWeights& blk, BnMode bn_mode,
                                 const ForwardHooks& hooks, const std::string& id_prefix) {
  const std::size_t T = x_grid.shape[0], B = x_grid.shape[1], C = x_grid.shape[2],
                    H = x_grid.shape[3], W = x_grid.shape[4];
  SpikeTensor x_tok = detail::tokens_from_grid_spikes(x_grid);
  SpikeTensor attn =
      saf_forward(x_tok, blk.attn, cfg.lif, cfg.ablation.sgm_mode, cfg.ablation.fixed_ratio,
                  cfg.ablation.use_dwconv_qk, H, W, bn_mode, nullptr, hooks.ops, hooks.energy,
                  id_prefix + ".attn");
  if (hooks.features) {
    DenseTensor ag = tokens_to_grid(attn.to_dense(), H, W).reshaped({T, B, C, H, W});
    hooks.features->capture(id_prefix + ".attn", SpikeTensor::from_dense(ag));
  }
  DenseTensor r1_tok({T, B, x_tok.shape[2], C});
  for (std::size_t i = 0; i < r1_tok.size(); ++i) {
    r1_tok.data[i] = static_cast<double>(x_tok.data[i]) + static_cast<double>(attn.data[i]);
  }
  DenseTensor r1 = tokens_to_grid(r1_tok, H, W).reshaped({T, B, C, H, W});
  SpikeTensor out;
  if (blk.ffn == FfnKind::smag) {
    out = smag_forward(r1, blk.smag, cfg.lif, cfg.ablation.smag, bn_mode, &r1, hooks.ops,
                       hooks.energy, id_prefix + ".ffn");
  } else {
    out = smlp_forward(r1, blk.smlp, cfg.lif, bn_mode, &r1, hooks.ops, hooks.energy,
                       id_prefix + ".ffn");
  }
  if (hooks.features) hooks.features->capture(id_prefix, out);
  return out;
}

// Full inference: images repeated across T, three stages of patch embedding
// and SAFformer blocks, global average pooling, linear head, mean over T.
inline DenseTensor model_forward(const DenseTensor& images, const ModelConfig& cfg,
                                 ModelWeights& w, const ForwardHooks& hooks = {},
                                 BnMode bn_mode = BnMode::infer) {
  cfg.validate();
  if (images.rank() != 4 || images.shape[1] != cfg.input_channels ||
      images.shape[2] != cfg.image_h || images.shape[3] != cfg.image_w) {
    throw ConfigError("model_forward: input shape " + shape_str(images.shape) +
                      " does not match config");
  }
  images.require_finite("model_forward");
  const std::size_t B = images.shape[0], T = cfg.timesteps;
  DenseTensor x_seq({T, B, cfg.input_channels, cfg.image_h, cfg.image_w});
  for (std::size_t t = 0; t < T; ++t) {
    std::copy(images.data.begin(), images.data.end(), x_seq.data.begin() + t * images.size());
  }

  SpikeTensor st;
  for (std::size_t s = 0; s < 3; ++s) {
    const DenseTensor stage_in = s == 0 ? x_seq : st.to_dense();
    st = patch_embed(stage_in, s, cfg, w.embed[s], bn_mode, hooks);
    for (std::size_t b = 0; b < w.blocks[s].size(); ++b) {
      st = block_forward(st, cfg, w.blocks[s][b], bn_mode, hooks,
                         "stage" + std::to_string(s + 1) + ".block" + std::to_string(b));
    }
  }

  const std::size_t C3 = st.shape[2], H3 = st.shape[3], W3 = st.shape[4];
  if (hooks.energy) {
    hooks.energy->record("head", LayerKind::snn, detail::grid_side(H3 * W3), C3,
                         cfg.num_classes, 1, st.spike_count(), st.size());
  }
  if (hooks.ops) {
    hooks.ops->add(st.spike_count() * cfg.num_classes);
  }
  DenseTensor logits({B, cfg.num_classes});
  const std::size_t hw = H3 * W3;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t k = 0; k < cfg.num_classes; ++k) {
        double acc = w.head_b.data[k];
        for (std::size_t c = 0; c < C3; ++c) {
          double feat = 0.0;
          const std::uint8_t* p = &st.data[(((t * B + b) * C3 + c) * hw)];
          for (std::size_t i = 0; i < hw; ++i) feat += p[i];
          acc += feat / static_cast<double>(hw) * w.head_w.data[c * cfg.num_classes + k];
        }
        logits.data[b * cfg.num_classes + k] += acc / static_cast<double>(T);
      }
    }
  }
  return logits;
}

// Runs inference over the sample batch and accumulates per-layer input
// sparsity; fr for a layer is (nonzero input elements)/(total input
// elements), accumulated across samples and timesteps.
inline EnergyProbe record_firing_rates(const ModelConfig& cfg, ModelWeights& w,
                                       const DenseTensor& samples) {
  if (samples.rank() != 4 || samples.shape[0] == 0) {
    throw ConfigError("record_firing_rates: empty sample set");
  }
  EnergyProbe probe;
  ForwardHooks hooks;
  hooks.energy = &probe;
  model_forward(samples, cfg, w, hooks);
  return probe;
}

struct ParamCounts {
  struct Module {
    std::string name;
    std::size_t conv_linear = 0;
  };
  std::vector<Module> modules;
  std::size_t conv_linear = 0;  // conv + linear weights (incl. head bias)
  std::size_t bn_affine = 0;    // gamma + beta
  std::size_t sgm = 0;          // frozen guidance projections
  std::size_t total = 0;        // enumeration of all non-buffer tensors
};

inline ParamCounts count_params(const ModelConfig& cfg) {
  cfg.validate();
  ModelWeights w = init_weights(cfg, 0);
  ParamCounts pc;
  std::map<std::string, std::size_t> per_module;
  std::vector<std::string> order;
  for (const auto& ref : parameter_refs(w)) {
    if (ref.kind == ParamKind::buffer) continue;
    pc.total += ref.tensor->size();
    const bool is_bn = ref.name.find(".gamma") != std::string::npos ||
                       ref.name.find(".beta") != std::string::npos;
    if (ref.kind == ParamKind::frozen) {
      pc.sgm += ref.tensor->size();
      continue;
    }
    if (is_bn) {
      pc.bn_affine += ref.tensor->size();
      continue;
    }
    pc.conv_linear += ref.tensor->size();
    std::string mod = ref.name.substr(0, ref.name.rfind('.'));
    if (mod.rfind("head", 0) == 0) mod = "head";
    auto pos = mod.find(".attn");
    if (pos != std::string::npos) mod = mod.substr(0, pos) + ".attn";
    pos = mod.find(".ffn");
    if (pos != std::string::npos) mod = mod.substr(0, pos) + ".ffn";
    if (!per_module.count(mod)) order.push_back(mod);
    per_module[mod] += ref.tensor->size();
  }
  for (const auto& name : order) pc.modules.push_back({name, per_module[name]});
  return pc;
}

}  // namespace safnet
