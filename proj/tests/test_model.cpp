#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "safnet/checkpoint.hpp"
#include "safnet/model.hpp"

using namespace safnet;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.input_channels = 1;
  cfg.base_channels = 8;
  cfg.stage_blocks = {1, 1, 1};
  cfg.timesteps = 2;
  cfg.image_h = cfg.image_w = 16;
  cfg.num_classes = 2;
  return cfg;
}

DenseTensor random_images(std::size_t b, const ModelConfig& cfg, Rng& rng) {
  DenseTensor x({b, cfg.input_channels, cfg.image_h, cfg.image_w});
  for (auto& v : x.data) v = rng.uniform();
  return x;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.image_h = 24;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.image_h = 32;
  cfg.image_w = 16;  // token grids must stay square
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.base_channels = 6;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.ablation.sgm_mode = SparsityMode::fixed_ratio;
  cfg.ablation.fixed_ratio = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("patch embed pyramid: 32x32 input gives 8x8, 4x4, 2x2 token grids") {
  ModelConfig cfg = tiny_config();
  cfg.image_h = cfg.image_w = 32;
  cfg.base_channels = 64;
  CHECK(cfg.stage_grid_h(0) == 8);
  CHECK(cfg.stage_grid_h(1) == 4);
  CHECK(cfg.stage_grid_h(2) == 2);
  CHECK(cfg.stage_channels(0) == 64);
  CHECK(cfg.stage_channels(1) == 128);
  CHECK(cfg.stage_channels(2) == 256);
  CHECK(cfg.stage_tokens(0) == 16 * cfg.stage_tokens(2));
  CHECK(cfg.stage_tokens(1) == 4 * cfg.stage_tokens(2));

  cfg.base_channels = 8;
  ModelWeights w = init_weights(cfg, 1);
  DenseTensor x = DenseTensor::zeros({2, 1, 32, 32});
  DenseTensor x_seq({cfg.timesteps, 2, 1, 32, 32});
  SpikeTensor e1 = patch_embed(x_seq, 0, cfg, w.embed[0]);
  CHECK(e1.shape == std::vector<std::size_t>{2, 2, 8, 8, 8});
  CHECK(e1.spike_count() == 0);  // all-zero input embeds to silence
  SpikeTensor e2 = patch_embed(e1.to_dense(), 1, cfg, w.embed[1]);
  CHECK(e2.shape == std::vector<std::size_t>{2, 2, 16, 4, 4});
  SpikeTensor e3 = patch_embed(e2.to_dense(), 2, cfg, w.embed[2]);
  CHECK(e3.shape == std::vector<std::size_t>{2, 2, 32, 2, 2});
}

TEST_CASE("model forward: deterministic, duplicate images get identical rows") {
  ModelConfig cfg = tiny_config();
  ModelWeights w = init_weights(cfg, 7);
  Rng rng(61);
  DenseTensor one = random_images(1, cfg, rng);
  DenseTensor two({2, 1, 16, 16});
  std::copy(one.data.begin(), one.data.end(), two.data.begin());
  std::copy(one.data.begin(), one.data.end(), two.data.begin() + one.size());
  DenseTensor logits = model_forward(two, cfg, w);
  CHECK(logits.shape == std::vector<std::size_t>{2, 2});
  CHECK(logits.all_finite());
  CHECK(logits(0, 0) == logits(1, 0));
  CHECK(logits(0, 1) == logits(1, 1));
  // determinism across calls
  DenseTensor again = model_forward(two, cfg, w);
  for (std::size_t i = 0; i < logits.size(); ++i) CHECK(logits.data[i] == again.data[i]);
}

TEST_CASE("model forward: zero head weights give zero logits") {
  ModelConfig cfg = tiny_config();
  ModelWeights w = init_weights(cfg, 7);
  for (auto& v : w.head_w.data) v = 0.0;
  for (auto& v : w.head_b.data) v = 0.0;
  Rng rng(62);
  DenseTensor x = random_images(2, cfg, rng);
  DenseTensor logits = model_forward(x, cfg, w);
  for (double v : logits.data) CHECK(v == 0.0);
}

TEST_CASE("model forward rejects mismatched input shapes") {
  ModelConfig cfg = tiny_config();
  ModelWeights w = init_weights(cfg, 7);
  DenseTensor bad({1, 3, 16, 16});
  CHECK_THROWS_AS(model_forward(bad, cfg, w), ConfigError);
}

TEST_CASE("ablation toggles change parameters and outputs, never shapes") {
  Rng rng(63);
  ModelConfig base = tiny_config();
  DenseTensor x = random_images(1, base, rng);
  std::vector<ModelConfig> variants;
  for (int i = 0; i < 6; ++i) variants.push_back(tiny_config());
  variants[1].ablation.use_dwconv_qk = false;
  variants[2].ablation.sgm_mode = SparsityMode::fixed_ratio;
  variants[2].ablation.fixed_ratio = 0.5;
  variants[3].ablation.sgm_mode = SparsityMode::dense;
  variants[4].ablation.ffn = FfnKind::smlp;
  variants[5].ablation.smag.no_pconv = true;
  variants[5].ablation.smag.no_multiscale = true;
  for (const auto& cfg : variants) {
    ModelWeights w = init_weights(cfg, 7);
    DenseTensor logits = model_forward(x, cfg, w);
    CHECK(logits.shape == std::vector<std::size_t>{1, 2});
    CHECK(logits.all_finite());
  }
}

TEST_CASE("count_params: totals equal enumeration and track the ffn swap") {
  ModelConfig cfg = tiny_config();
  cfg.base_channels = 44;  // stage widths 44, 88, 176: all past the crossover
  ParamCounts smag_counts = count_params(cfg);
  ModelConfig cfg_mlp = cfg;
  cfg_mlp.ablation.ffn = FfnKind::smlp;
  ParamCounts smlp_counts = count_params(cfg_mlp);
  CHECK(smag_counts.total < smlp_counts.total);
  CHECK(smag_counts.total == smag_counts.conv_linear + smag_counts.bn_affine + smag_counts.sgm);

  // per-module ffn counts match the closed forms
  for (const auto& mod : smag_counts.modules) {
    if (mod.name == "stage3.block0.ffn") CHECK(mod.conv_linear == smag_param_count(176));
  }
  for (const auto& mod : smlp_counts.modules) {
    if (mod.name == "stage3.block0.ffn") CHECK(mod.conv_linear == smlp_param_count(176));
  }
}

TEST_CASE("count_params at the paper-scale width") {
  ModelConfig cfg;
  cfg.input_channels = 3;
  cfg.base_channels = 96;  // stage 3 width 384
  cfg.stage_blocks = {1, 1, 2};
  cfg.timesteps = 1;
  cfg.image_h = cfg.image_w = 32;
  cfg.num_classes = 10;
  ParamCounts pc = count_params(cfg);
  std::size_t smag_stage3 = 0;
  for (const auto& mod : pc.modules) {
    if (mod.name == "stage3.block0.ffn") smag_stage3 = mod.conv_linear;
  }
  CHECK(smag_stage3 == 989952);
}

TEST_CASE("zero-block stage builds as embedding-only") {
  ModelConfig cfg = tiny_config();
  cfg.stage_blocks = {0, 1, 1};
  ModelWeights w = init_weights(cfg, 9);
  CHECK(w.blocks[0].empty());
  Rng rng(64);
  DenseTensor x = random_images(1, cfg, rng);
  DenseTensor logits = model_forward(x, cfg, w);
  CHECK(logits.all_finite());
}

TEST_CASE("checkpoint round trip is bit-exact") {
  ModelConfig cfg = tiny_config();
  cfg.ablation.sgm_mode = SparsityMode::fixed_ratio;
  cfg.ablation.fixed_ratio = 0.25;
  ModelWeights w = init_weights(cfg, 42);
  const std::string p1 = "ckpt_roundtrip_a.bin", p2 = "ckpt_roundtrip_b.bin";
  save_checkpoint(p1, cfg, w);
  Checkpoint ck = load_checkpoint(p1);
  CHECK(ck.config.base_channels == cfg.base_channels);
  CHECK(ck.config.ablation.sgm_mode == SparsityMode::fixed_ratio);
  CHECK(ck.config.ablation.fixed_ratio == 0.25);
  save_checkpoint(p2, ck.config, ck.weights);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1.size() > 0);
  CHECK(b1 == b2);
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("checkpoint load reports missing files and bad magic distinctly") {
  CHECK_THROWS_AS(load_checkpoint("no_such_checkpoint.bin"), IoError);
  const std::string p = "bad_magic.bin";
  std::ofstream(p, std::ios::binary) << "NOTACKPTxxxxxxxxxxxxxxxx";
  CHECK_THROWS_AS(load_checkpoint(p), ConfigError);
  std::remove(p.c_str());
}

TEST_CASE("energy probe collects every expected layer") {
  ModelConfig cfg = tiny_config();
  ModelWeights w = init_weights(cfg, 7);
  Rng rng(65);
  DenseTensor x = random_images(1, cfg, rng);
  EnergyProbe probe;
  ForwardHooks hooks;
  hooks.energy = &probe;
  model_forward(x, cfg, w, hooks);
  CHECK(probe.has("encoder"));
  CHECK(probe.has("stage2.embed"));
  CHECK(probe.has("stage3.embed"));
  CHECK(probe.has("stage1.block0.attn.wq"));
  CHECK(probe.has("stage1.block0.attn.dwq"));
  CHECK(probe.has("stage1.block0.attn.sgm1"));
  CHECK(probe.has("stage1.block0.attn.gate_mul"));
  CHECK(probe.has("stage1.block0.ffn.pconv"));
  CHECK(probe.has("stage1.block0.ffn.dw_a"));
  CHECK(probe.has("stage1.block0.ffn.project"));
  CHECK(probe.has("head"));
  CHECK(probe.stat("encoder").kind == LayerKind::ann_encoder);
  CHECK(probe.stat("head").C_out == 2);
}

TEST_CASE("feature probe captures stage maps") {
  ModelConfig cfg = tiny_config();
  ModelWeights w = init_weights(cfg, 7);
  Rng rng(66);
  DenseTensor x = random_images(1, cfg, rng);
  FeatureProbe features;
  ForwardHooks hooks;
  hooks.features = &features;
  model_forward(x, cfg, w, hooks);
  REQUIRE(features.maps.count("stage1.embed") == 1);
  const DenseTensor& m = features.maps.at("stage1.embed");
  CHECK(m.shape == std::vector<std::size_t>{8, 4, 4});
  REQUIRE(features.maps.count("stage1.block0.attn") == 1);
  REQUIRE(features.maps.count("stage3.block0") == 1);
}
