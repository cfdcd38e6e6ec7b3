#pragma once

#include <cstdlib>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "safnet/model.hpp"
#include "safnet/runconfig.hpp"
#include "safnet/train.hpp"

namespace safnet {

struct AblateCell {
  std::string arch;     // baseline | +SAF | +SMAG | +both
  std::string variant;  // w/o SGM | w/o DWConv | ... | kernels a+b
  std::size_t params = 0;
  double train_acc = 0.0;
  double train_loss = 0.0;
  double energy_mj = 0.0;
  std::size_t epochs_run = 0;
};

struct AblateResult {
  std::vector<AblateCell> cells;
};

inline const std::vector<std::string>& ablate_archs() {
  static const std::vector<std::string> v{"baseline", "+SAF", "+SMAG", "+both"};
  return v;
}

inline const std::vector<std::string>& ablate_variants() {
  static const std::vector<std::string> v{"w/o SGM",         "w/o DWConv", "w/o PConv",
                                          "w/o multi-scale", "kernels 3+5", "kernels 5+7",
                                          "kernels 3+7"};
  return v;
}

// Applies one grid cell's toggles on top of the base model config. The arch
// axis selects the attention sparsity source and the feedforward network;
// the variant axis applies one component ablation (inert combinations still
// run so the table is complete).
inline ModelConfig ablate_cell_config(ModelConfig cfg, const std::string& arch,
                                      const std::string& variant) {
  if (arch == "baseline") {
    cfg.ablation.sgm_mode = SparsityMode::dense;
    cfg.ablation.ffn = FfnKind::smlp;
  } else if (arch == "+SAF") {
    cfg.ablation.sgm_mode = SparsityMode::dynamic;
    cfg.ablation.ffn = FfnKind::smlp;
  } else if (arch == "+SMAG") {
    cfg.ablation.sgm_mode = SparsityMode::dense;
    cfg.ablation.ffn = FfnKind::smag;
  } else if (arch == "+both") {
    cfg.ablation.sgm_mode = SparsityMode::dynamic;
    cfg.ablation.ffn = FfnKind::smag;
  } else {
    throw ConfigError("ablate: unknown arch '" + arch + "'");
  }
  if (variant == "w/o SGM") {
    cfg.ablation.sgm_mode = SparsityMode::fixed_ratio;
    cfg.ablation.fixed_ratio = 0.6;
  } else if (variant == "w/o DWConv") {
    cfg.ablation.use_dwconv_qk = false;
  } else if (variant == "w/o PConv") {
    cfg.ablation.smag.no_pconv = true;
  } else if (variant == "w/o multi-scale") {
    cfg.ablation.smag.no_multiscale = true;
  } else if (variant == "kernels 3+5") {
    cfg.ablation.smag.kernel_a = 3;
    cfg.ablation.smag.kernel_b = 5;
  } else if (variant == "kernels 5+7") {
    cfg.ablation.smag.kernel_a = 5;
    cfg.ablation.smag.kernel_b = 7;
  } else if (variant == "kernels 3+7") {
    cfg.ablation.smag.kernel_a = 3;
    cfg.ablation.smag.kernel_b = 7;
  } else {
    throw ConfigError("ablate: unknown variant '" + variant + "'");
  }
  return cfg;
}

inline std::size_t ablate_thread_budget() {
  const char* env = std::getenv("SAFNET_THREADS");
  if (!env) return 1;
  const long n = std::strtol(env, nullptr, 10);
  return n < 1 ? 1 : static_cast<std::size_t>(n);
}

// Grid selection: "full" keeps every arch x variant cell; otherwise a
// comma-separated list of case-sensitive substrings matched against
// "<arch>/<variant>" keeps the matching cells.
inline std::vector<std::pair<std::string, std::string>> ablate_grid_cells(
    const std::string& grid_spec) {
  std::vector<std::string> filters;
  if (grid_spec != "full" && !grid_spec.empty()) {
    std::stringstream ss(grid_spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (!tok.empty()) filters.push_back(tok);
    }
  }
  std::vector<std::pair<std::string, std::string>> grid;
  for (const auto& arch : ablate_archs()) {
    for (const auto& variant : ablate_variants()) {
      if (filters.empty()) {
        grid.emplace_back(arch, variant);
        continue;
      }
      const std::string key = arch + "/" + variant;
      for (const auto& f : filters) {
        if (key.find(f) != std::string::npos) {
          grid.emplace_back(arch, variant);
          break;
        }
      }
    }
  }
  if (grid.empty()) throw ConfigError("ablate: grid '" + grid_spec + "' selects no cells");
  return grid;
}

// Runs the selected grid cells on the configured dataset. Every cell trains
// from the same seed; results merge in grid order regardless of the thread
// count.
inline AblateResult run_ablation_grid(const RunConfig& base, std::size_t energy_samples = 16,
                                      const std::string& grid_spec = "full") {
  const LabeledImages raw = load_dataset(base.dataset);
  const LabeledImages data = fit_to_model(raw, base.model);
  const auto grid = ablate_grid_cells(grid_spec);
  AblateResult result;
  result.cells.resize(grid.size());

  auto run_cell = [&](std::size_t i) {
    const auto& [arch, variant] = grid[i];
    AblateCell cell;
    cell.arch = arch;
    cell.variant = variant;
    const ModelConfig cfg = ablate_cell_config(base.model, arch, variant);
    TrainableModel m;
    m.init(cfg, base.train.seed);
    TrainResult tr = train_loop(m, data, base.train);
    cell.params = count_params(cfg).total;
    cell.train_acc = tr.history.back().train_acc;
    cell.train_loss = tr.history.back().train_loss;
    cell.epochs_run = tr.history.size();
    const std::size_t ns = std::min<std::size_t>(energy_samples, data.count);
    std::vector<std::size_t> idx(ns);
    std::iota(idx.begin(), idx.end(), 0);
    DenseTensor batch = make_batch(data, idx);
    // fr averages over the sample batch, so the report is per-inference
    EnergyProbe probe = record_firing_rates(cfg, m.weights, batch);
    cell.energy_mj = energy_report(probe, cfg.timesteps).total_mj;
    result.cells[i] = std::move(cell);
  };

  const std::size_t threads = std::min(ablate_thread_budget(), grid.size());
  if (threads <= 1) {
    for (std::size_t i = 0; i < grid.size(); ++i) run_cell(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t]() {
        for (std::size_t i = t; i < grid.size(); i += threads) run_cell(i);
      });
    }
    for (auto& th : pool) th.join();
  }
  return result;
}

}  // namespace safnet
