#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "safnet/ablate.hpp"
#include "safnet/analysis.hpp"
#include "safnet/checkpoint.hpp"
#include "safnet/runconfig.hpp"

namespace safnet::cli {

namespace fs = std::filesystem;

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

inline void write_text(const std::string& path, const std::string& content) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  os << content;
}

inline nlohmann::json energy_report_json(const EnergyReport& rep) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& e : rep.layers) {
    layers.push_back({{"id", e.profile.layer_id},
                      {"kind", layer_kind_name(e.profile.kind)},
                      {"O", e.profile.O},
                      {"C_in", e.profile.C_in},
                      {"C_out", e.profile.C_out},
                      {"k", e.profile.k},
                      {"T", e.profile.T},
                      {"D", e.profile.D},
                      {"fr", e.profile.fr},
                      {"pJ", e.pj}});
  }
  return {{"layers", layers},
          {"total_mJ", rep.total_mj},
          {"total_spikes", rep.total_spikes},
          {"mean_fr", rep.mean_firing_rate}};
}

inline std::string energy_report_table(const EnergyReport& rep) {
  std::ostringstream os;
  os << std::left << std::setw(28) << "layer" << std::setw(13) << "kind" << std::right
     << std::setw(5) << "O" << std::setw(6) << "C_in" << std::setw(7) << "C_out" << std::setw(3)
     << "k" << std::setw(9) << "fr" << std::setw(16) << "pJ" << "\n";
  for (const auto& e : rep.layers) {
    os << std::left << std::setw(28) << e.profile.layer_id << std::setw(13)
       << layer_kind_name(e.profile.kind) << std::right << std::setw(5) << e.profile.O
       << std::setw(6) << e.profile.C_in << std::setw(7) << e.profile.C_out << std::setw(3)
       << e.profile.k << std::setw(9) << std::fixed << std::setprecision(4) << e.profile.fr
       << std::setw(16) << std::setprecision(2) << e.pj << "\n";
  }
  os << "total: " << std::setprecision(9) << rep.total_mj << " mJ, " << rep.total_spikes
     << " spikes, mean fr " << std::setprecision(4) << rep.mean_firing_rate << "\n";
  return os.str();
}

inline std::string audit_table_text(const AuditTable& t) {
  std::ostringstream os;
  os << std::left << std::setw(8) << "module" << std::right << std::setw(7) << "width"
     << std::setw(14) << "closed-form" << std::setw(14) << "enumerated" << std::setw(8)
     << "match" << "\n";
  for (const auto& r : t.rows) {
    os << std::left << std::setw(8) << r.module << std::right << std::setw(7) << r.width
       << std::setw(14) << r.closed_form << std::setw(14) << r.enumerated << std::setw(8)
       << (r.match ? "yes" : "NO") << "\n";
  }
  os << "SMAG vs SMLP at width " << t.stage3_width << ": " << std::fixed << std::setprecision(2)
     << t.reduction_percent << "% fewer parameters\n";
  return os.str();
}

inline std::string ablate_table_text(const AblateResult& res) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "arch" << std::setw(18) << "variant" << std::right
     << std::setw(9) << "params" << std::setw(10) << "acc" << std::setw(12) << "loss"
     << std::setw(14) << "energy_mJ" << std::setw(8) << "epochs" << "\n";
  for (const auto& c : res.cells) {
    os << std::left << std::setw(10) << c.arch << std::setw(18) << c.variant << std::right
       << std::setw(9) << c.params << std::setw(10) << std::fixed << std::setprecision(4)
       << c.train_acc << std::setw(12) << std::setprecision(5) << c.train_loss << std::setw(14)
       << std::setprecision(6) << c.energy_mj << std::setw(8) << c.epochs_run << "\n";
  }
  return os.str();
}

inline nlohmann::json ablate_json(const AblateResult& res) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : res.cells) {
    cells.push_back({{"arch", c.arch},
                     {"variant", c.variant},
                     {"params", c.params},
                     {"train_acc", c.train_acc},
                     {"train_loss", c.train_loss},
                     {"energy_mJ", c.energy_mj},
                     {"epochs", c.epochs_run}});
  }
  return {{"cells", cells}};
}

inline int cmd_train(const RunConfig& rc) {
  ensure_dir(rc.output_dir);
  const LabeledImages data = fit_to_model(load_dataset(rc.dataset), rc.model);
  TrainableModel m;
  m.init(rc.model, rc.train.seed);
  std::ofstream metrics(rc.output_dir + "/metrics.jsonl");
  if (!metrics) throw IoError("cannot write " + rc.output_dir + "/metrics.jsonl");
  save_run_config(rc.output_dir + "/config_resolved.json", rc);
  auto persist = [&](const TrainableModel& model, const std::string& tag) {
    ModelWeights& w = const_cast<ModelWeights&>(model.weights);
    save_checkpoint(rc.output_dir + "/checkpoint_" + tag + ".bin", model.config, w);
  };
  TrainResult r = train_loop(m, data, rc.train, &metrics, persist);
  std::cout << "trained " << r.history.size() << " epochs; best train acc "
            << std::setprecision(4) << std::fixed << r.best_acc << " at epoch " << r.best_epoch
            << "\n"
            << "checkpoints and metrics in " << rc.output_dir << "\n";
  return 0;
}

inline int cmd_eval(const RunConfig& rc, const std::string& checkpoint_path) {
  Checkpoint ck = load_checkpoint(checkpoint_path);
  const LabeledImages data = fit_to_model(load_dataset(rc.dataset), ck.config);
  const double acc = eval_accuracy(ck.config, ck.weights, data);
  std::cout << "eval accuracy " << std::fixed << std::setprecision(4) << acc << " on "
            << data.count << " samples\n";
  ensure_dir(rc.output_dir);
  write_text(rc.output_dir + "/eval.json",
             nlohmann::json{{"accuracy", acc},
                            {"samples", data.count},
                            {"checkpoint", checkpoint_path}}
                     .dump(2) +
                 "\n");
  return 0;
}

inline int cmd_energy(const RunConfig& rc, const std::string& checkpoint_path,
                      std::size_t samples, std::size_t virtual_timestep) {
  Checkpoint ck = load_checkpoint(checkpoint_path);
  const LabeledImages data = fit_to_model(load_dataset(rc.dataset), ck.config);
  const std::size_t ns = std::min<std::size_t>(samples, data.count);
  if (ns == 0) throw ConfigError("energy: no samples available");
  std::vector<std::size_t> idx(ns);
  std::iota(idx.begin(), idx.end(), 0);
  DenseTensor batch = make_batch(data, idx);
  EnergyProbe probe = record_firing_rates(ck.config, ck.weights, batch);
  EnergyReport rep = energy_report(probe, ck.config.timesteps, virtual_timestep);
  std::cout << energy_report_table(rep);
  ensure_dir(rc.output_dir);
  write_text(rc.output_dir + "/energy.json", energy_report_json(rep).dump(2) + "\n");
  return 0;
}

inline int cmd_audit_params(const RunConfig& rc) {
  AuditTable t = audit_params(rc.model.base_channels);
  std::cout << audit_table_text(t);
  ParamCounts pc = count_params(rc.model);
  std::cout << "model totals: " << pc.total << " params (" << pc.conv_linear
            << " conv/linear, " << pc.bn_affine << " norm, " << pc.sgm << " guidance)\n";
  if (!t.all_match) {
    for (const auto& r : t.rows) {
      if (!r.match) {
        std::cerr << "audit mismatch: " << r.module << " width " << r.width << ": closed form "
                  << r.closed_form << " vs enumerated " << r.enumerated << "\n";
      }
    }
    return 1;
  }
  ensure_dir(rc.output_dir);
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : t.rows) {
    rows.push_back({{"module", r.module},
                    {"width", r.width},
                    {"closed_form", r.closed_form},
                    {"enumerated", r.enumerated},
                    {"match", r.match}});
  }
  write_text(rc.output_dir + "/audit.json",
             nlohmann::json{{"rows", rows},
                            {"stage3_width", t.stage3_width},
                            {"reduction_percent", t.reduction_percent}}
                     .dump(2) +
                 "\n");
  return 0;
}

inline int cmd_verify_props(std::size_t seeds, std::size_t n_tokens,
                            const std::string& out_dir) {
  n_tokens = std::clamp<std::size_t>(n_tokens, 2, 16);
  nlohmann::json report = nlohmann::json::array();
  bool all_pass = true;
  {
    std::size_t passes = 0;
    nlohmann::json failures = nlohmann::json::array();
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng(1000 + s);
      auto rand_spikes = [&](double p) {
        SpikeTensor t({1, 1, 4, 3});
        for (auto& v : t.data) v = rng.uniform() < p ? 1 : 0;
        return t;
      };
      const double p = rng.uniform(0.2, 0.8);
      VerifyResult r = verify_prop1(rand_spikes(p), rand_spikes(p), rand_spikes(p));
      if (r.pass) {
        ++passes;
      } else {
        failures.push_back(r.witness);
      }
    }
    std::cout << "proposition 1 (dense aggregation):   " << passes << "/" << seeds
              << " pass\n";
    report.push_back(
        {{"prop", 1}, {"seeds", seeds}, {"passes", passes}, {"failures", failures}});
    all_pass = all_pass && passes == seeds;
  }
  {
    std::size_t passes = 0;
    nlohmann::json failures = nlohmann::json::array();
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng(2000 + s);
      AttentionWeights w = AttentionWeights::init(4, rng, 3.0);
      SpikeTensor x({1, 1, n_tokens, 4});
      const double p = rng.uniform(0.2, 0.9);
      for (auto& v : x.data) v = rng.uniform() < p ? 1 : 0;
      VerifyResult r = verify_prop2(x, w, LifParams{});
      if (r.pass) {
        ++passes;
      } else {
        failures.push_back(r.witness);
      }
    }
    std::cout << "proposition 2 (sparse self-filter):  " << passes << "/" << seeds
              << " pass\n";
    report.push_back(
        {{"prop", 2}, {"seeds", seeds}, {"passes", passes}, {"failures", failures}});
    all_pass = all_pass && passes == seeds;
  }
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    write_text(out_dir + "/verify.json", report.dump(2) + "\n");
  }
  return all_pass ? 0 : 1;
}

inline int cmd_spectrum(const std::string& checkpoint_path, const std::string& layer,
                        const std::string& input, const std::string& out_dir) {
  Checkpoint ck = load_checkpoint(checkpoint_path);
  DenseTensor image({1, ck.config.input_channels, ck.config.image_h, ck.config.image_w});
  if (input == "synthetic" || input.rfind("synthetic:", 0) == 0) {
    std::uint64_t seed = 7;
    if (input.size() > 10) seed = std::strtoull(input.c_str() + 10, nullptr, 10);
    if (ck.config.input_channels != 1) {
      throw ConfigError("spectrum: synthetic input is single-channel");
    }
    LabeledImages d = gen_synthetic(2, 1, std::max<std::size_t>(8, ck.config.image_h / 2), seed);
    d = upsample_nearest(d, ck.config.image_h / d.height);
    std::copy(d.pixels.begin(), d.pixels.begin() + image.size(), image.data.begin());
  } else {
    LabeledImages d = load_idx_images(input);
    if (d.count == 0) throw ConfigError("spectrum: no images in " + input);
    LabeledImages fitted = fit_to_model(d, ck.config);
    std::copy(fitted.pixels.begin(), fitted.pixels.begin() + image.size(), image.data.begin());
  }
  FeatureProbe probe;
  ForwardHooks hooks;
  hooks.features = &probe;
  model_forward(image, ck.config, ck.weights, hooks);
  if (!probe.maps.count(layer)) {
    std::cerr << "unknown layer '" << layer << "'. available layers:\n";
    for (const auto& id : probe.order) std::cerr << "  " << id << "\n";
    return 1;
  }
  SpectrumResult r = spectrum(probe.maps.at(layer));
  std::cout << "layer " << layer << ": high-frequency energy ratio " << std::fixed
            << std::setprecision(6) << r.hf_ratio << "\n";
  ensure_dir(out_dir);
  std::ostringstream csv;
  csv << "# H=" << r.grid.shape[0] << ",W=" << r.grid.shape[1] << "\n";
  csv << std::setprecision(17);
  for (std::size_t u = 0; u < r.grid.shape[0]; ++u) {
    for (std::size_t v = 0; v < r.grid.shape[1]; ++v) {
      csv << (v ? "," : "") << r.grid(u, v);
    }
    csv << "\n";
  }
  std::string safe_layer = layer;
  for (auto& c : safe_layer) {
    if (c == '/' || c == '.') c = '_';
  }
  write_text(out_dir + "/spectrum_" + safe_layer + ".csv", csv.str());
  std::cout << "grid written to " << out_dir << "/spectrum_" << safe_layer << ".csv\n";
  return 0;
}

inline int cmd_ablate(const RunConfig& rc, const std::string& grid) {
  AblateResult res = run_ablation_grid(rc, 16, grid);
  std::cout << ablate_table_text(res);
  ensure_dir(rc.output_dir);
  write_text(rc.output_dir + "/ablate.json", ablate_json(res).dump(2) + "\n");
  return 0;
}

inline int run(const std::vector<std::string>& args) {
  CLI::App app{"desk-scale spiking transformer with active predictive filtering"};
  app.require_subcommand(1);

  std::string config_path, checkpoint_path, layer, input, out_override;
  std::size_t samples = 16, virtual_timestep = 1, seeds = 100, n_tokens = 8;
  long epochs_override = -1, batch_override = -1, seed_override = -1;
  double lr_override = -1.0;

  auto add_config = [&](CLI::App* cmd, bool required = true) {
    auto* opt = cmd->add_option("--config", config_path, "run configuration file (JSON)");
    if (required) opt->required();
  };
  auto add_overrides = [&](CLI::App* cmd) {
    cmd->add_option("--epochs", epochs_override, "override train.epochs");
    cmd->add_option("--batch-size", batch_override, "override train.batch_size");
    cmd->add_option("--seed", seed_override, "override train.seed");
    cmd->add_option("--lr", lr_override, "override train.learning_rate");
    cmd->add_option("--out", out_override, "override output_dir");
  };

  CLI::App* train_cmd = app.add_subcommand("train", "train a model on the configured dataset");
  add_config(train_cmd);
  add_overrides(train_cmd);

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  add_config(eval_cmd);
  eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();

  CLI::App* energy_cmd = app.add_subcommand("energy", "estimate per-inference energy");
  add_config(energy_cmd);
  energy_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  energy_cmd->add_option("--samples", samples, "samples for firing-rate measurement");
  energy_cmd->add_option("--virtual-timestep", virtual_timestep, "virtual timestep D");
  energy_cmd->add_option("--out", out_override, "override output_dir");

  CLI::App* audit_cmd = app.add_subcommand("audit-params", "closed-form vs enumerated counts");
  add_config(audit_cmd);
  audit_cmd->add_option("--out", out_override, "override output_dir");

  CLI::App* verify_cmd =
      app.add_subcommand("verify-props", "run the flow-graph equivalence checks");
  verify_cmd->add_option("--seeds", seeds, "random instances per proposition");
  verify_cmd->add_option("--n-tokens", n_tokens, "token count for the sparse check (<=16)");
  verify_cmd->add_option("--out", out_override, "output directory for verify.json");

  CLI::App* spectrum_cmd = app.add_subcommand("spectrum", "Fourier spectrum of a feature map");
  spectrum_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  spectrum_cmd->add_option("--layer", layer, "feature map id (bad id lists options)")
      ->required();
  spectrum_cmd->add_option("--input", input, "IDX images file or 'synthetic[:seed]'")
      ->required();
  spectrum_cmd->add_option("--out", out_override, "output directory");

  std::string grid = "full";
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "run the component-toggle grid");
  add_config(ablate_cmd);
  ablate_cmd->add_option("--grid", grid,
                         "'full' or comma-separated substrings of '<arch>/<variant>'");
  ablate_cmd->add_option("--epochs", epochs_override, "override train.epochs per cell");
  ablate_cmd->add_option("--out", out_override, "override output_dir");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      app.exit(e);
      return 0;
    }
    std::cerr << e.what() << "\n" << app.help();
    return 1;
  }

  try {
    RunConfig rc;
    const bool needs_config = !config_path.empty();
    if (needs_config) {
      rc = load_run_config(config_path);
      if (epochs_override >= 0) rc.train.epochs = static_cast<std::size_t>(epochs_override);
      if (batch_override > 0) rc.train.batch_size = static_cast<std::size_t>(batch_override);
      if (seed_override >= 0) rc.train.seed = static_cast<std::uint64_t>(seed_override);
      if (lr_override >= 0.0) rc.train.learning_rate = lr_override;
      if (!out_override.empty()) rc.output_dir = out_override;
    }
    if (train_cmd->parsed()) return cmd_train(rc);
    if (eval_cmd->parsed()) return cmd_eval(rc, checkpoint_path);
    if (energy_cmd->parsed()) return cmd_energy(rc, checkpoint_path, samples, virtual_timestep);
    if (audit_cmd->parsed()) return cmd_audit_params(rc);
    if (verify_cmd->parsed()) {
      return cmd_verify_props(seeds, n_tokens, out_override.empty() ? "out" : out_override);
    }
    if (spectrum_cmd->parsed()) {
      return cmd_spectrum(checkpoint_path, layer, input,
                          out_override.empty() ? "out" : out_override);
    }
    if (ablate_cmd->parsed()) return cmd_ablate(rc, grid);
    std::cerr << app.help();
    return 1;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace safnet::cli
