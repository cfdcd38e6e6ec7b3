#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "safnet/checkpoint.hpp"
#include "safnet/dataset.hpp"
#include "safnet/train.hpp"

namespace safnet {

struct DatasetDescriptor {
  std::string kind = "synthetic";  // idx | cifar-binary | synthetic
  std::string images_path;
  std::string labels_path;
  std::string path;
  std::size_t classes = 2;
  std::size_t samples = 256;
  std::size_t size = 8;
  std::uint64_t seed = 7;
  std::vector<double> normalize_mean{0.0};
  std::vector<double> normalize_std{1.0};

  void validate() const {
    if (kind != "idx" && kind != "cifar-binary" && kind != "synthetic") {
      throw ConfigError("dataset: unknown kind '" + kind + "'");
    }
    if (normalize_mean.size() != normalize_std.size()) {
      throw ConfigError("dataset: normalization constants dimensioned inconsistently");
    }
    for (double s : normalize_std) {
      if (s == 0.0) throw ConfigError("dataset: zero normalization std");
    }
  }
};

// Merged model + training + dataset description; one structured-text file.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DatasetDescriptor dataset;
  std::string output_dir = "out";
};

inline nlohmann::json run_config_to_json(const RunConfig& rc) {
  nlohmann::json j;
  j["model"] = model_config_to_json(rc.model);
  j["train"] = {{"epochs", rc.train.epochs},
                {"batch_size", rc.train.batch_size},
                {"learning_rate", rc.train.learning_rate},
                {"weight_decay", rc.train.weight_decay},
                {"seed", rc.train.seed},
                {"optimizer", rc.train.optimizer},
                {"momentum", rc.train.momentum},
                {"grad_clip", rc.train.grad_clip},
                {"loss", rc.train.loss},
                {"target_accuracy", rc.train.target_accuracy}};
  j["dataset"] = {{"kind", rc.dataset.kind},
                  {"images_path", rc.dataset.images_path},
                  {"labels_path", rc.dataset.labels_path},
                  {"path", rc.dataset.path},
                  {"classes", rc.dataset.classes},
                  {"samples", rc.dataset.samples},
                  {"size", rc.dataset.size},
                  {"seed", rc.dataset.seed},
                  {"normalize_mean", rc.dataset.normalize_mean},
                  {"normalize_std", rc.dataset.normalize_std}};
  j["output_dir"] = rc.output_dir;
  return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  require_keys(j, {"model", "train", "dataset", "output_dir"}, "");
  RunConfig rc;
  if (j.contains("model")) rc.model = model_config_from_json(j["model"]);
  if (j.contains("train")) {
    const auto& t = j["train"];
    require_keys(t,
                 {"epochs", "batch_size", "learning_rate", "weight_decay", "seed", "optimizer",
                  "momentum", "grad_clip", "loss", "target_accuracy"},
                 "train");
    if (t.contains("epochs")) rc.train.epochs = t["epochs"].get<std::size_t>();
    if (t.contains("batch_size")) rc.train.batch_size = t["batch_size"].get<std::size_t>();
    if (t.contains("learning_rate")) rc.train.learning_rate = t["learning_rate"].get<double>();
    if (t.contains("weight_decay")) rc.train.weight_decay = t["weight_decay"].get<double>();
    if (t.contains("seed")) rc.train.seed = t["seed"].get<std::uint64_t>();
    if (t.contains("optimizer")) rc.train.optimizer = t["optimizer"].get<std::string>();
    if (t.contains("momentum")) rc.train.momentum = t["momentum"].get<double>();
    if (t.contains("grad_clip")) rc.train.grad_clip = t["grad_clip"].get<double>();
    if (t.contains("loss")) rc.train.loss = t["loss"].get<std::string>();
    if (t.contains("target_accuracy")) {
      rc.train.target_accuracy = t["target_accuracy"].get<double>();
    }
  }
  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    require_keys(d,
                 {"kind", "images_path", "labels_path", "path", "classes", "samples", "size",
                  "seed", "normalize_mean", "normalize_std"},
                 "dataset");
    if (d.contains("kind")) rc.dataset.kind = d["kind"].get<std::string>();
    if (d.contains("images_path")) rc.dataset.images_path = d["images_path"].get<std::string>();
    if (d.contains("labels_path")) rc.dataset.labels_path = d["labels_path"].get<std::string>();
    if (d.contains("path")) rc.dataset.path = d["path"].get<std::string>();
    if (d.contains("classes")) rc.dataset.classes = d["classes"].get<std::size_t>();
    if (d.contains("samples")) rc.dataset.samples = d["samples"].get<std::size_t>();
    if (d.contains("size")) rc.dataset.size = d["size"].get<std::size_t>();
    if (d.contains("seed")) rc.dataset.seed = d["seed"].get<std::uint64_t>();
    if (d.contains("normalize_mean")) {
      rc.dataset.normalize_mean = d["normalize_mean"].get<std::vector<double>>();
    }
    if (d.contains("normalize_std")) {
      rc.dataset.normalize_std = d["normalize_std"].get<std::vector<double>>();
    }
  }
  if (j.contains("output_dir")) rc.output_dir = j["output_dir"].get<std::string>();
  rc.train.validate();
  rc.dataset.validate();
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("config: cannot open " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: parse error in " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

inline void save_run_config(const std::string& path, const RunConfig& rc) {
  std::ofstream os(path);
  if (!os) throw IoError("config: cannot write " + path);
  os << run_config_to_json(rc).dump(2) << "\n";
}

// Loads the described dataset and applies per-channel normalization.
inline LabeledImages load_dataset(const DatasetDescriptor& d) {
  d.validate();
  LabeledImages data;
  if (d.kind == "idx") {
    data = load_idx(d.images_path, d.labels_path);
  } else if (d.kind == "cifar-binary") {
    data = load_cifar_binary(d.path);
  } else {
    data = gen_synthetic(d.classes, d.samples, d.size, d.seed);
  }
  for (std::size_t i = 0; i < data.count; ++i) {
    if (data.labels[i] < 0 || static_cast<std::size_t>(data.labels[i]) >= data.num_classes) {
      throw ConfigError("dataset: label " + std::to_string(data.labels[i]) +
                        " outside [0," + std::to_string(data.num_classes) + ") at record " +
                        std::to_string(i));
    }
  }
  if (!d.normalize_mean.empty() && d.normalize_mean.size() != 1 &&
      d.normalize_mean.size() != data.channels) {
    throw ConfigError("dataset: normalization constants dimensioned for " +
                      std::to_string(d.normalize_mean.size()) + " channels, data has " +
                      std::to_string(data.channels));
  }
  const std::size_t hw = data.height * data.width;
  for (std::size_t i = 0; i < data.count; ++i) {
    for (std::size_t c = 0; c < data.channels; ++c) {
      const std::size_t ci = d.normalize_mean.size() == 1 ? 0 : c;
      const double mean = d.normalize_mean.empty() ? 0.0 : d.normalize_mean[ci];
      const double std = d.normalize_std.empty() ? 1.0 : d.normalize_std[ci];
      double* p = &data.pixels[(i * data.channels + c) * hw];
      for (std::size_t x = 0; x < hw; ++x) p[x] = (p[x] - mean) / std;
    }
  }
  return data;
}

// Upsamples the dataset to the model's image size when it is an exact
// integer multiple of the native size.
inline LabeledImages fit_to_model(const LabeledImages& data, const ModelConfig& cfg) {
  if (data.channels != cfg.input_channels) {
    throw ConfigError("dataset has " + std::to_string(data.channels) +
                      " channels, model expects " + std::to_string(cfg.input_channels));
  }
  if (data.height == cfg.image_h && data.width == cfg.image_w) return data;
  if (cfg.image_h % data.height == 0 && cfg.image_w % data.width == 0 &&
      cfg.image_h / data.height == cfg.image_w / data.width) {
    return upsample_nearest(data, cfg.image_h / data.height);
  }
  throw ConfigError("dataset size " + std::to_string(data.height) + "x" +
                    std::to_string(data.width) + " incompatible with model image size " +
                    std::to_string(cfg.image_h) + "x" + std::to_string(cfg.image_w));
}

}  // namespace safnet
