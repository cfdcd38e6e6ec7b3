#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "safnet/model.hpp"

namespace safnet {

inline void require_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                         const std::string& path) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const auto& k : allowed) ok = ok || k == it.key();
    if (!ok) {
      throw ConfigError("unknown key '" + (path.empty() ? it.key() : path + "." + it.key()) +
                        "'");
    }
  }
}

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["input_channels"] = c.input_channels;
  j["base_channels"] = c.base_channels;
  j["stage_blocks"] = c.stage_blocks;
  j["timesteps"] = c.timesteps;
  j["image_size"] = {c.image_h, c.image_w};
  j["num_classes"] = c.num_classes;
  j["lif"] = {{"v_threshold", c.lif.v_threshold},
              {"leak", c.lif.leak},
              {"v_reset", c.lif.v_reset},
              {"reset_mode", c.lif.reset_mode == ResetMode::hard ? "hard" : "soft"},
              {"surrogate_width", c.lif.surrogate_width}};
  j["ablation"] = {
      {"use_dwconv_qk", c.ablation.use_dwconv_qk},
      {"sgm_mode", c.ablation.sgm_mode == SparsityMode::dynamic
                       ? "dynamic"
                       : (c.ablation.sgm_mode == SparsityMode::fixed_ratio ? "fixed" : "dense")},
      {"fixed_ratio", c.ablation.fixed_ratio},
      {"ffn", c.ablation.ffn == FfnKind::smag ? "smag" : "smlp"},
      {"no_pconv", c.ablation.smag.no_pconv},
      {"no_multiscale", c.ablation.smag.no_multiscale},
      {"smag_kernels", {c.ablation.smag.kernel_a, c.ablation.smag.kernel_b}}};
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j,
                                          const std::string& path = "model") {
  require_keys(j,
               {"input_channels", "base_channels", "stage_blocks", "timesteps", "image_size",
                "num_classes", "lif", "ablation"},
               path);
  ModelConfig c;
  if (j.contains("input_channels")) c.input_channels = j["input_channels"].get<std::size_t>();
  if (j.contains("base_channels")) c.base_channels = j["base_channels"].get<std::size_t>();
  if (j.contains("stage_blocks")) {
    const auto v = j["stage_blocks"].get<std::vector<std::size_t>>();
    if (v.size() != 3) throw ConfigError(path + ".stage_blocks must have 3 entries");
    for (std::size_t i = 0; i < 3; ++i) c.stage_blocks[i] = v[i];
  }
  if (j.contains("timesteps")) c.timesteps = j["timesteps"].get<std::size_t>();
  if (j.contains("image_size")) {
    const auto v = j["image_size"].get<std::vector<std::size_t>>();
    if (v.size() != 2) throw ConfigError(path + ".image_size must have 2 entries");
    c.image_h = v[0];
    c.image_w = v[1];
  }
  if (j.contains("num_classes")) c.num_classes = j["num_classes"].get<std::size_t>();
  if (j.contains("lif")) {
    const auto& l = j["lif"];
    require_keys(l, {"v_threshold", "leak", "v_reset", "reset_mode", "surrogate_width"},
                 path + ".lif");
    if (l.contains("v_threshold")) c.lif.v_threshold = l["v_threshold"].get<double>();
    if (l.contains("leak")) c.lif.leak = l["leak"].get<double>();
    if (l.contains("v_reset")) c.lif.v_reset = l["v_reset"].get<double>();
    if (l.contains("reset_mode")) {
      const auto m = l["reset_mode"].get<std::string>();
      if (m != "hard" && m != "soft") throw ConfigError(path + ".lif.reset_mode must be hard|soft");
      c.lif.reset_mode = m == "hard" ? ResetMode::hard : ResetMode::soft;
    }
    if (l.contains("surrogate_width")) c.lif.surrogate_width = l["surrogate_width"].get<double>();
  }
  if (j.contains("ablation")) {
    const auto& a = j["ablation"];
    require_keys(a,
                 {"use_dwconv_qk", "sgm_mode", "fixed_ratio", "ffn", "no_pconv",
                  "no_multiscale", "smag_kernels"},
                 path + ".ablation");
    if (a.contains("use_dwconv_qk")) c.ablation.use_dwconv_qk = a["use_dwconv_qk"].get<bool>();
    if (a.contains("sgm_mode")) {
      const auto m = a["sgm_mode"].get<std::string>();
      if (m == "dynamic") {
        c.ablation.sgm_mode = SparsityMode::dynamic;
      } else if (m == "fixed") {
        c.ablation.sgm_mode = SparsityMode::fixed_ratio;
      } else if (m == "dense") {
        c.ablation.sgm_mode = SparsityMode::dense;
      } else {
        throw ConfigError(path + ".ablation.sgm_mode must be dynamic|fixed|dense");
      }
    }
    if (a.contains("fixed_ratio")) c.ablation.fixed_ratio = a["fixed_ratio"].get<double>();
    if (a.contains("ffn")) {
      const auto f = a["ffn"].get<std::string>();
      if (f != "smag" && f != "smlp") throw ConfigError(path + ".ablation.ffn must be smag|smlp");
      c.ablation.ffn = f == "smag" ? FfnKind::smag : FfnKind::smlp;
    }
    if (a.contains("no_pconv")) c.ablation.smag.no_pconv = a["no_pconv"].get<bool>();
    if (a.contains("no_multiscale")) {
      c.ablation.smag.no_multiscale = a["no_multiscale"].get<bool>();
    }
    if (a.contains("smag_kernels")) {
      const auto v = a["smag_kernels"].get<std::vector<std::size_t>>();
      if (v.size() != 2) throw ConfigError(path + ".ablation.smag_kernels must have 2 entries");
      c.ablation.smag.kernel_a = v[0];
      c.ablation.smag.kernel_b = v[1];
    }
  }
  return c;
}

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("checkpoint: truncated file " + path);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& os, double v) {
  const float f = static_cast<float>(v);
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  write_u32(os, bits);
}

inline double read_f32(std::istream& is, const std::string& path) {
  const std::uint32_t bits = read_u32(is, path);
  float f;
  std::memcpy(&f, &bits, 4);
  return static_cast<double>(f);
}

}  // namespace detail

constexpr char kCheckpointMagic[8] = {'S', 'A', 'F', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

// Versioned header + serialized config + named tensors with shape metadata,
// all little-endian 32-bit floats. save(load(f)) is byte-identical to f.
inline void save_checkpoint(const std::string& path, const ModelConfig& cfg, ModelWeights& w) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("checkpoint: cannot write " + path);
  os.write(kCheckpointMagic, 8);
  detail::write_u32(os, kCheckpointVersion);
  const std::string cfg_json = model_config_to_json(cfg).dump();
  detail::write_u32(os, static_cast<std::uint32_t>(cfg_json.size()));
  os.write(cfg_json.data(), static_cast<std::streamsize>(cfg_json.size()));
  const auto refs = parameter_refs(w);
  detail::write_u32(os, static_cast<std::uint32_t>(refs.size()));
  for (const auto& ref : refs) {
    detail::write_u32(os, static_cast<std::uint32_t>(ref.name.size()));
    os.write(ref.name.data(), static_cast<std::streamsize>(ref.name.size()));
    detail::write_u32(os, static_cast<std::uint32_t>(ref.tensor->rank()));
    for (auto d : ref.tensor->shape) detail::write_u32(os, static_cast<std::uint32_t>(d));
    for (double v : ref.tensor->data) detail::write_f32(os, v);
  }
  if (!os) throw IoError("checkpoint: write failed for " + path);
}

struct Checkpoint {
  ModelConfig config;
  ModelWeights weights;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw ConfigError("checkpoint: bad magic in " + path);
  }
  const std::uint32_t version = detail::read_u32(is, path);
  if (version != kCheckpointVersion) {
    throw ConfigError("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t cfg_len = detail::read_u32(is, path);
  std::string cfg_json(cfg_len, '\0');
  is.read(cfg_json.data(), cfg_len);
  if (!is) throw IoError("checkpoint: truncated config in " + path);
  Checkpoint ck;
  ck.config = model_config_from_json(nlohmann::json::parse(cfg_json));
  ck.weights = init_weights(ck.config, 0);
  const auto refs = parameter_refs(ck.weights);
  const std::uint32_t count = detail::read_u32(is, path);
  if (count != refs.size()) {
    throw ConfigError("checkpoint: tensor count " + std::to_string(count) + " != expected " +
                      std::to_string(refs.size()));
  }
  for (const auto& ref : refs) {
    const std::uint32_t name_len = detail::read_u32(is, path);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw IoError("checkpoint: truncated tensor name in " + path);
    if (name != ref.name) {
      throw ConfigError("checkpoint: tensor '" + name + "' does not match expected '" +
                        ref.name + "'");
    }
    const std::uint32_t ndim = detail::read_u32(is, path);
    std::vector<std::size_t> shape(ndim);
    for (auto& d : shape) d = detail::read_u32(is, path);
    if (shape != ref.tensor->shape) {
      throw ConfigError("checkpoint: tensor '" + name + "' shape " + shape_str(shape) +
                        " != expected " + shape_str(ref.tensor->shape));
    }
    for (auto& v : ref.tensor->data) v = detail::read_f32(is, path);
  }
  return ck;
}

}  // namespace safnet
