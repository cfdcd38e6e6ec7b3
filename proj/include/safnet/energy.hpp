#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "safnet/common.hpp"

namespace safnet {

// Counts multiply/accumulate-equivalent events. An event is one accumulation
// triggered by a nonzero input (spike-driven accounting).
struct OpCounter {
  std::uint64_t acc_events = 0;
  void add(std::uint64_t n) { acc_events += n; }
};

enum class LayerKind { ann_encoder, snn };

inline const char* layer_kind_name(LayerKind k) {
  return k == LayerKind::ann_encoder ? "ann-encoder" : "snn";
}

// Per-layer operation profile for the energy model. O is the side of the
// output position grid (O^2 positions); fr the mean firing rate of the
// layer's input in [0,1].
struct LayerProfile {
  std::string layer_id;
  LayerKind kind = LayerKind::snn;
  std::size_t O = 0;
  std::size_t C_in = 0;
  std::size_t C_out = 0;
  std::size_t k = 1;
  std::size_t T = 1;
  std::size_t D = 1;
  double fr = 0.0;

  void validate() const {
    if (fr < 0.0 || fr > 1.0) throw ConfigError("layer profile " + layer_id + ": fr not in [0,1]");
    if (O == 0 || C_in == 0 || C_out == 0 || k == 0 || T == 0 || D == 0) {
      throw ConfigError("layer profile " + layer_id + ": zero count");
    }
  }
};

constexpr double kEnergyMacPj = 4.6;  // 45nm MAC
constexpr double kEnergyAcPj = 0.9;   // 45nm AC

// ann-encoder: O^2 * C_in * C_out * k^2 * E_MAC
// snn:         (T*D) * fr * O^2 * C_in * C_out * k^2 * E_AC
// BN layers contribute zero (fused at deployment).
inline double layer_energy_pj(const LayerProfile& p) {
  p.validate();
  const double ops = static_cast<double>(p.O) * p.O * p.C_in * p.C_out * p.k * p.k;
  if (p.kind == LayerKind::ann_encoder) return ops * kEnergyMacPj;
  return static_cast<double>(p.T * p.D) * p.fr * ops * kEnergyAcPj;
}

// Collects per-layer input sparsity during inference. Layers report the
// count of nonzero input elements (spikes, for binary inputs) and the total
// element count; structural fields must agree across calls.
class EnergyProbe {
 public:
  struct Stat {
    LayerKind kind = LayerKind::snn;
    std::size_t O = 0, C_in = 0, C_out = 0, k = 1;
    std::uint64_t input_spikes = 0;
    std::uint64_t input_elems = 0;
  };

  void record(const std::string& id, LayerKind kind, std::size_t O, std::size_t C_in,
              std::size_t C_out, std::size_t k, std::uint64_t input_spikes,
              std::uint64_t input_elems) {
    auto it = stats_.find(id);
    if (it == stats_.end()) {
      order_.push_back(id);
      Stat s;
      s.kind = kind;
      s.O = O;
      s.C_in = C_in;
      s.C_out = C_out;
      s.k = k;
      s.input_spikes = input_spikes;
      s.input_elems = input_elems;
      stats_.emplace(id, s);
      return;
    }
    Stat& s = it->second;
    if (s.kind != kind || s.O != O || s.C_in != C_in || s.C_out != C_out || s.k != k) {
      throw ConfigError("energy probe: layer " + id + " recorded with conflicting structure");
    }
    s.input_spikes += input_spikes;
    s.input_elems += input_elems;
  }

  // associative merge for sharded evaluation
  void merge(const EnergyProbe& other) {
    for (const auto& id : other.order_) {
      const Stat& s = other.stats_.at(id);
      record(id, s.kind, s.O, s.C_in, s.C_out, s.k, s.input_spikes, s.input_elems);
    }
  }

  const std::vector<std::string>& layer_ids() const { return order_; }
  bool has(const std::string& id) const { return stats_.count(id) != 0; }
  const Stat& stat(const std::string& id) const { return stats_.at(id); }

  double firing_rate(const std::string& id) const {
    const Stat& s = stats_.at(id);
    if (s.input_elems == 0) return 0.0;
    return static_cast<double>(s.input_spikes) / static_cast<double>(s.input_elems);
  }

  std::uint64_t total_spikes() const {
    std::uint64_t n = 0;
    for (const auto& kv : stats_) n += kv.second.input_spikes;
    return n;
  }
  std::uint64_t total_elems() const {
    std::uint64_t n = 0;
    for (const auto& kv : stats_) n += kv.second.input_elems;
    return n;
  }

  bool empty() const { return order_.empty(); }

 private:
  std::map<std::string, Stat> stats_;
  std::vector<std::string> order_;  // first-seen order for stable reports
};

struct EnergyReport {
  struct Entry {
    LayerProfile profile;
    double pj = 0.0;
  };
  std::vector<Entry> layers;
  double total_mj = 0.0;
  std::uint64_t total_spikes = 0;
  double mean_firing_rate = 0.0;
};

// Assembles the report from recorded firing rates. Every snn layer in the
// probe must have a firing-rate entry; totals are 64-bit float sums. 1 mJ =
// 1e9 pJ.
inline EnergyReport energy_report(const EnergyProbe& probe, std::size_t timesteps,
                                  std::size_t virtual_timestep = 1) {
  if (probe.empty()) throw ConfigError("energy_report: no recorded layers");
  EnergyReport rep;
  double total_pj = 0.0;
  for (const auto& id : probe.layer_ids()) {
    const auto& s = probe.stat(id);
    LayerProfile p;
    p.layer_id = id;
    p.kind = s.kind;
    p.O = s.O;
    p.C_in = s.C_in;
    p.C_out = s.C_out;
    p.k = s.k;
    p.T = timesteps;
    p.D = virtual_timestep;
    if (s.kind == LayerKind::snn) {
      if (s.input_elems == 0) {
        throw ConfigError("energy_report: missing firing rate for layer " + id);
      }
      p.fr = probe.firing_rate(id);
    }
    EnergyReport::Entry e;
    e.profile = p;
    e.pj = layer_energy_pj(p);
    total_pj += e.pj;
    rep.layers.push_back(std::move(e));
  }
  rep.total_mj = total_pj / 1e9;
  rep.total_spikes = probe.total_spikes();
  rep.mean_firing_rate =
      probe.total_elems() == 0
          ? 0.0
          : static_cast<double>(probe.total_spikes()) / static_cast<double>(probe.total_elems());
  return rep;
}

}  // namespace safnet
