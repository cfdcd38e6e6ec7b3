#pragma once

#include <cmath>

#include "safnet/tensor.hpp"

namespace safnet {

enum class ResetMode { hard, soft };

// Leaky integrate-and-fire constants. surrogate_width is the alpha of the
// arctan surrogate used during backpropagation.
struct LifParams {
  double v_threshold = 1.0;
  double leak = 0.5;
  double v_reset = 0.0;
  ResetMode reset_mode = ResetMode::hard;
  double surrogate_width = 2.0;

  void validate() const {
    if (!(v_threshold > 0.0)) throw ConfigError("lif: v_threshold must be > 0");
    if (leak < 0.0 || leak > 1.0) throw ConfigError("lif: leak must be in [0,1]");
    if (!(surrogate_width > 0.0)) throw ConfigError("lif: surrogate_width must be > 0");
  }
};

// Post-fire membrane potential per neuron; zero-initialized at t=0.
struct LifState {
  DenseTensor h;
};

struct LifForwardResult {
  SpikeTensor spikes;     // S[t]
  LifState final_state;   // H[T-1]
  DenseTensor u_trace;    // U[t], retained for backward
};

// Membrane recurrence over the leading (time) axis:
//   U[t] = leak * H[t-1] + X[t]
//   S[t] = 1 if U[t] >= v_threshold else 0
//   H[t] = hard: U[t]*(1-S[t]) + v_reset*S[t];  soft: U[t] - v_threshold*S[t]
inline LifForwardResult lif_forward(const DenseTensor& x_seq, const LifParams& params) {
  params.validate();
  if (x_seq.rank() < 1 || x_seq.shape[0] == 0) throw ConfigError("lif_forward: empty sequence");
  x_seq.require_finite("lif_forward");
  const std::size_t T = x_seq.shape[0];
  const std::size_t n = x_seq.size() / T;
  LifForwardResult r;
  r.spikes = SpikeTensor(x_seq.shape);
  r.u_trace = DenseTensor(x_seq.shape);
  std::vector<std::size_t> state_shape(x_seq.shape.begin() + 1, x_seq.shape.end());
  if (state_shape.empty()) state_shape.push_back(1);
  r.final_state.h = DenseTensor::zeros(state_shape);
  std::vector<double> h(n, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const double* x = &x_seq.data[t * n];
    double* u = &r.u_trace.data[t * n];
    std::uint8_t* s = &r.spikes.data[t * n];
    for (std::size_t i = 0; i < n; ++i) {
      const double ui = params.leak * h[i] + x[i];
      const bool fire = ui - params.v_threshold >= 0.0;
      u[i] = ui;
      s[i] = fire ? 1 : 0;
      if (params.reset_mode == ResetMode::hard) {
        h[i] = fire ? params.v_reset : ui;
      } else {
        h[i] = fire ? ui - params.v_threshold : ui;
      }
    }
  }
  std::copy(h.begin(), h.end(), r.final_state.h.data.begin());
  return r;
}

// dS/dU of the arctan surrogate at membrane value u:
//   alpha / (2 * (1 + (pi*alpha*(u - v_th)/2)^2))
// Strictly positive, peaks at u = v_threshold with value alpha/2.
inline double surrogate_grad(double u, const LifParams& params) {
  const double a = params.surrogate_width;
  const double z = 1.5707963267948966 * a * (u - params.v_threshold);  // pi*a*(u-vth)/2
  return a / (2.0 * (1.0 + z * z));
}

// Smooth firing primal whose derivative (at temperature 1) is surrogate_grad:
//   0.5 + atan(pi*alpha*(u - v_th) / (2*temperature)) / pi
inline double soft_spike(double u, const LifParams& params, double temperature = 1.0) {
  const double a = params.surrogate_width;
  const double z = 1.5707963267948966 * a * (u - params.v_threshold) / temperature;
  return 0.5 + std::atan(z) / 3.141592653589793;
}

// Same recurrence as lif_forward with the Heaviside replaced by soft_spike;
// fully differentiable. Approaches the hard spikes as temperature -> 0.
inline DenseTensor relaxed_forward(const DenseTensor& x_seq, const LifParams& params,
                                   double temperature) {
  params.validate();
  if (!(temperature > 0.0)) throw ConfigError("relaxed_forward: temperature must be > 0");
  if (x_seq.rank() < 1 || x_seq.shape[0] == 0) throw ConfigError("relaxed_forward: empty sequence");
  x_seq.require_finite("relaxed_forward");
  const std::size_t T = x_seq.shape[0];
  const std::size_t n = x_seq.size() / T;
  DenseTensor out(x_seq.shape);
  std::vector<double> h(n, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const double* x = &x_seq.data[t * n];
    double* s = &out.data[t * n];
    for (std::size_t i = 0; i < n; ++i) {
      const double ui = params.leak * h[i] + x[i];
      const double si = soft_spike(ui, params, temperature);
      s[i] = si;
      if (params.reset_mode == ResetMode::hard) {
        h[i] = ui * (1.0 - si) + params.v_reset * si;
      } else {
        h[i] = ui - params.v_threshold * si;
      }
    }
  }
  return out;
}

// Stateless single-step neuron: fires where u >= v_threshold. Used for the
// attention gate and reference attention, which carry no temporal state.
inline SpikeTensor spike_step(const DenseTensor& u, const LifParams& params) {
  params.validate();
  SpikeTensor s(u.shape);
  for (std::size_t i = 0; i < u.size(); ++i) {
    s.data[i] = u.data[i] - params.v_threshold >= 0.0 ? 1 : 0;
  }
  return s;
}

}  // namespace safnet
