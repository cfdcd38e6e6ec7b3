#pragma once

#include <algorithm>
#include <array>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "safnet/common.hpp"

namespace safnet {

// Real-valued row-major tensor. Holds membrane potentials, weights, logits.
struct DenseTensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  DenseTensor() = default;
  explicit DenseTensor(std::vector<std::size_t> s)
      : shape(std::move(s)), data(numel(shape), 0.0) {}
  DenseTensor(std::vector<std::size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel(shape)) {
      throw ConfigError("tensor data length " + std::to_string(data.size()) +
                        " does not match shape " + shape_str(shape));
    }
  }

  static std::size_t numel(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
  }

  static DenseTensor zeros(std::vector<std::size_t> s) { return DenseTensor(std::move(s)); }

  static DenseTensor full(std::vector<std::size_t> s, double v) {
    DenseTensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape[i]; }

  template <class... Ix>
  std::size_t offset(Ix... ix) const {
    const std::size_t idx[] = {static_cast<std::size_t>(ix)...};
    std::size_t off = 0;
    for (std::size_t d = 0; d < sizeof...(Ix); ++d) off = off * shape[d] + idx[d];
    return off;
  }

  template <class... Ix>
  double& operator()(Ix... ix) {
    return data[offset(ix...)];
  }
  template <class... Ix>
  double operator()(Ix... ix) const {
    return data[offset(ix...)];
  }

  bool all_finite() const {
    for (double v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  void require_finite(const char* what) const {
    if (!all_finite()) throw ConfigError(std::string(what) + ": non-finite values in input");
  }

  bool same_shape(const DenseTensor& o) const { return shape == o.shape; }

  DenseTensor reshaped(std::vector<std::size_t> s) const {
    if (numel(s) != size()) {
      throw ConfigError("reshape " + shape_str(shape) + " -> " + shape_str(s) +
                        " changes element count");
    }
    return DenseTensor(std::move(s), data);
  }
};

// Binary event tensor: every element is exactly 0 or 1. Spike counts are
// exact integers.
struct SpikeTensor {
  std::vector<std::size_t> shape;
  std::vector<std::uint8_t> data;

  SpikeTensor() = default;
  explicit SpikeTensor(std::vector<std::size_t> s)
      : shape(std::move(s)), data(DenseTensor::numel(shape), 0) {}

  static SpikeTensor zeros(std::vector<std::size_t> s) { return SpikeTensor(std::move(s)); }

  static SpikeTensor from_dense(const DenseTensor& d) {
    SpikeTensor s(d.shape);
    for (std::size_t i = 0; i < d.data.size(); ++i) {
      const double v = d.data[i];
      if (v != 0.0 && v != 1.0) {
        throw ConfigError("spike tensor element " + std::to_string(i) + " is " +
                          std::to_string(v) + ", not 0 or 1");
      }
      s.data[i] = v == 1.0 ? 1 : 0;
    }
    return s;
  }

  DenseTensor to_dense() const {
    DenseTensor d(shape);
    for (std::size_t i = 0; i < data.size(); ++i) d.data[i] = data[i];
    return d;
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape[i]; }

  // exact integer spike count
  std::uint64_t spike_count() const {
    std::uint64_t n = 0;
    for (auto v : data) n += v;
    return n;
  }

  template <class... Ix>
  std::size_t offset(Ix... ix) const {
    const std::size_t idx[] = {static_cast<std::size_t>(ix)...};
    std::size_t off = 0;
    for (std::size_t d = 0; d < sizeof...(Ix); ++d) off = off * shape[d] + idx[d];
    return off;
  }
  template <class... Ix>
  std::uint8_t& operator()(Ix... ix) {
    return data[offset(ix...)];
  }
  template <class... Ix>
  std::uint8_t operator()(Ix... ix) const {
    return data[offset(ix...)];
  }
};

// 2-D convolution geometry. groups=1 is a standard conv, groups=in_channels
// is depthwise.
struct ConvSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;

  void validate() const {
    if (in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 || groups == 0) {
      throw ConfigError("conv spec: zero dimension");
    }
    if (in_channels % groups != 0 || out_channels % groups != 0) {
      throw ConfigError("conv spec: channels (" + std::to_string(in_channels) + "," +
                        std::to_string(out_channels) + ") not divisible by groups " +
                        std::to_string(groups));
    }
  }

  std::vector<std::size_t> weight_shape() const {
    return {out_channels, in_channels / groups, kernel, kernel};
  }

  std::size_t param_count(bool bias = false) const {
    return kernel * kernel * (in_channels / groups) * out_channels +
           (bias ? out_channels : 0);
  }
};

// Cross-correlation over [B, C_in, H, W]. Weights are [C_out, C_in/g, k, k].
inline DenseTensor conv2d(const DenseTensor& x, const ConvSpec& spec, const DenseTensor& w) {
  spec.validate();
  if (x.rank() != 4) throw ConfigError("conv2d: input rank " + std::to_string(x.rank()) + " != 4");
  if (x.shape[1] != spec.in_channels) {
    throw ConfigError("conv2d: input channels " + std::to_string(x.shape[1]) +
                      " != spec in_channels " + std::to_string(spec.in_channels));
  }
  if (w.shape != spec.weight_shape()) {
    throw ConfigError("conv2d: weight shape " + shape_str(w.shape) + " != expected " +
                      shape_str(spec.weight_shape()));
  }
  const std::size_t B = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3];
  const std::size_t k = spec.kernel, s = spec.stride, p = spec.padding, g = spec.groups;
  if (H + 2 * p < k || W + 2 * p < k) {
    throw ConfigError("conv2d: kernel " + std::to_string(k) + " larger than padded input " +
                      std::to_string(H + 2 * p) + "x" + std::to_string(W + 2 * p));
  }
  const std::size_t Cg = Cin / g, Og = spec.out_channels / g;
  const std::size_t Ho = (H + 2 * p - k) / s + 1, Wo = (W + 2 * p - k) / s + 1;
  DenseTensor y({B, spec.out_channels, Ho, Wo});
  const double* xd = x.data.data();
  const double* wd = w.data.data();
  double* yd = y.data.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t oc = 0; oc < spec.out_channels; ++oc) {
      const std::size_t gi = oc / Og;
      for (std::size_t oh = 0; oh < Ho; ++oh) {
        for (std::size_t ow = 0; ow < Wo; ++ow) {
          double acc = 0.0;
          for (std::size_t ic = 0; ic < Cg; ++ic) {
            const double* xc = xd + ((b * Cin + gi * Cg + ic) * H) * W;
            const double* wc = wd + ((oc * Cg + ic) * k) * k;
            for (std::size_t kh = 0; kh < k; ++kh) {
              const std::ptrdiff_t ih =
                  static_cast<std::ptrdiff_t>(oh * s + kh) - static_cast<std::ptrdiff_t>(p);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
              for (std::size_t kw = 0; kw < k; ++kw) {
                const std::ptrdiff_t iw =
                    static_cast<std::ptrdiff_t>(ow * s + kw) - static_cast<std::ptrdiff_t>(p);
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                acc += xc[ih * static_cast<std::ptrdiff_t>(W) + iw] * wc[kh * k + kw];
              }
            }
          }
          yd[((b * spec.out_channels + oc) * Ho + oh) * Wo + ow] = acc;
        }
      }
    }
  }
  return y;
}

// Per-channel spatial conv preserving the spatial size (stride 1, pad k/2).
// Weights are [C, 1, k, k].
inline DenseTensor depthwise_conv2d(const DenseTensor& x, std::size_t kernel_size,
                                    const DenseTensor& w) {
  if (x.rank() != 4) throw ConfigError("depthwise_conv2d: input rank != 4");
  const std::size_t C = x.shape[1];
  ConvSpec spec{C, C, kernel_size, 1, kernel_size / 2, C};
  return conv2d(x, spec, w);
}

// 3x3 conv on the first C/4 channels; the remaining 3C/4 pass through.
// Weights are [C/4, C/4, 3, 3].
inline DenseTensor partial_conv(const DenseTensor& x, const DenseTensor& w) {
  if (x.rank() != 4) throw ConfigError("partial_conv: input rank != 4");
  const std::size_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  if (C % 4 != 0 || C == 0) {
    throw ConfigError("partial_conv: channel count " + std::to_string(C) +
                      " not divisible by 4");
  }
  const std::size_t Cq = C / 4;
  const std::vector<std::size_t> want{Cq, Cq, 3, 3};
  if (w.shape != want) {
    throw ConfigError("partial_conv: weight shape " + shape_str(w.shape) + " != expected " +
                      shape_str(want));
  }
  DenseTensor slice({B, Cq, H, W});
  for (std::size_t b = 0; b < B; ++b) {
    std::copy_n(&x.data[(b * C) * H * W], Cq * H * W, &slice.data[(b * Cq) * H * W]);
  }
  ConvSpec spec{Cq, Cq, 3, 1, 1, 1};
  DenseTensor conv = conv2d(slice, spec, w);
  DenseTensor y = x;
  for (std::size_t b = 0; b < B; ++b) {
    std::copy_n(&conv.data[(b * Cq) * H * W], Cq * H * W, &y.data[(b * C) * H * W]);
  }
  return y;
}

enum class BnMode { train, infer };

// Per-channel affine normalization state.
struct BnParams {
  DenseTensor gamma, beta, running_mean, running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  static BnParams identity(std::size_t c) {
    BnParams p;
    p.gamma = DenseTensor::full({c}, 1.0);
    p.beta = DenseTensor::zeros({c});
    p.running_mean = DenseTensor::zeros({c});
    p.running_var = DenseTensor::full({c}, 1.0);
    return p;
  }

  std::size_t channels() const { return gamma.size(); }
};

// Normalizes per channel over every other axis. Train mode uses batch
// statistics and updates running stats by EMA; infer mode uses running stats.
inline DenseTensor batch_norm(const DenseTensor& x, std::size_t ch_axis, BnParams& bn,
                              BnMode mode) {
  if (ch_axis >= x.rank()) throw ConfigError("batch_norm: channel axis out of range");
  const std::size_t C = x.shape[ch_axis];
  if (bn.channels() != C) {
    throw ConfigError("batch_norm: params dimensioned for " + std::to_string(bn.channels()) +
                      " channels, input has " + std::to_string(C));
  }
  x.require_finite("batch_norm");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ch_axis; ++i) outer *= x.shape[i];
  for (std::size_t i = ch_axis + 1; i < x.rank(); ++i) inner *= x.shape[i];
  const std::size_t per_channel = outer * inner;

  std::vector<double> mean(C), var(C);
  if (mode == BnMode::train) {
    for (std::size_t c = 0; c < C; ++c) {
      double m = 0.0;
      for (std::size_t o = 0; o < outer; ++o) {
        const double* p = &x.data[(o * C + c) * inner];
        for (std::size_t i = 0; i < inner; ++i) m += p[i];
      }
      m /= static_cast<double>(per_channel);
      double v = 0.0;
      for (std::size_t o = 0; o < outer; ++o) {
        const double* p = &x.data[(o * C + c) * inner];
        for (std::size_t i = 0; i < inner; ++i) {
          const double d = p[i] - m;
          v += d * d;
        }
      }
      v /= static_cast<double>(per_channel);
      mean[c] = m;
      var[c] = v;
      bn.running_mean.data[c] = (1.0 - bn.momentum) * bn.running_mean.data[c] + bn.momentum * m;
      bn.running_var.data[c] = (1.0 - bn.momentum) * bn.running_var.data[c] + bn.momentum * v;
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = bn.running_mean.data[c];
      var[c] = bn.running_var.data[c];
    }
  }

  DenseTensor y(x.shape);
  for (std::size_t c = 0; c < C; ++c) {
    const double inv = 1.0 / std::sqrt(var[c] + bn.eps);
    const double g = bn.gamma.data[c], b = bn.beta.data[c], m = mean[c];
    for (std::size_t o = 0; o < outer; ++o) {
      const double* p = &x.data[(o * C + c) * inner];
      double* q = &y.data[(o * C + c) * inner];
      for (std::size_t i = 0; i < inner; ++i) q[i] = (p[i] - m) * inv * g + b;
    }
  }
  return y;
}

inline DenseTensor batch_norm(const DenseTensor& x, std::size_t ch_axis, const BnParams& bn) {
  BnParams copy = bn;  // infer mode never mutates running stats
  return batch_norm(x, ch_axis, copy, BnMode::infer);
}

// Max pooling over [B, C, H, W]. Non-divisible tails are covered by implicit
// -inf padding on the right/bottom, so the output covers every input element.
inline DenseTensor max_pool(const DenseTensor& x, std::size_t window, std::size_t stride) {
  if (x.rank() != 4) throw ConfigError("max_pool: input rank != 4");
  if (window == 0 || stride == 0) throw ConfigError("max_pool: zero window or stride");
  const std::size_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  if (window > H || window > W) {
    throw ConfigError("max_pool: window " + std::to_string(window) + " larger than input " +
                      std::to_string(H) + "x" + std::to_string(W));
  }
  auto out_size = [&](std::size_t n) {
    return n <= window ? std::size_t{1} : (n - window + stride - 1) / stride + 1;
  };
  const std::size_t Ho = out_size(H), Wo = out_size(W);
  DenseTensor y({B, C, Ho, Wo});
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const double* p = &x.data[bc * H * W];
    double* q = &y.data[bc * Ho * Wo];
    for (std::size_t oh = 0; oh < Ho; ++oh) {
      for (std::size_t ow = 0; ow < Wo; ++ow) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t kh = 0; kh < window; ++kh) {
          const std::size_t ih = oh * stride + kh;
          if (ih >= H) break;
          for (std::size_t kw = 0; kw < window; ++kw) {
            const std::size_t iw = ow * stride + kw;
            if (iw >= W) break;
            m = std::max(m, p[ih * W + iw]);
          }
        }
        q[oh * Wo + ow] = m;
      }
    }
  }
  return y;
}

// Pooling spikes keeps values in {0,1}.
inline SpikeTensor max_pool(const SpikeTensor& x, std::size_t window, std::size_t stride) {
  return SpikeTensor::from_dense(max_pool(x.to_dense(), window, stride));
}

namespace detail {

// naive 1-D DFT along contiguous lines via a periodic twiddle table
inline void dft_lines(std::vector<std::complex<double>>& a, std::size_t lines, std::size_t n,
                      bool transposed, std::size_t other) {
  std::vector<std::complex<double>> tw(n);
  for (std::size_t m = 0; m < n; ++m) {
    const double ang = -6.283185307179586476925286766559 * static_cast<double>(m) /
                       static_cast<double>(n);
    tw[m] = {std::cos(ang), std::sin(ang)};
  }
  std::vector<std::complex<double>> line(n), out(n);
  for (std::size_t l = 0; l < lines; ++l) {
    for (std::size_t i = 0; i < n; ++i) {
      line[i] = transposed ? a[i * other + l] : a[l * n + i];
    }
    for (std::size_t f = 0; f < n; ++f) {
      std::complex<double> acc{0.0, 0.0};
      for (std::size_t i = 0; i < n; ++i) acc += line[i] * tw[(f * i) % n];
      out[f] = acc;
    }
    for (std::size_t f = 0; f < n; ++f) {
      if (transposed) {
        a[f * other + l] = out[f];
      } else {
        a[l * n + f] = out[f];
      }
    }
  }
}

}  // namespace detail

// Centered magnitude of the 2-D DFT of x[H,W]. The zero-frequency bin lands
// at (H/2, W/2). Satisfies Parseval: sum |X|^2 = H*W*sum |x|^2.
inline DenseTensor fft2_magnitude(const DenseTensor& x) {
  if (x.rank() != 2) throw ConfigError("fft2_magnitude: input rank != 2");
  const std::size_t H = x.shape[0], W = x.shape[1];
  if (H == 0 || W == 0) throw ConfigError("fft2_magnitude: empty input");
  x.require_finite("fft2_magnitude");
  std::vector<std::complex<double>> a(H * W);
  for (std::size_t i = 0; i < H * W; ++i) a[i] = {x.data[i], 0.0};
  detail::dft_lines(a, H, W, false, H);  // rows
  detail::dft_lines(a, W, H, true, W);   // columns
  DenseTensor mag({H, W});
  const std::size_t sh = H - H / 2, sw = W - W / 2;
  for (std::size_t u = 0; u < H; ++u) {
    for (std::size_t v = 0; v < W; ++v) {
      mag.data[u * W + v] = std::abs(a[((u + sh) % H) * W + ((v + sw) % W)]);
    }
  }
  return mag;
}

// ---- layout helpers shared by attention / model paths ----

// [T,B,N,C] tokens -> [T*B, C, H, W] grid, with N = H*W
inline DenseTensor tokens_to_grid(const DenseTensor& x, std::size_t h, std::size_t w) {
  const std::size_t T = x.shape[0], B = x.shape[1], N = x.shape[2], C = x.shape[3];
  if (h * w != N) {
    throw ConfigError("tokens_to_grid: " + std::to_string(N) + " tokens do not form a " +
                      std::to_string(h) + "x" + std::to_string(w) + " grid");
  }
  DenseTensor y({T * B, C, h, w});
  for (std::size_t tb = 0; tb < T * B; ++tb) {
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t c = 0; c < C; ++c) {
        y.data[(tb * C + c) * N + n] = x.data[(tb * N + n) * C + c];
      }
    }
  }
  return y;
}

// [T*B, C, H, W] grid -> [T,B,N,C] tokens
inline DenseTensor grid_to_tokens(const DenseTensor& x, std::size_t t, std::size_t b) {
  const std::size_t C = x.shape[1], N = x.shape[2] * x.shape[3];
  DenseTensor y({t, b, N, C});
  for (std::size_t tb = 0; tb < t * b; ++tb) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t n = 0; n < N; ++n) {
        y.data[(tb * N + n) * C + c] = x.data[(tb * C + c) * N + n];
      }
    }
  }
  return y;
}

}  // namespace safnet
