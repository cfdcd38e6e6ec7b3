#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "safnet/tensor.hpp"

namespace safnet {

struct LabeledImages {
  std::size_t count = 0;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;  // [count, channels, h, w], values in [0,1]
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t image_size() const { return channels * height * width; }
};

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  f.seekg(0, std::ios::end);
  const auto len = f.tellg();
  f.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(len));
  if (len > 0) f.read(reinterpret_cast<char*>(bytes.data()), len);
  if (!f) throw IoError("short read from " + path);
  return bytes;
}

inline std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t off,
                          const std::string& path) {
  if (off + 4 > b.size()) throw ConfigError("idx: truncated file " + path);
  return (static_cast<std::uint32_t>(b[off]) << 24) |
         (static_cast<std::uint32_t>(b[off + 1]) << 16) |
         (static_cast<std::uint32_t>(b[off + 2]) << 8) | static_cast<std::uint32_t>(b[off + 3]);
}

}  // namespace detail

// IDX format: big-endian magic (0x00000803 images / 0x00000801 labels),
// dimension sizes, raw unsigned bytes. Pixels are scaled to [0,1].
inline LabeledImages load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto ib = detail::read_file(images_path);
  const auto lb = detail::read_file(labels_path);
  const std::uint32_t imagic = detail::be32(ib, 0, images_path);
  if (imagic != 0x00000803u) {
    std::ostringstream os;
    os << "idx: bad magic 0x" << std::hex << imagic << " in " << images_path
       << " (expected 0x00000803)";
    throw ConfigError(os.str());
  }
  const std::uint32_t lmagic = detail::be32(lb, 0, labels_path);
  if (lmagic != 0x00000801u) {
    std::ostringstream os;
    os << "idx: bad magic 0x" << std::hex << lmagic << " in " << labels_path
       << " (expected 0x00000801)";
    throw ConfigError(os.str());
  }
  const std::uint32_t n = detail::be32(ib, 4, images_path);
  const std::uint32_t h = detail::be32(ib, 8, images_path);
  const std::uint32_t w = detail::be32(ib, 12, images_path);
  const std::uint32_t nl = detail::be32(lb, 4, labels_path);
  if (n != nl) {
    throw ConfigError("idx: image count " + std::to_string(n) + " != label count " +
                      std::to_string(nl));
  }
  const std::size_t need_i = 16 + static_cast<std::size_t>(n) * h * w;
  const std::size_t need_l = 8 + static_cast<std::size_t>(n);
  if (ib.size() < need_i) throw ConfigError("idx: truncated image data in " + images_path);
  if (lb.size() < need_l) throw ConfigError("idx: truncated label data in " + labels_path);
  LabeledImages d;
  d.count = n;
  d.channels = 1;
  d.height = h;
  d.width = w;
  d.pixels.resize(static_cast<std::size_t>(n) * h * w);
  for (std::size_t i = 0; i < d.pixels.size(); ++i) {
    d.pixels[i] = static_cast<double>(ib[16 + i]) / 255.0;
  }
  d.labels.resize(n);
  int max_label = -1;
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = lb[8 + i];
    max_label = std::max(max_label, d.labels[i]);
  }
  d.num_classes = static_cast<std::size_t>(max_label + 1);
  return d;
}

// Images-only IDX parse (for tools that need a raw input image).
inline LabeledImages load_idx_images(const std::string& images_path) {
  const auto ib = detail::read_file(images_path);
  const std::uint32_t magic = detail::be32(ib, 0, images_path);
  if (magic != 0x00000803u) {
    std::ostringstream os;
    os << "idx: bad magic 0x" << std::hex << magic << " in " << images_path;
    throw ConfigError(os.str());
  }
  const std::uint32_t n = detail::be32(ib, 4, images_path);
  const std::uint32_t h = detail::be32(ib, 8, images_path);
  const std::uint32_t w = detail::be32(ib, 12, images_path);
  if (ib.size() < 16 + static_cast<std::size_t>(n) * h * w) {
    throw ConfigError("idx: truncated image data in " + images_path);
  }
  LabeledImages d;
  d.count = n;
  d.channels = 1;
  d.height = h;
  d.width = w;
  d.pixels.resize(static_cast<std::size_t>(n) * h * w);
  for (std::size_t i = 0; i < d.pixels.size(); ++i) {
    d.pixels[i] = static_cast<double>(ib[16 + i]) / 255.0;
  }
  d.labels.assign(n, 0);
  d.num_classes = 1;
  return d;
}

// CIFAR binary: records of 1 label byte + 3072 channel-major pixel bytes
// (R,G,B planes of 32x32), scaled to [0,1].
inline LabeledImages load_cifar_binary(const std::string& path) {
  const auto bytes = detail::read_file(path);
  constexpr std::size_t record = 3073;
  if (bytes.size() % record != 0) {
    throw ConfigError("cifar: file length " + std::to_string(bytes.size()) +
                      " not divisible by " + std::to_string(record));
  }
  LabeledImages d;
  d.count = bytes.size() / record;
  d.channels = 3;
  d.height = 32;
  d.width = 32;
  d.pixels.resize(d.count * 3072);
  d.labels.resize(d.count);
  int max_label = -1;
  for (std::size_t i = 0; i < d.count; ++i) {
    d.labels[i] = bytes[i * record];
    max_label = std::max(max_label, d.labels[i]);
    for (std::size_t j = 0; j < 3072; ++j) {
      d.pixels[i * 3072 + j] = static_cast<double>(bytes[i * record + 1 + j]) / 255.0;
    }
  }
  d.num_classes = d.count == 0 ? 0 : static_cast<std::size_t>(max_label + 1);
  return d;
}

// Synthetic quadrant task: class c fills quadrant c (size/2 square) with 1.0
// over a uniform noise background of amplitude 0.1. Linearly separable by
// construction and byte-deterministic per seed.
inline LabeledImages gen_synthetic(std::size_t classes, std::size_t samples, std::size_t size,
                                   std::uint64_t seed) {
  if (classes == 0 || classes > 4) {
    throw ConfigError("synthetic: classes " + std::to_string(classes) +
                      " outside [1,4] (quadrant scheme)");
  }
  if (size < 8) throw ConfigError("synthetic: size must be >= 8");
  LabeledImages d;
  d.count = samples;
  d.channels = 1;
  d.height = size;
  d.width = size;
  d.num_classes = classes;
  d.pixels.resize(samples * size * size);
  d.labels.resize(samples);
  Rng rng(seed);
  const std::size_t half = size / 2;
  for (std::size_t i = 0; i < samples; ++i) {
    const std::size_t cls = i % classes;
    d.labels[i] = static_cast<int>(cls);
    double* img = &d.pixels[i * size * size];
    for (std::size_t p = 0; p < size * size; ++p) img[p] = rng.uniform() * 0.1;
    const std::size_t row0 = (cls / 2) * half;
    const std::size_t col0 = (cls % 2) * half;
    for (std::size_t r = 0; r < half; ++r) {
      for (std::size_t c = 0; c < half; ++c) {
        img[(row0 + r) * size + col0 + c] = 1.0;
      }
    }
  }
  return d;
}

// Integer nearest-neighbour upsampling; used when a dataset's native size is
// smaller than the model's configured image size.
inline LabeledImages upsample_nearest(const LabeledImages& d, std::size_t factor) {
  if (factor == 0) throw ConfigError("upsample: zero factor");
  if (factor == 1) return d;
  LabeledImages out = d;
  out.height = d.height * factor;
  out.width = d.width * factor;
  out.pixels.assign(d.count * d.channels * out.height * out.width, 0.0);
  for (std::size_t ic = 0; ic < d.count * d.channels; ++ic) {
    const double* src = &d.pixels[ic * d.height * d.width];
    double* dst = &out.pixels[ic * out.height * out.width];
    for (std::size_t r = 0; r < out.height; ++r) {
      for (std::size_t c = 0; c < out.width; ++c) {
        dst[r * out.width + c] = src[(r / factor) * d.width + c / factor];
      }
    }
  }
  return out;
}

// Assembles a [B,C,H,W] batch from dataset indices.
inline DenseTensor make_batch(const LabeledImages& d, const std::vector<std::size_t>& idx,
                              std::vector<int>* labels_out = nullptr) {
  DenseTensor batch({idx.size(), d.channels, d.height, d.width});
  const std::size_t n = d.image_size();
  for (std::size_t b = 0; b < idx.size(); ++b) {
    if (idx[b] >= d.count) throw ConfigError("make_batch: index out of range");
    std::copy_n(&d.pixels[idx[b] * n], n, &batch.data[b * n]);
  }
  if (labels_out) {
    labels_out->clear();
    for (auto i : idx) labels_out->push_back(d.labels[i]);
  }
  return batch;
}

}  // namespace safnet
