#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "safnet/dataset.hpp"

using namespace safnet;

namespace {

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
}

void push_be32(std::vector<std::uint8_t>& v, std::uint32_t x) {
  v.push_back((x >> 24) & 0xff);
  v.push_back((x >> 16) & 0xff);
  v.push_back((x >> 8) & 0xff);
  v.push_back(x & 0xff);
}

struct TempFile {
  std::string path;
  explicit TempFile(std::string p) : path(std::move(p)) {}
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("idx loader recovers a hand-built 2-image 4x4 pair exactly") {
  std::vector<std::uint8_t> img;
  push_be32(img, 0x00000803);
  push_be32(img, 2);
  push_be32(img, 4);
  push_be32(img, 4);
  for (std::size_t i = 0; i < 32; ++i) img.push_back(static_cast<std::uint8_t>(i * 8));
  std::vector<std::uint8_t> lbl;
  push_be32(lbl, 0x00000801);
  push_be32(lbl, 2);
  lbl.push_back(1);
  lbl.push_back(0);
  TempFile fi("t_images.idx"), fl("t_labels.idx");
  write_bytes(fi.path, img);
  write_bytes(fl.path, lbl);
  LabeledImages d = load_idx(fi.path, fl.path);
  CHECK(d.count == 2);
  CHECK(d.height == 4);
  CHECK(d.width == 4);
  CHECK(d.channels == 1);
  CHECK(d.labels[0] == 1);
  CHECK(d.labels[1] == 0);
  CHECK(d.num_classes == 2);
  for (std::size_t i = 0; i < 32; ++i) {
    CHECK(d.pixels[i] == doctest::Approx(static_cast<double>(i * 8) / 255.0));
  }
}

TEST_CASE("idx loader errors are distinct") {
  TempFile fe("t_empty.idx"), fl("t_lbl.idx");
  write_bytes(fe.path, {});
  std::vector<std::uint8_t> lbl;
  push_be32(lbl, 0x00000801);
  push_be32(lbl, 0);
  write_bytes(fl.path, lbl);
  CHECK_THROWS_WITH_AS(load_idx(fe.path, fl.path), doctest::Contains("truncated"), ConfigError);

  std::vector<std::uint8_t> bad;
  push_be32(bad, 0xDEADBEEF);
  push_be32(bad, 0);
  push_be32(bad, 4);
  push_be32(bad, 4);
  TempFile fb("t_badmagic.idx");
  write_bytes(fb.path, bad);
  CHECK_THROWS_WITH_AS(load_idx(fb.path, fl.path), doctest::Contains("bad magic"), ConfigError);

  // image/label count mismatch
  std::vector<std::uint8_t> img;
  push_be32(img, 0x00000803);
  push_be32(img, 1);
  push_be32(img, 2);
  push_be32(img, 2);
  for (int i = 0; i < 4; ++i) img.push_back(0);
  std::vector<std::uint8_t> lbl2;
  push_be32(lbl2, 0x00000801);
  push_be32(lbl2, 3);
  lbl2.insert(lbl2.end(), {0, 1, 0});
  TempFile fi2("t_img2.idx"), fl2("t_lbl2.idx");
  write_bytes(fi2.path, img);
  write_bytes(fl2.path, lbl2);
  CHECK_THROWS_WITH_AS(load_idx(fi2.path, fl2.path), doctest::Contains("count"), ConfigError);

  CHECK_THROWS_AS(load_idx("missing_file.idx", fl.path), IoError);

  // truncated image payload
  std::vector<std::uint8_t> short_img;
  push_be32(short_img, 0x00000803);
  push_be32(short_img, 2);
  push_be32(short_img, 4);
  push_be32(short_img, 4);
  short_img.push_back(7);
  std::vector<std::uint8_t> lbl3;
  push_be32(lbl3, 0x00000801);
  push_be32(lbl3, 2);
  lbl3.insert(lbl3.end(), {0, 1});
  TempFile fi3("t_img3.idx"), fl3("t_lbl3.idx");
  write_bytes(fi3.path, short_img);
  write_bytes(fl3.path, lbl3);
  CHECK_THROWS_WITH_AS(load_idx(fi3.path, fl3.path), doctest::Contains("truncated"), ConfigError);
}

TEST_CASE("cifar binary loader recovers a hand-built record") {
  std::vector<std::uint8_t> rec(3073, 0);
  rec[0] = 7;  // label
  rec[1] = 255;
  rec[1 + 1024] = 128;
  rec[1 + 2048] = 64;
  TempFile f("t_cifar.bin");
  write_bytes(f.path, rec);
  LabeledImages d = load_cifar_binary(f.path);
  CHECK(d.count == 1);
  CHECK(d.channels == 3);
  CHECK(d.height == 32);
  CHECK(d.labels[0] == 7);
  CHECK(d.pixels[0] == doctest::Approx(1.0));
  CHECK(d.pixels[1024] == doctest::Approx(128.0 / 255.0));
  CHECK(d.pixels[2048] == doctest::Approx(64.0 / 255.0));
}

TEST_CASE("cifar binary: empty file is a valid empty set; 3072 bytes is not") {
  TempFile fe("t_cifar_empty.bin");
  write_bytes(fe.path, {});
  LabeledImages d = load_cifar_binary(fe.path);
  CHECK(d.count == 0);

  TempFile fb("t_cifar_short.bin");
  write_bytes(fb.path, std::vector<std::uint8_t>(3072, 0));
  CHECK_THROWS_WITH_AS(load_cifar_binary(fb.path), doctest::Contains("divisible"), ConfigError);
}

TEST_CASE("synthetic dataset: deterministic bytes per seed") {
  LabeledImages a = gen_synthetic(2, 16, 8, 99);
  LabeledImages b = gen_synthetic(2, 16, 8, 99);
  CHECK(a.pixels == b.pixels);
  CHECK(a.labels == b.labels);
  LabeledImages c = gen_synthetic(2, 16, 8, 100);
  CHECK(a.pixels != c.pixels);
}

TEST_CASE("synthetic dataset: bright quadrant dominates by at least 0.5") {
  LabeledImages d = gen_synthetic(4, 32, 8, 5);
  const std::size_t half = 4;
  for (std::size_t i = 0; i < d.count; ++i) {
    const double* img = &d.pixels[i * 64];
    double qmean[4] = {0, 0, 0, 0};
    for (std::size_t q = 0; q < 4; ++q) {
      const std::size_t r0 = (q / 2) * half, c0 = (q % 2) * half;
      for (std::size_t r = 0; r < half; ++r)
        for (std::size_t c = 0; c < half; ++c) qmean[q] += img[(r0 + r) * 8 + c0 + c];
      qmean[q] /= 16.0;
    }
    const auto cls = static_cast<std::size_t>(d.labels[i]);
    for (std::size_t q = 0; q < 4; ++q) {
      if (q != cls) CHECK(qmean[cls] - qmean[q] >= 0.5);
    }
  }
}

TEST_CASE("synthetic dataset is linearly separable (least-squares probe)") {
  LabeledImages d = gen_synthetic(2, 64, 8, 11);
  // least squares on raw pixels + bias via normal equations
  const std::size_t n = 65;  // 64 pixels + bias
  std::vector<double> ata(n * n, 0.0), atb(n, 0.0);
  for (std::size_t i = 0; i < d.count; ++i) {
    std::vector<double> row(n, 1.0);
    std::copy_n(&d.pixels[i * 64], 64, row.begin());
    const double y = d.labels[i] == 0 ? -1.0 : 1.0;
    for (std::size_t a = 0; a < n; ++a) {
      atb[a] += row[a] * y;
      for (std::size_t b = 0; b < n; ++b) ata[a * n + b] += row[a] * row[b];
    }
  }
  for (std::size_t a = 0; a < n; ++a) ata[a * n + a] += 1e-6;  // ridge for stability
  // Gaussian elimination
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(ata[r * n + col]) > std::abs(ata[piv * n + col])) piv = r;
    }
    for (std::size_t c = 0; c < n; ++c) std::swap(ata[col * n + c], ata[piv * n + c]);
    std::swap(atb[col], atb[piv]);
    const double d0 = ata[col * n + col];
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col || ata[r * n + col] == 0.0) continue;
      const double f = ata[r * n + col] / d0;
      for (std::size_t c = 0; c < n; ++c) ata[r * n + c] -= f * ata[col * n + c];
      atb[r] -= f * atb[col];
    }
  }
  std::vector<double> wvec(n);
  for (std::size_t a = 0; a < n; ++a) wvec[a] = atb[a] / ata[a * n + a];
  std::size_t correct = 0;
  for (std::size_t i = 0; i < d.count; ++i) {
    double score = wvec[64];
    for (std::size_t p = 0; p < 64; ++p) score += wvec[p] * d.pixels[i * 64 + p];
    const int pred = score >= 0.0 ? 1 : 0;
    if (pred == d.labels[i]) ++correct;
  }
  CHECK(correct == d.count);
}

TEST_CASE("synthetic dataset rejects unsupported class counts and tiny sizes") {
  CHECK_THROWS_AS(gen_synthetic(5, 4, 8, 1), ConfigError);
  CHECK_THROWS_AS(gen_synthetic(0, 4, 8, 1), ConfigError);
  CHECK_THROWS_AS(gen_synthetic(2, 4, 7, 1), ConfigError);
}

TEST_CASE("nearest-neighbour upsampling duplicates pixels") {
  LabeledImages d = gen_synthetic(2, 4, 8, 3);
  LabeledImages up = upsample_nearest(d, 2);
  CHECK(up.height == 16);
  CHECK(up.width == 16);
  for (std::size_t i = 0; i < d.count; ++i) {
    for (std::size_t r = 0; r < 16; ++r)
      for (std::size_t c = 0; c < 16; ++c) {
        CHECK(up.pixels[i * 256 + r * 16 + c] == d.pixels[i * 64 + (r / 2) * 8 + c / 2]);
      }
  }
}

TEST_CASE("make_batch assembles images and labels in index order") {
  LabeledImages d = gen_synthetic(2, 6, 8, 3);
  std::vector<int> labels;
  DenseTensor batch = make_batch(d, {4, 1}, &labels);
  CHECK(batch.shape == std::vector<std::size_t>{2, 1, 8, 8});
  CHECK(labels[0] == d.labels[4]);
  CHECK(labels[1] == d.labels[1]);
  for (std::size_t i = 0; i < 64; ++i) CHECK(batch.data[i] == d.pixels[4 * 64 + i]);
  CHECK_THROWS_AS(make_batch(d, {9}), ConfigError);
}
