#include "muprop/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "muprop/distributions.hpp"
#include "muprop/rng.hpp"

namespace muprop {

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
  if (off + 4 > b.size()) throw Error("truncated header");
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                              static_cast<char>(v)};
  out.write(b.data(), 4);
}

std::string hex(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

}  // namespace

ImageSet load_mnist_idx(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const std::uint32_t magic = be32(bytes, 0);
  if (magic != 0x00000803) throw Error("bad magic " + hex(magic) + " in " + path.string() + " (expected 0x00000803)");
  ImageSet set;
  set.count = be32(bytes, 4);
  set.rows = be32(bytes, 8);
  set.cols = be32(bytes, 12);
  if (set.rows == 0 || set.cols == 0) throw Error("dimension mismatch: zero-sized images in " + path.string());
  const std::size_t payload = set.count * set.rows * set.cols;
  if (bytes.size() - 16 < payload) throw Error("truncated payload in " + path.string());
  if (bytes.size() - 16 > payload) throw Error("dimension mismatch: trailing bytes in " + path.string());
  set.pixels.resize(payload);
  for (std::size_t i = 0; i < payload; ++i) set.pixels[i] = bytes[16 + i] / 255.0;
  return set;
}

std::size_t load_mnist_labels(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const std::uint32_t magic = be32(bytes, 0);
  if (magic != 0x00000801) throw Error("bad magic " + hex(magic) + " in " + path.string() + " (expected 0x00000801)");
  const std::size_t count = be32(bytes, 4);
  if (bytes.size() - 8 < count) throw Error("truncated payload in " + path.string());
  return count;
}

void write_idx_images(const std::filesystem::path& path, const ImageSet& images) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  put_be32(out, 0x00000803);
  put_be32(out, static_cast<std::uint32_t>(images.count));
  put_be32(out, static_cast<std::uint32_t>(images.rows));
  put_be32(out, static_cast<std::uint32_t>(images.cols));
  for (double p : images.pixels) out.put(static_cast<char>(std::lround(std::clamp(p, 0.0, 1.0) * 255.0)));
}

std::string_view to_string(Binarization b) { return b == Binarization::Resample ? "resample" : "threshold"; }

Binarization binarization_from_string(std::string_view s) {
  if (s == "resample") return Binarization::Resample;
  if (s == "threshold") return Binarization::Threshold;
  throw Error("unknown binarization '" + std::string(s) + "'");
}

Tensor binarize(std::span<const double> image, Binarization mode, std::uint64_t seed) {
  Tensor out(Shape{image.size()});
  if (mode == Binarization::Threshold) {
    for (std::size_t i = 0; i < image.size(); ++i) out[i] = image[i] > 0.5 ? 1.0 : 0.0;
    return out;
  }
  CounterRng rng(seed);
  for (std::size_t i = 0; i < image.size(); ++i) out[i] = rng.uniform() < image[i] ? 1.0 : 0.0;
  return out;
}

TaskData binarize_and_split(const ImageSet& images, Task task, Binarization mode, std::uint64_t seed) {
  TaskData data;
  const std::size_t d = images.pixels_per_image();
  if (task == Task::StructuredPrediction && d % 2 != 0) throw Error("cannot split images with an odd pixel count");
  for (std::size_t i = 0; i < images.count; ++i) {
    Tensor b = binarize(images.image(i), mode, derive_key(seed, i));
    if (task == Task::Variational) {
      data.x.push_back(std::move(b));
      continue;
    }
    const auto v = b.data();
    data.x.push_back(Tensor(Shape{d / 2}, std::vector<double>(v.begin(), v.begin() + d / 2)));
    data.y.push_back(Tensor(Shape{d / 2}, std::vector<double>(v.begin() + d / 2, v.end())));
  }
  return data;
}

ImageSet synthetic_multimodal(std::size_t count, std::uint64_t seed, std::size_t prototypes) {
  constexpr std::size_t half = 8;
  // Patterns are fixed by the generator, not by the sample seed, so train and test agree.
  CounterRng pattern_rng(derive_key(0x5EED, prototypes));
  auto random_bits = [&] {
    std::array<double, half> bits{};
    for (double& b : bits) b = pattern_rng.uniform() < 0.5 ? 1.0 : 0.0;
    return bits;
  };
  std::vector<std::array<double, half>> tops, bottoms;
  for (std::size_t p = 0; p < prototypes; ++p) {
    tops.push_back(random_bits());
    bottoms.push_back(random_bits());
    bottoms.push_back(random_bits());
  }

  ImageSet set;
  set.count = count;
  set.rows = 4;
  set.cols = 4;
  set.pixels.reserve(count * 16);
  CounterRng rng(derive_key(seed, 0xDA7A));
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t p = rng.next_u64() % prototypes;
    const std::size_t mode = rng.uniform() < 0.5 ? 0 : 1;
    for (double b : tops[p]) set.pixels.push_back(b > 0.5 ? 0.95 : 0.05);
    for (double b : bottoms[2 * p + mode]) set.pixels.push_back(b > 0.5 ? 0.95 : 0.05);
  }
  return set;
}

ImageSet synthetic_sbn(std::size_t count, std::uint64_t seed, std::size_t latent, std::size_t visible) {
  CounterRng model_rng(derive_key(0x5B4, latent, visible));
  std::vector<double> prior(latent), w(visible * latent), b(visible);
  for (double& v : prior) v = model_rng.uniform(-1.0, 1.0);
  for (double& v : w) v = 2.5 * model_rng.normal();
  for (double& v : b) v = model_rng.uniform(-1.0, 1.0);

  ImageSet set;
  set.count = count;
  set.rows = 1;
  set.cols = visible;
  set.pixels.reserve(count * visible);
  CounterRng rng(derive_key(seed, 0xDA7B));
  std::vector<double> h(latent);
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t j = 0; j < latent; ++j) h[j] = rng.uniform() < sigmoid(prior[j]) ? 1.0 : 0.0;
    for (std::size_t r = 0; r < visible; ++r) {
      double a = b[r];
      for (std::size_t j = 0; j < latent; ++j) a += w[r * latent + j] * h[j];
      set.pixels.push_back(sigmoid(a));
    }
  }
  return set;
}

}  // namespace muprop
