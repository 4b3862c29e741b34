#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "muprop/models.hpp"

namespace muprop {

/// Grayscale images with intensities in [0, 1], one row of rows*cols pixels per image.
struct ImageSet {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> pixels;

  std::size_t pixels_per_image() const { return rows * cols; }
  std::span<const double> image(std::size_t i) const {
    return std::span<const double>(pixels).subspan(i * pixels_per_image(), pixels_per_image());
  }
};

/// IDX image file (magic 0x00000803, big-endian). Bytes are scaled to [0, 1].
ImageSet load_mnist_idx(const std::filesystem::path& path);

/// IDX label file (magic 0x00000801); returns the label count after validating the payload.
std::size_t load_mnist_labels(const std::filesystem::path& path);

/// Writes an IDX image file; intensities are rounded to bytes.
void write_idx_images(const std::filesystem::path& path, const ImageSet& images);

enum class Binarization { Resample, Threshold };

std::string_view to_string(Binarization b);
Binarization binarization_from_string(std::string_view s);

/// One binarized copy of an image. Resample draws Bernoulli(intensity) per pixel from
/// the stream `seed`; Threshold keeps pixels above 0.5.
Tensor binarize(std::span<const double> image, Binarization mode, std::uint64_t seed);

/// Binarizes every image (image i uses stream derive_key(seed, i)). Structured prediction
/// splits each vector into its first half (x) and second half (y).
TaskData binarize_and_split(const ImageSet& images, Task task, Binarization mode, std::uint64_t seed);

/// 4x4 images whose top half picks one of `prototypes` patterns and whose bottom half
/// takes one of two modes per pattern, so p(y | x) is bimodal. Intensities are 0.95 / 0.05.
ImageSet synthetic_multimodal(std::size_t count, std::uint64_t seed, std::size_t prototypes = 4);

/// Images drawn from a fixed random sigmoid belief network with `latent` binary units and
/// `visible` pixels; intensities are the pixel means given the sampled latent state.
ImageSet synthetic_sbn(std::size_t count, std::uint64_t seed, std::size_t latent = 10, std::size_t visible = 16);

}  // namespace muprop
