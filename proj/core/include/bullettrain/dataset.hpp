#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include "bullettrain/model.hpp"
#include "bullettrain/tensor.hpp"

namespace bt {

struct Dataset {
  Tensor inputs;  // n x d
  Labels labels;
  std::size_t classes = 2;
  // Per-row image layout (flat vectors use 1 x 1 x d).
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 0;
  double low = 0.0;
  double high = 1.0;
  std::string provenance;  // synthetic-blobs, synthetic-rings, mnist-idx

  std::size_t size() const { return labels.size(); }
  std::size_t features() const { return inputs.cols(); }
  void validate() const;

  // First `n` samples (or all if fewer).
  Dataset head(std::size_t n) const;
  Dataset subset(std::span<const std::size_t> indices) const;
};

enum class SyntheticKind { kBlobs, kRings };

SyntheticKind synthetic_kind_from_string(std::string_view text);

/// Two-class 2D data with balanced, alternating labels.
/// blobs: isotropic Gaussians of std `noise` centred at (-0.5, 0) and (0.5, 0).
/// rings: radii 0.5 and 1.0 around the origin with radial Gaussian noise.
/// Inputs are clamped to [-2, 2], which is the declared bound.
Dataset make_synthetic(SyntheticKind kind, std::size_t n, double noise, std::uint64_t seed);

/// IDX image/label pair (magics 0x00000803 / 0x00000801), pixels scaled to [0, 1].
/// Throws FormatError (with byte offset) on bad magic, truncation or count mismatch.
Dataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Writes inputs (rescaled from [low, high] to 0..255) and labels as IDX files.
void write_mnist_idx(const Dataset& data, const std::filesystem::path& images,
                     const std::filesystem::path& labels);

}  // namespace bt
