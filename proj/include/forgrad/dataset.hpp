#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "forgrad/tensor.hpp"

namespace forgrad {

enum class Split { Train, Val, Test };
std::string split_name(Split s);

/// Disjoint, covering index sets over a dataset.
struct SplitManifest {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;   // sigma search only
  std::vector<std::size_t> test;  // final reports only

  const std::vector<std::size_t>& indices(Split s) const;
  /// Throws SplitViolation unless the sets are disjoint and cover [0, n).
  void validate(std::size_t n) const;
  std::uint64_t hash() const;
};

/// Seeded shuffle into train / val / test by fraction.
SplitManifest make_splits(std::size_t n, std::uint64_t seed, double val_fraction = 0.2,
                          double test_fraction = 0.2);

struct Dataset {
  std::vector<Tensor> images;  // (C,H,W) in [0,1]
  std::vector<std::size_t> labels;
  std::size_t num_classes = 2;
  SplitManifest splits;
  std::string source;  // "synthetic" or "idx"

  std::vector<Tensor> images_of(Split s) const;
  std::vector<std::size_t> labels_of(Split s) const;
  void validate() const;
};

/// 28x28 noisy ellipses (label 0) and rectangles (label 1), alternating so
/// the classes stay balanced.
Dataset gen_synthetic(std::size_t n, std::uint64_t seed);

/// IDX pair (0x00000803 images, 0x00000801 labels); u8 pixels scaled to [0,1].
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);
void write_idx(const Dataset& data, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

std::string manifest_to_json(const SplitManifest& m);
SplitManifest manifest_from_json(const std::string& text);

}  // namespace forgrad
