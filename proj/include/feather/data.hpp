#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "feather/tensor.hpp"

namespace feather {

/// Labelled samples stored contiguously, one row of `sample_size()` floats each.
struct Dataset {
  Shape sample_shape;
  std::vector<float> features;
  std::vector<int> labels;
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_size() const { return shape_size(sample_shape); }

  /// Gathers the given rows into a [n×sample_shape...] tensor.
  Tensorf batch(std::span<const std::size_t> rows) const;
  std::vector<int> batch_labels(std::span<const std::size_t> rows) const;

  Dataset subset(std::span<const std::size_t> rows) const;
};

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Pixels are scaled to [0,1]; images become [N×1×rows×cols]. Labels must lie
/// in [0, num_classes).
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, int num_classes = 10);

/// Decoders behind load_idx, exposed for in-memory use. `source` names the
/// input in error messages.
std::pair<Shape, std::vector<float>> decode_idx_images(std::span<const std::uint8_t> bytes, const std::string& source);
std::vector<int> decode_idx_labels(std::span<const std::uint8_t> bytes, const std::string& source, int num_classes);

struct BlobSpec {
  int classes = 4;
  int dims = 2;
  int samples = 1000;
  double noise = 0.1;
  std::uint64_t seed = 0;
};

/// Gaussian clusters, sample i in class i mod K. Centres sit a unit distance
/// apart: e_k/√2 when K <= dims, otherwise k·e_0 along the first axis. Each
/// coordinate receives N(0, noise²) jitter.
Dataset synth_blobs(const BlobSpec& spec);

/// Seeded shuffle, then the first round(fraction·N) samples become the
/// training part and the rest validation. Both parts must be nonempty.
std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double train_fraction, std::uint64_t seed);

/// Writes the IDX pair for a dataset whose features lie in [0,1].
void write_idx(const Dataset& data, const std::filesystem::path& images, const std::filesystem::path& labels);

}  // namespace feather
