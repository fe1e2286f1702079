#include "feather/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include "feather/errors.hpp"
#include "feather/random.hpp"

namespace feather {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset, const std::string& source) {
  if (offset + 4 > bytes.size()) throw FormatError(source + ": truncated header", offset);
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace

Tensorf Dataset::batch(std::span<const std::size_t> rows) const {
  const std::size_t width = sample_size();
  Vector<float> data(static_cast<Eigen::Index>(rows.size() * width));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= size()) throw IndexError("sample " + std::to_string(rows[r]) + " out of range");
    std::copy_n(features.begin() + static_cast<std::ptrdiff_t>(rows[r] * width), width,
                data.data() + static_cast<std::ptrdiff_t>(r * width));
  }
  Shape shape{rows.size()};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  return Tensorf(std::move(shape), std::move(data));
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> rows) const {
  std::vector<int> out(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) out[r] = labels.at(rows[r]);
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.sample_shape = sample_shape;
  out.num_classes = num_classes;
  const std::size_t width = sample_size();
  out.features.reserve(rows.size() * width);
  out.labels.reserve(rows.size());
  for (auto r : rows) {
    auto first = features.begin() + static_cast<std::ptrdiff_t>(r * width);
    out.features.insert(out.features.end(), first, first + static_cast<std::ptrdiff_t>(width));
    out.labels.push_back(labels.at(r));
  }
  return out;
}

std::pair<Shape, std::vector<float>> decode_idx_images(std::span<const std::uint8_t> bytes, const std::string& source) {
  const auto magic = read_be32(bytes, 0, source);
  if (magic != kImageMagic) throw FormatError(source + ": bad IDX image magic " + std::to_string(magic), 0);
  const auto count = read_be32(bytes, 4, source);
  const auto rows = read_be32(bytes, 8, source);
  const auto cols = read_be32(bytes, 12, source);
  if (count == 0 || rows == 0 || cols == 0) throw FormatError(source + ": zero dimension in IDX header", 4);
  const std::size_t payload = std::size_t{count} * rows * cols;
  if (bytes.size() < 16 + payload) {
    throw FormatError(source + ": truncated pixel data, expected " + std::to_string(payload) + " bytes", bytes.size());
  }
  std::vector<float> pixels(payload);
  for (std::size_t i = 0; i < payload; ++i) pixels[i] = static_cast<float>(bytes[16 + i]) / 255.0f;
  return {Shape{count, 1, rows, cols}, std::move(pixels)};
}

std::vector<int> decode_idx_labels(std::span<const std::uint8_t> bytes, const std::string& source, int num_classes) {
  const auto magic = read_be32(bytes, 0, source);
  if (magic != kLabelMagic) throw FormatError(source + ": bad IDX label magic " + std::to_string(magic), 0);
  const auto count = read_be32(bytes, 4, source);
  if (bytes.size() < 8 + std::size_t{count}) {
    throw FormatError(source + ": truncated label data, expected " + std::to_string(count) + " labels", bytes.size());
  }
  std::vector<int> labels(count);
  for (std::size_t i = 0; i < count; ++i) {
    labels[i] = bytes[8 + i];
    if (labels[i] >= num_classes) {
      throw IndexError(source + ": label " + std::to_string(labels[i]) + " at byte offset " + std::to_string(8 + i) +
                       " outside [0," + std::to_string(num_classes) + ")");
    }
  }
  return labels;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, int num_classes) {
  auto [shape, pixels] = decode_idx_images(read_file(images), images.string());
  auto y = decode_idx_labels(read_file(labels), labels.string(), num_classes);
  if (y.size() != shape[0]) {
    throw FormatError("image count " + std::to_string(shape[0]) + " in " + images.string() + " does not match label count " +
                          std::to_string(y.size()) + " in " + labels.string(),
                      4);
  }
  Dataset d;
  d.sample_shape = Shape(shape.begin() + 1, shape.end());
  d.features = std::move(pixels);
  d.labels = std::move(y);
  d.num_classes = num_classes;
  return d;
}

Dataset synth_blobs(const BlobSpec& spec) {
  if (spec.classes < 2) throw ContractError("synthetic blobs need at least 2 classes");
  if (spec.dims < 2) throw ContractError("synthetic blobs need at least 2 dimensions");
  if (spec.samples < spec.classes) throw ContractError("synthetic blobs need at least one sample per class");
  if (!(spec.noise >= 0.0) || !std::isfinite(spec.noise)) throw ContractError("blob noise must be finite and >= 0");

  const auto dims = static_cast<std::size_t>(spec.dims);
  const bool simplex = spec.classes <= spec.dims;
  auto rng = SplitMix64::derive(spec.seed, 0x626c6f6273ULL);

  Dataset d;
  d.sample_shape = {dims};
  d.num_classes = spec.classes;
  d.features.resize(static_cast<std::size_t>(spec.samples) * dims);
  d.labels.resize(static_cast<std::size_t>(spec.samples));
  for (std::size_t i = 0; i < d.labels.size(); ++i) {
    const int k = static_cast<int>(i % static_cast<std::size_t>(spec.classes));
    d.labels[i] = k;
    float* row = d.features.data() + i * dims;
    for (std::size_t j = 0; j < dims; ++j) row[j] = static_cast<float>(spec.noise * rng.normal());
    if (simplex) {
      row[k] += static_cast<float>(1.0 / std::sqrt(2.0));
    } else {
      row[0] += static_cast<float>(k);
    }
  }
  return d;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ContractError("train fraction must lie in (0,1), got " + std::to_string(train_fraction));
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = SplitMix64::derive(seed, 0x73706c6974ULL);
  shuffle(std::span<std::size_t>(order), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(data.size())));
  if (n_train == 0 || n_train == data.size()) throw ContractError("split leaves an empty part");
  std::span<const std::size_t> all(order);
  return {data.subset(all.first(n_train)), data.subset(all.subspan(n_train))};
}

void write_idx(const Dataset& data, const std::filesystem::path& images, const std::filesystem::path& labels) {
  if (data.sample_shape.size() != 3 || data.sample_shape[0] != 1) {
    throw ContractError("IDX images need 1×rows×cols samples, got " + shape_string(data.sample_shape));
  }
  auto be32 = [](std::ofstream& out, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                       static_cast<char>(v)};
    out.write(b, 4);
  };
  std::ofstream img(images, std::ios::binary);
  be32(img, kImageMagic);
  be32(img, static_cast<std::uint32_t>(data.size()));
  be32(img, static_cast<std::uint32_t>(data.sample_shape[1]));
  be32(img, static_cast<std::uint32_t>(data.sample_shape[2]));
  for (float v : data.features) img.put(static_cast<char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
  std::ofstream lab(labels, std::ios::binary);
  be32(lab, kLabelMagic);
  be32(lab, static_cast<std::uint32_t>(data.size()));
  for (int y : data.labels) lab.put(static_cast<char>(y));
  if (!img || !lab) throw std::runtime_error("failed writing IDX files");
}

}  // namespace feather
