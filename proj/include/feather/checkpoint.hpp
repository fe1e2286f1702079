#pragma once

// FTHR checkpoint container. All integers little-endian:
//
//   "FTHR" | version u32 | record count u32 |
//   per record: name length u32 | name (UTF-8) | rank u32 | dims u32 × rank | data
//
// Data is float32 per element, except records whose name ends in "/mask",
// which hold one u8 (0 or 1) per element.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "feather/model.hpp"
#include "feather/trainer.hpp"

namespace feather {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointRecord {
  std::string name;
  Shape dims;
  std::variant<std::vector<float>, std::vector<std::uint8_t>> data;

  bool is_mask() const;
  std::size_t size() const;
};

struct Checkpoint {
  std::vector<CheckpointRecord> records;

  const CheckpointRecord* find(std::string_view name) const;
  const CheckpointRecord& at(std::string_view name) const;

  void add(std::string name, Shape dims, std::vector<float> values);
  void add_mask(std::string name, Shape dims, const Mask& mask);

  std::vector<float> floats(std::string_view name) const;
  Mask mask(std::string_view name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Per weighted layer L: "L/weight", "L/bias", "L/threshold" (rank 0) and "L/mask".
Checkpoint make_checkpoint(const Model& model, std::span<const PruneLayerState> layers);

/// Copies weights and biases from the checkpoint into a model of the same architecture.
void restore_model(Model& model, const Checkpoint& checkpoint);

/// Per weighted layer, the stored mask.
std::vector<Mask> checkpoint_masks(const Model& model, const Checkpoint& checkpoint);

/// Per weighted layer, the stored threshold.
std::vector<ThresholdValue> checkpoint_thresholds(const Model& model, const Checkpoint& checkpoint);

/// Mask snapshots as "epoch<E>/<layer>/mask" records (the masks.bin file).
Checkpoint pack_snapshots(std::span<const MaskSnapshot> snapshots, std::span<const PruneLayerState> layers);
std::vector<MaskSnapshot> unpack_snapshots(const Checkpoint& packed);

}  // namespace feather
