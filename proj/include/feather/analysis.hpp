#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "feather/model.hpp"
#include "feather/thresholding.hpp"

namespace feather {

/// Per-layer masks (true = active) of the prunable layers at the end of an epoch.
struct MaskSnapshot {
  int epoch = 0;
  std::vector<Mask> layers;

  /// All layers concatenated in order.
  Mask flat() const;
};

struct PearsonResult {
  double r = 0.0;
  bool degenerate = false;  // one input had zero variance
};

/// Pearson correlation of two masks encoded as {0,1}. When either has zero
/// variance, r is 1 for identical inputs and 0 otherwise, and `degenerate` is set.
PearsonResult mask_pearson(const Mask& a, const Mask& b);

struct CurvePoint {
  int epoch = 0;
  double r = 0.0;
};

/// Correlation of each snapshot's concatenated mask with the last snapshot's.
std::vector<CurvePoint> stability_curve(std::span<const MaskSnapshot> snapshots);

struct LayerFlops {
  std::string layer;
  std::uint64_t dense_flops = 0;
  std::uint64_t sparse_flops = 0;
};

/// Forward FLOPs per sample at two per multiply-accumulate. Dense layers
/// count 2·in·out (sparse 2·nnz); conv layers 2·F·C·kh·kw·H'·W' (sparse
/// 2·nnz·H'·W'). Biases are not counted.
struct FlopsReport {
  std::vector<LayerFlops> layers;
  std::uint64_t dense_total = 0;
  std::uint64_t sparse_total = 0;
};

/// `masks` holds one mask per weighted layer, in forward order.
FlopsReport flops_count(const Model& model, std::span<const Mask> masks);

/// `epoch,r`
void write_curve_csv(std::ostream& out, std::span<const CurvePoint> curve);
/// `layer,dense_flops,sparse_flops`, then a `total` row.
void write_flops_csv(std::ostream& out, const FlopsReport& report);

}  // namespace feather
