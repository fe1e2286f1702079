#pragma once

#include <span>

#include "feather/feather.hpp"

namespace feather {

/// Cubic ramp from 0 to `final_sparsity`, reached at ramp_fraction·total_epochs
/// and held afterwards.
struct SparsitySchedule {
  double final_sparsity = 0.9;
  int total_epochs = 1;
  double ramp_fraction = 0.5;

  void validate() const;
};

/// s(e) = S_f·(1 − (1 − min(e/(ramp·E), 1))³), for 0 <= e < E.
double cubic_sparsity(int epoch, const SparsitySchedule& schedule);

enum class BackboneType { Global, UniformLayerwise };

struct BackboneKind {
  BackboneType type = BackboneType::Global;
  bool exempt_first_conv = false;

  static BackboneKind global() { return {BackboneType::Global, false}; }
  static BackboneKind uniform(bool exempt_first_conv = true) { return {BackboneType::UniformLayerwise, exempt_first_conv}; }
};

/// One threshold for all prunable layers, selected over their pooled magnitudes.
void assign_thresholds_global(std::span<PruneLayerState> layers, double sparsity);

/// Per-layer threshold giving each prunable layer the same sparsity. With
/// `exempt_first_conv`, the first prunable conv layer stays dense (T = 0).
void assign_thresholds_uniform(std::span<PruneLayerState> layers, double sparsity, bool exempt_first_conv);

void assign_thresholds(const BackboneKind& backbone, std::span<PruneLayerState> layers, double sparsity);

/// Fraction of prunable weights with |w| <= T under each layer's current threshold.
double achieved_sparsity(std::span<const PruneLayerState> layers);

/// Fraction of prunable weights whose last-forward mask is false.
double mask_sparsity(std::span<const PruneLayerState> layers);

}  // namespace feather
