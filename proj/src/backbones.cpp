#include "feather/backbones.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace feather {

void SparsitySchedule::validate() const {
  if (!(final_sparsity >= 0.0 && final_sparsity < 1.0)) {
    throw ContractError("final sparsity must lie in [0,1), got " + std::to_string(final_sparsity));
  }
  if (total_epochs < 1) throw ContractError("total_epochs must be positive");
  if (!(ramp_fraction > 0.0 && ramp_fraction <= 1.0)) {
    throw ContractError("ramp_fraction must lie in (0,1], got " + std::to_string(ramp_fraction));
  }
}

double cubic_sparsity(int epoch, const SparsitySchedule& schedule) {
  schedule.validate();
  if (epoch < 0 || epoch >= schedule.total_epochs) {
    throw ContractError("epoch " + std::to_string(epoch) + " outside [0," + std::to_string(schedule.total_epochs) + ")");
  }
  const double progress =
      std::min(static_cast<double>(epoch) / (schedule.ramp_fraction * schedule.total_epochs), 1.0);
  const double remaining = 1.0 - progress;
  return schedule.final_sparsity * (1.0 - remaining * remaining * remaining);
}

namespace {

void check_assignable(std::span<PruneLayerState> layers, double sparsity) {
  bool any = false;
  for (const auto& l : layers) any = any || l.prunable;
  if (!any) throw ContractError("threshold assignment needs at least one prunable layer");
  if (!(sparsity >= 0.0 && sparsity < 1.0)) {
    throw ContractError("requested sparsity must lie in [0,1), got " + std::to_string(sparsity));
  }
}

std::vector<float> magnitudes(const PruneLayerState& layer) {
  const auto& w = layer.weights.data();
  std::vector<float> out(static_cast<std::size_t>(w.size()));
  for (Eigen::Index i = 0; i < w.size(); ++i) out[static_cast<std::size_t>(i)] = std::abs(w[i]);
  return out;
}

}  // namespace

void assign_thresholds_global(std::span<PruneLayerState> layers, double sparsity) {
  check_assignable(layers, sparsity);
  std::vector<float> pooled;
  for (const auto& l : layers) {
    if (!l.prunable) continue;
    auto m = magnitudes(l);
    pooled.insert(pooled.end(), m.begin(), m.end());
  }
  const auto t = select_threshold<float>(pooled, sparsity);
  for (auto& l : layers) {
    if (l.prunable) l.threshold = t;
  }
}

void assign_thresholds_uniform(std::span<PruneLayerState> layers, double sparsity, bool exempt_first_conv) {
  check_assignable(layers, sparsity);
  bool exempted = false;
  for (auto& l : layers) {
    if (!l.prunable) continue;
    if (exempt_first_conv && l.is_conv && !exempted) {
      exempted = true;
      l.threshold = ThresholdValue(0.0);
      continue;
    }
    l.threshold = select_threshold<float>(magnitudes(l), sparsity);
  }
}

void assign_thresholds(const BackboneKind& backbone, std::span<PruneLayerState> layers, double sparsity) {
  if (backbone.type == BackboneType::Global) {
    assign_thresholds_global(layers, sparsity);
  } else {
    assign_thresholds_uniform(layers, sparsity, backbone.exempt_first_conv);
  }
}

double achieved_sparsity(std::span<const PruneLayerState> layers) {
  double pruned = 0.0;
  double total = 0.0;
  for (const auto& l : layers) {
    if (!l.prunable) continue;
    const auto t = l.threshold.value_or(ThresholdValue(0.0));
    pruned += static_cast<double>(pruned_count(l.weights.data(), t));
    total += static_cast<double>(l.size());
  }
  return total > 0.0 ? pruned / total : 0.0;
}

double mask_sparsity(std::span<const PruneLayerState> layers) {
  double pruned = 0.0;
  double total = 0.0;
  for (const auto& l : layers) {
    if (!l.prunable) continue;
    pruned += static_cast<double>(l.mask.size() - l.mask.count());
    total += static_cast<double>(l.mask.size());
  }
  return total > 0.0 ? pruned / total : 0.0;
}

}  // namespace feather
