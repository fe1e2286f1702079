#pragma once

// Straight-through thresholding block.
//
// Forward: the layer computes with w̃ = P_T(w). Backward: the thresholding is
// treated as the identity, and the gradient reaching a pruned position is
// scaled by θ before it is installed on the dense weights.

#include <optional>
#include <string>
#include <vector>

#include "feather/errors.hpp"
#include "feather/tensor.hpp"
#include "feather/thresholding.hpp"

namespace feather {

struct GradScalePolicy {
  enum class Mode { Fixed, AutoStep };

  Mode mode = Mode::AutoStep;
  double theta = 1.0;               // Fixed only
  double threshold_sparsity = 0.95;  // AutoStep: sparsity at which θ drops
  double low_theta = 0.5;           // AutoStep: θ at or above threshold_sparsity

  static GradScalePolicy fixed(double theta) {
    GradScalePolicy p;
    p.mode = Mode::Fixed;
    p.theta = theta;
    p.validate();
    return p;
  }
  static GradScalePolicy auto_step(double threshold_sparsity = 0.95, double low_theta = 0.5) {
    GradScalePolicy p;
    p.threshold_sparsity = threshold_sparsity;
    p.low_theta = low_theta;
    p.validate();
    return p;
  }

  void validate() const {
    if (mode == Mode::Fixed && !(theta >= 0.0 && theta <= 1.0)) {
      throw ContractError("fixed theta must lie in [0,1], got " + std::to_string(theta));
    }
    if (!(low_theta >= 0.0 && low_theta <= 1.0)) {
      throw ContractError("low_theta must lie in [0,1], got " + std::to_string(low_theta));
    }
    if (!(threshold_sparsity > 0.0 && threshold_sparsity < 1.0)) {
      throw ContractError("threshold_sparsity must lie in (0,1), got " + std::to_string(threshold_sparsity));
    }
  }
};

/// θ for a run targeting final sparsity `final_sparsity`. Chosen once per run.
inline double select_theta(const GradScalePolicy& policy, double final_sparsity) {
  if (policy.mode == GradScalePolicy::Mode::Fixed) return policy.theta;
  return final_sparsity < policy.threshold_sparsity ? 1.0 : policy.low_theta;
}

/// Pruning state of one weight tensor.
struct PruneLayerState {
  std::string name;
  Tensorf weights;  // dense, trainable; aliases the model parameter
  std::optional<ThresholdValue> threshold;
  ThresholdOperator op;
  double theta = 1.0;
  Mask mask;  // |w| > T as of the last forward
  bool prunable = true;
  bool is_conv = false;

  Eigen::Index size() const { return weights.size(); }
};

/// Builds w̃ = P_T(w) as a fresh leaf tensor (requiring a gradient when the
/// dense weights do) and refreshes `state.mask`.
inline Tensorf feather_forward(PruneLayerState& state) {
  if (!state.threshold) throw ContractError("layer '" + state.name + "' has no threshold assigned");
  auto result = apply_threshold(state.weights.data(), *state.threshold, state.op);
  state.mask = std::move(result.mask);
  return Tensorf(state.weights.shape(), std::move(result.pruned), state.weights.requires_grad());
}

/// m ⊙ dL/dw̃ with m = 1 on active positions and θ on pruned ones.
inline Vector<float> feather_backward(const PruneLayerState& state, const Vector<float>& grad_wrt_sparse) {
  if (grad_wrt_sparse.size() != state.mask.size()) {
    throw ContractError("gradient of length " + std::to_string(grad_wrt_sparse.size()) + " does not match mask of layer '" +
                        state.name + "' (length " + std::to_string(state.mask.size()) + ")");
  }
  if (state.theta == 1.0) return grad_wrt_sparse;
  const auto theta = static_cast<float>(state.theta);
  return state.mask.select(grad_wrt_sparse, theta * grad_wrt_sparse.array()).matrix();
}

/// Runs feather_backward on the gradient accumulated at `sparse` and
/// installs the result as the dense weights' gradient.
inline void install_dense_gradient(PruneLayerState& state, const Tensorf& sparse) {
  if (!sparse.has_grad()) throw ContractError("sparse weights of layer '" + state.name + "' received no gradient");
  state.weights.set_grad(feather_backward(state, sparse.grad()));
}

}  // namespace feather
