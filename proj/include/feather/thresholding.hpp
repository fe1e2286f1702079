#pragma once

// Magnitude thresholding operators P_T(w).
//
//   Soft    sign(w)·(|w| − T)
//   Hard    w
//   PowerP  sign(w)·(|w|^p − T^p)^(1/p)
//
// for |w| > T, and 0 otherwise. PowerP with p = 1 is Soft and tends to Hard
// as p grows.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "feather/errors.hpp"
#include "feather/tensor.hpp"

namespace feather {

enum class ThresholdKind { Soft, Hard, PowerP };

struct ThresholdOperator {
  ThresholdKind kind = ThresholdKind::PowerP;
  double p = 3.0;

  static ThresholdOperator soft() { return {ThresholdKind::Soft, 1.0}; }
  static ThresholdOperator hard() { return {ThresholdKind::Hard, std::numeric_limits<double>::infinity()}; }
  static ThresholdOperator power(double p) {
    ThresholdOperator op{ThresholdKind::PowerP, p};
    op.validate();
    return op;
  }

  void validate() const {
    if (kind == ThresholdKind::PowerP && !(p >= 1.0 && std::isfinite(p))) {
      throw ContractError("power-p threshold needs finite p >= 1, got " + std::to_string(p));
    }
  }

  /// "soft", "hard", or "powerp(p)".
  std::string name() const {
    switch (kind) {
      case ThresholdKind::Soft: return "soft";
      case ThresholdKind::Hard: return "hard";
      case ThresholdKind::PowerP: break;
    }
    std::string s = std::to_string(p);
    s.erase(s.find_last_not_of('0') + 1);
    if (s.back() == '.') s.pop_back();
    return "powerp(" + s + ")";
  }
};

/// Nonnegative pruning threshold, in the units of the weights.
class ThresholdValue {
 public:
  ThresholdValue() = default;
  explicit ThresholdValue(double t) : t_(t) {
    if (!(t >= 0.0) || !std::isfinite(t)) throw ContractError("threshold must be finite and >= 0, got " + std::to_string(t));
  }
  double value() const { return t_; }
  friend bool operator==(ThresholdValue, ThresholdValue) = default;

 private:
  double t_ = 0.0;
};

using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;

/// Thresholds one value. Exact zero threshold is the identity for every operator.
///
/// PowerP is evaluated as |w|·(1 − (T/|w|)^p)^(1/p) with the inner term from
/// expm1/log, in at least double precision: T/|w| < 1 on the active branch so
/// nothing overflows for large p, and the difference keeps full relative
/// accuracy as |w| → T⁺.
template <typename Scalar>
Scalar threshold_value(Scalar w, ThresholdValue threshold, const ThresholdOperator& op) {
  using Acc = std::conditional_t<(sizeof(Scalar) > sizeof(double)), Scalar, double>;
  const Acc t = static_cast<Acc>(threshold.value());
  const Acc mag = std::abs(static_cast<Acc>(w));
  if (t == Acc(0)) return w;
  if (!(mag > t)) return Scalar(0);
  Acc shrunk = mag;
  switch (op.kind) {
    case ThresholdKind::Hard:
      return w;
    case ThresholdKind::Soft:
      shrunk = mag - t;
      break;
    case ThresholdKind::PowerP: {
      const Acc p = static_cast<Acc>(op.p);
      const Acc tail = -std::expm1(p * std::log(t / mag));  // 1 − (T/|w|)^p
      shrunk = mag * std::pow(tail, Acc(1) / p);
      break;
    }
  }
  auto out = static_cast<Scalar>(std::min(shrunk, mag));
  // Rounding may leave |w| − |out| a few ulps above T; step up to the bound.
  const auto mag_s = std::abs(w);
  while (static_cast<Acc>(mag_s) - static_cast<Acc>(out) > t && out < mag_s) {
    out = std::nextafter(out, mag_s);
  }
  return std::signbit(w) ? -out : out;
}

template <typename Scalar>
struct ThresholdResult {
  Vector<Scalar> pruned;
  Mask mask;  // true where |w| > T (active)
};

/// Elementwise P_T over a weight array; mask[i] = |w[i]| > T.
template <typename Derived>
ThresholdResult<typename Derived::Scalar> apply_threshold(const Eigen::DenseBase<Derived>& w, ThresholdValue threshold,
                                                          const ThresholdOperator& op) {
  using Scalar = typename Derived::Scalar;
  op.validate();
  ThresholdResult<Scalar> out{Vector<Scalar>(w.size()), Mask(w.size())};
  const double t = threshold.value();
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    const Scalar v = w.derived().coeff(i);
    if (!std::isfinite(v)) {
      throw DataError("non-finite weight " + std::to_string(static_cast<double>(v)) + " at index " + std::to_string(i));
    }
    out.mask[i] = static_cast<double>(std::abs(v)) > t;
    out.pruned[i] = threshold_value(v, threshold, op);
  }
  return out;
}

/// Threshold pruning at least floor(target·N) of the given magnitudes:
/// T = 0 when that count is 0, otherwise the k-th smallest magnitude. Under
/// the strict |w| > T rule, entries tied with the k-th are pruned too.
template <typename Scalar>
ThresholdValue select_threshold(std::span<const Scalar> magnitudes, double target_sparsity) {
  if (magnitudes.empty()) throw ContractError("select_threshold needs a nonempty magnitude array");
  if (!(target_sparsity >= 0.0 && target_sparsity <= 1.0)) {
    throw ContractError("target sparsity must lie in [0,1], got " + std::to_string(target_sparsity));
  }
  const auto n = magnitudes.size();
  const auto k = static_cast<std::size_t>(std::floor(target_sparsity * static_cast<double>(n)));
  if (k == 0) return ThresholdValue(0.0);
  std::vector<Scalar> work(magnitudes.begin(), magnitudes.end());
  for (auto v : work) {
    if (!(v >= Scalar(0))) throw ContractError("magnitudes must be >= 0, got " + std::to_string(static_cast<double>(v)));
  }
  auto kth = work.begin() + static_cast<std::ptrdiff_t>(k - 1);
  std::nth_element(work.begin(), kth, work.end());
  return ThresholdValue(static_cast<double>(*kth));
}

/// Number of entries pruned (|w| <= T).
template <typename Derived>
Eigen::Index pruned_count(const Eigen::DenseBase<Derived>& w, ThresholdValue threshold) {
  Eigen::Index pruned = 0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (!(static_cast<double>(std::abs(w.derived().coeff(i))) > threshold.value())) ++pruned;
  }
  return pruned;
}

}  // namespace feather
