#include "feather/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace feather {

Mask MaskSnapshot::flat() const {
  Eigen::Index total = 0;
  for (const auto& m : layers) total += m.size();
  Mask out(total);
  Eigen::Index offset = 0;
  for (const auto& m : layers) {
    out.segment(offset, m.size()) = m;
    offset += m.size();
  }
  return out;
}

PearsonResult mask_pearson(const Mask& a, const Mask& b) {
  if (a.size() != b.size()) {
    throw ContractError("mask_pearson length mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  if (a.size() < 2) throw ContractError("mask_pearson needs at least 2 entries");

  // For {0,1} vectors every moment reduces to a count.
  const auto n = static_cast<double>(a.size());
  const auto na = static_cast<double>(a.count());
  const auto nb = static_cast<double>(b.count());
  const auto nab = static_cast<double>((a && b).count());
  const double var_a = na * (n - na);
  const double var_b = nb * (n - nb);
  const bool identical = (a == b).all();
  if (var_a == 0.0 || var_b == 0.0) return {identical ? 1.0 : 0.0, true};
  if (identical) return {1.0, false};
  const double r = (n * nab - na * nb) / std::sqrt(var_a * var_b);
  return {std::clamp(r, -1.0, 1.0), false};
}

std::vector<CurvePoint> stability_curve(std::span<const MaskSnapshot> snapshots) {
  if (snapshots.empty()) throw ContractError("stability_curve needs at least one snapshot");
  const Mask final_mask = snapshots.back().flat();
  std::vector<CurvePoint> curve;
  curve.reserve(snapshots.size());
  for (const auto& s : snapshots) curve.push_back({s.epoch, mask_pearson(s.flat(), final_mask).r});
  return curve;
}

FlopsReport flops_count(const Model& model, std::span<const Mask> masks) {
  const auto weighted = model.weighted_layers();
  if (masks.size() != weighted.size()) {
    throw ContractError("flops_count got " + std::to_string(masks.size()) + " masks for " +
                        std::to_string(weighted.size()) + " weighted layers");
  }
  const auto shapes = model.activation_shapes();
  FlopsReport report;
  std::size_t w = 0;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& l = model.layers[i];
    if (!l.has_weights()) continue;
    const auto& mask = masks[w++];
    if (mask.size() != l.weight.size()) {
      throw ContractError("mask for layer '" + l.name + "' has " + std::to_string(mask.size()) + " entries, weight has " +
                          std::to_string(l.weight.size()));
    }
    std::uint64_t positions = 1;
    if (l.kind == LayerKind::Conv2d) positions = shapes[i][1] * shapes[i][2];
    const auto macs = static_cast<std::uint64_t>(l.weight.size()) * positions;
    const auto nnz = static_cast<std::uint64_t>(mask.count()) * positions;
    report.layers.push_back({l.name, 2 * macs, 2 * nnz});
    report.dense_total += 2 * macs;
    report.sparse_total += 2 * nnz;
  }
  return report;
}

void write_curve_csv(std::ostream& out, std::span<const CurvePoint> curve) {
  out << "epoch,r\n";
  char buf[64];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof buf, "%d,%.9g\n", p.epoch, p.r);
    out << buf;
  }
}

void write_flops_csv(std::ostream& out, const FlopsReport& report) {
  out << "layer,dense_flops,sparse_flops\n";
  for (const auto& l : report.layers) out << l.layer << ',' << l.dense_flops << ',' << l.sparse_flops << '\n';
  out << "total," << report.dense_total << ',' << report.sparse_total << '\n';
}

}  // namespace feather
