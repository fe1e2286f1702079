#include <doctest.h>

#include <cmath>
#include <sstream>

#include "feather/analysis.hpp"
#include "feather/random.hpp"

using namespace feather;

namespace {

Mask mask_of(std::initializer_list<int> bits) {
  Mask m(static_cast<Eigen::Index>(bits.size()));
  Eigen::Index i = 0;
  for (int b : bits) m[i++] = b != 0;
  return m;
}

// Textbook sample Pearson over the 0/1 encodings.
double direct_pearson(const Mask& a, const Mask& b) {
  const Eigen::ArrayXd x = a.cast<double>(), y = b.cast<double>();
  const Eigen::ArrayXd dx = x - x.mean(), dy = y - y.mean();
  return (dx * dy).sum() / std::sqrt((dx * dx).sum() * (dy * dy).sum());
}

Mask random_mask(Eigen::Index n, double p_true, SplitMix64& rng) {
  Mask m(n);
  for (Eigen::Index i = 0; i < n; ++i) m[i] = rng.uniform() < p_true;
  return m;
}

}  // namespace

TEST_CASE("pearson examples") {
  const auto a = mask_of({1, 0, 1, 1, 0});
  CHECK(mask_pearson(a, a).r == 1.0);
  CHECK_FALSE(mask_pearson(a, a).degenerate);
  CHECK(mask_pearson(mask_of({1, 1, 0, 0}), mask_of({0, 0, 1, 1})).r == -1.0);
  CHECK(mask_pearson(mask_of({1, 1, 0, 0}), mask_of({1, 0, 1, 0})).r == 0.0);
}

TEST_CASE("pearson degenerate inputs") {
  const auto ones = mask_of({1, 1, 1});
  auto r = mask_pearson(ones, ones);
  CHECK(r.r == 1.0);
  CHECK(r.degenerate);
  r = mask_pearson(ones, mask_of({1, 0, 1}));
  CHECK(r.r == 0.0);
  CHECK(r.degenerate);
  CHECK_THROWS_AS(mask_pearson(ones, mask_of({1, 1})), ContractError);
  CHECK_THROWS_AS(mask_pearson(mask_of({1}), mask_of({1})), ContractError);
}

TEST_CASE("pearson matches the direct formula and is symmetric") {
  SplitMix64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index n = 2 + static_cast<Eigen::Index>(rng.below(3000));
    const auto a = random_mask(n, rng.uniform(0.05, 0.95), rng);
    const auto b = random_mask(n, rng.uniform(0.05, 0.95), rng);
    const auto r = mask_pearson(a, b);
    if (r.degenerate) continue;
    CHECK(r.r == doctest::Approx(direct_pearson(a, b)).epsilon(1e-12).scale(1));
    CHECK(mask_pearson(b, a).r == r.r);
  }
}

TEST_CASE("stability curve") {
  SUBCASE("constant masks") {
    std::vector<MaskSnapshot> snaps;
    for (int e = 0; e < 4; ++e) snaps.push_back({e, {mask_of({1, 0, 1}), mask_of({0, 1})}});
    for (const auto& p : stability_curve(snaps)) CHECK(p.r == 1.0);
  }
  SUBCASE("10% of entries flip per epoch") {
    // Epoch e differs from the final mask on (E−1−e)·10% of the entries.
    const int epochs = 8;
    const Eigen::Index n = 1000;
    SplitMix64 rng(8);
    Mask final_mask = random_mask(n, 0.5, rng);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    shuffle(std::span<Eigen::Index>(order), rng);
    std::vector<MaskSnapshot> snaps;
    for (int e = 0; e < epochs; ++e) {
      Mask m = final_mask;
      const auto flips = static_cast<std::size_t>(epochs - 1 - e) * 100;
      for (std::size_t i = 0; i < flips; ++i) m[order[i]] = !m[order[i]];
      snaps.push_back({e, {m.head(600), m.tail(400)}});
    }
    const auto curve = stability_curve(snaps);
    REQUIRE(curve.size() == epochs);
    for (int e = 1; e < epochs; ++e) CHECK(curve[e].r > curve[e - 1].r);
    CHECK(curve.back().r == 1.0);
    CHECK(curve[3].r == doctest::Approx(direct_pearson(snaps[3].flat(), final_mask)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(stability_curve({}), ContractError);
}

TEST_CASE("flops of a dense layer") {
  const Model fc = make_mlp({100, 10}, 0);
  Mask half(1000);
  for (Eigen::Index i = 0; i < 1000; ++i) half[i] = i % 2 == 0;
  auto r = flops_count(fc, std::vector<Mask>{half});
  CHECK(r.layers[0].dense_flops == 2000);
  CHECK(r.layers[0].sparse_flops == 1000);
  r = flops_count(fc, std::vector<Mask>{Mask::Constant(1000, true)});
  CHECK(r.sparse_total == r.dense_total);
  r = flops_count(fc, std::vector<Mask>{Mask::Constant(1000, false)});
  CHECK(r.sparse_total == 0);
  CHECK_THROWS_AS(flops_count(fc, std::vector<Mask>{}), ContractError);
  CHECK_THROWS_AS(flops_count(fc, std::vector<Mask>{Mask::Constant(999, true)}), ContractError);
}

TEST_CASE("flops of a small CNN") {
  CnnSpec spec;
  spec.input_shape = {1, 12, 12};
  spec.channels = {4, 6};
  spec.classes = 3;
  const Model cnn = make_cnn(spec, 0);
  // conv1 pad 1 keeps 12×12; conv2 stride 2 pad 1 gives 6×6; fc sees 6·6·6.
  const std::uint64_t conv1 = 2ull * 4 * 1 * 9 * 12 * 12;
  const std::uint64_t conv2 = 2ull * 6 * 4 * 9 * 6 * 6;
  const std::uint64_t fc = 2ull * 216 * 3;
  std::vector<Mask> masks;
  for (const auto* l : cnn.weighted_layers()) masks.push_back(Mask::Constant(l->weight.size(), true));
  masks[1].head(100).setConstant(false);
  const auto r = flops_count(cnn, masks);
  REQUIRE(r.layers.size() == 3);
  CHECK(r.layers[0].dense_flops == conv1);
  CHECK(r.layers[1].dense_flops == conv2);
  CHECK(r.layers[2].dense_flops == fc);
  CHECK(r.layers[1].sparse_flops == 2ull * (216 - 100) * 36);
  CHECK(r.dense_total == conv1 + conv2 + fc);
  CHECK(r.sparse_total == conv1 + 2ull * 116 * 36 + fc);

  std::ostringstream os;
  write_flops_csv(os, r);
  const std::string csv = os.str();
  CHECK(csv.rfind("layer,dense_flops,sparse_flops\nconv1,", 0) == 0);
  CHECK(csv.find("total," + std::to_string(r.dense_total) + "," + std::to_string(r.sparse_total) + "\n") !=
        std::string::npos);
}

TEST_CASE("nested masks give nonincreasing sparse flops") {
  const Model mlp = make_mlp({20, 10, 5}, 0);
  SplitMix64 rng(2);
  std::vector<Mask> masks{Mask::Constant(200, true), Mask::Constant(50, true)};
  std::uint64_t prev = flops_count(mlp, masks).sparse_total;
  for (int step = 0; step < 30; ++step) {
    masks[rng.below(2)][static_cast<Eigen::Index>(rng.below(50))] = false;
    const auto now = flops_count(mlp, masks).sparse_total;
    CHECK(now <= prev);
    prev = now;
  }
}

TEST_CASE("curve csv") {
  std::ostringstream os;
  write_curve_csv(os, std::vector<CurvePoint>{{0, 0.25}, {1, 1.0}});
  CHECK(os.str() == "epoch,r\n0,0.25\n1,1\n");
}
