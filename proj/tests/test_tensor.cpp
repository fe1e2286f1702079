#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "feather/autodiff.hpp"
#include "oracles.hpp"

using namespace feather;

namespace {

Tensorf from_vec(Shape shape, const oracle::Vec& v, bool requires_grad = true) {
  return Tensorf(std::move(shape), v.cast<float>(), requires_grad);
}

// Σ y ⊙ g, so every output element carries a distinct upstream gradient.
Tensorf weighted_total(const Tensorf& y, const oracle::Vec& g) {
  const auto n = static_cast<std::size_t>(y.size());
  return sum(matmul(reshape(y, {1, n}), from_vec({n, 1}, g, false)));
}

double dot(const oracle::Vec& a, const oracle::Vec& b) { return a.dot(b); }

}  // namespace

TEST_CASE("tensor rejects zero-sized dimensions and mismatched data") {
  CHECK_THROWS_AS(Tensorf::zeros({0, 3}), DimensionError);
  CHECK_THROWS_AS(Tensorf::zeros({4, 0}), DimensionError);
  CHECK_THROWS_AS(Tensorf({2, 2}, Vector<float>::Zero(3)), DimensionError);
  CHECK(Tensorf::scalar(2.0f).item() == 2.0f);
  CHECK(Tensorf::zeros({2, 3}).size() == 6);
}

TEST_CASE("matmul hand cases") {
  auto eye = Tensorf::from({2, 2}, {1, 0, 0, 1});
  CHECK(matmul(eye, eye).data() == eye.data());

  auto c = matmul(Tensorf::from({2, 2}, {1, 2, 3, 4}), Tensorf::from({2, 1}, {1, 1}));
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c.data()[0] == 3.0f);
  CHECK(c.data()[1] == 7.0f);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  try {
    matmul(Tensorf::zeros({2, 3}), Tensorf::zeros({4, 5}));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x5]") != std::string::npos);
  }
}

TEST_CASE("gradient of sum(matmul(a,b)) w.r.t. a matches finite differences") {
  const auto av = oracle::random_vec(6, 7);
  const auto bv = oracle::random_vec(6, 8);
  auto a = from_vec({2, 3}, av);
  auto b = from_vec({3, 2}, bv, false);
  {
    GradientTape<float> tape;
    backward(sum(matmul(a, b)));
  }
  auto f = [&](const oracle::Vec& x) { return oracle::matmul(x, bv, 2, 3, 2).sum(); };
  CHECK(oracle::first_mismatch(a.grad(), oracle::central_difference(f, av)) == -1);
  CHECK_FALSE(b.has_grad());
}

TEST_CASE("matmul gradients match finite differences on random inputs") {
  const int m = 3, k = 4, n = 5;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto av = oracle::random_vec(m * k, seed);
    const auto bv = oracle::random_vec(k * n, seed + 100);
    const auto gv = oracle::random_vec(m * n, seed + 200);
    auto a = from_vec({3, 4}, av);
    auto b = from_vec({4, 5}, bv);
    {
      GradientTape<float> tape;
      backward(weighted_total(matmul(a, b), gv));
    }
    auto fa = [&](const oracle::Vec& x) { return dot(oracle::matmul(x, bv, m, k, n), gv); };
    auto fb = [&](const oracle::Vec& x) { return dot(oracle::matmul(av, x, m, k, n), gv); };
    CHECK(oracle::first_mismatch(a.grad(), oracle::central_difference(fa, av)) == -1);
    CHECK(oracle::first_mismatch(b.grad(), oracle::central_difference(fb, bv)) == -1);
  }
}

TEST_CASE("conv2d hand cases") {
  SUBCASE("1x1 unit kernel sums channels") {
    auto x = Tensorf::from({1, 2, 2, 2}, {1, 2, 3, 4, 10, 20, 30, 40});
    auto y = conv2d(x, Tensorf::from({1, 2, 1, 1}, {1, 1}));
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    CHECK(y.data()[0] == 11.0f);
    CHECK(y.data()[3] == 44.0f);
  }
  SUBCASE("3x3 ones on 3x3 ones") {
    auto ones = Tensorf(Shape{1, 1, 3, 3}, Vector<float>::Ones(9));
    auto y = conv2d(ones, ones);
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.item() == 9.0f);
  }
  SUBCASE("output extent with stride and padding") {
    CHECK(conv2d(Tensorf::zeros({2, 3, 7, 6}), Tensorf::zeros({4, 3, 3, 3}), {2, 1}).shape() == Shape{2, 4, 4, 3});
  }
  SUBCASE("kernel larger than padded input") {
    CHECK_THROWS_AS(conv2d(Tensorf::zeros({1, 1, 2, 2}), Tensorf::zeros({1, 1, 3, 3})), DimensionError);
    CHECK_NOTHROW(conv2d(Tensorf::zeros({1, 1, 2, 2}), Tensorf::zeros({1, 1, 3, 3}), {1, 1}));
    CHECK_THROWS_AS(conv2d(Tensorf::zeros({1, 2, 4, 4}), Tensorf::zeros({1, 1, 3, 3})), DimensionError);
  }
}

TEST_CASE("conv2d forward matches direct loops") {
  const oracle::ConvShape s{2, 3, 6, 5, 4, 3, 2, 2, 1};
  const auto xv = oracle::random_vec(s.n * s.c * s.h * s.w, 3);
  const auto kv = oracle::random_vec(s.f * s.c * s.kh * s.kw, 4);
  auto y = conv2d(from_vec({2, 3, 6, 5}, xv, false), from_vec({4, 3, 3, 2}, kv, false), {2, 1});
  CHECK(y.shape() == Shape{2, 4, std::size_t(s.oh()), std::size_t(s.ow())});
  CHECK(oracle::first_mismatch(y.data(), oracle::conv2d(xv, kv, s), 1e-5, 1e-6) == -1);
}

TEST_CASE("conv2d gradients match finite differences") {
  const oracle::ConvShape shapes[] = {{1, 1, 5, 5, 1, 3, 3, 1, 0}, {2, 2, 6, 5, 3, 3, 3, 2, 1}};
  for (const auto& s : shapes) {
    const auto xv = oracle::random_vec(s.n * s.c * s.h * s.w, 11);
    const auto kv = oracle::random_vec(s.f * s.c * s.kh * s.kw, 12);
    const auto gv = oracle::random_vec(s.n * s.f * s.oh() * s.ow(), 13);
    auto x = from_vec({std::size_t(s.n), std::size_t(s.c), std::size_t(s.h), std::size_t(s.w)}, xv);
    auto k = from_vec({std::size_t(s.f), std::size_t(s.c), std::size_t(s.kh), std::size_t(s.kw)}, kv);
    {
      GradientTape<float> tape;
      backward(weighted_total(conv2d(x, k, {std::size_t(s.stride), std::size_t(s.pad)}), gv));
    }
    auto fx = [&](const oracle::Vec& v) { return dot(oracle::conv2d(v, kv, s), gv); };
    auto fk = [&](const oracle::Vec& v) { return dot(oracle::conv2d(xv, v, s), gv); };
    CHECK(oracle::first_mismatch(x.grad(), oracle::central_difference(fx, xv)) == -1);
    CHECK(oracle::first_mismatch(k.grad(), oracle::central_difference(fk, kv)) == -1);
  }
}

TEST_CASE("relu and add_bias gradients") {
  const auto xv = oracle::random_vec(12, 21);
  const auto bv = oracle::random_vec(3, 22);
  const auto gv = oracle::random_vec(12, 23);
  auto x = from_vec({4, 3}, xv);
  auto b = from_vec({3}, bv);
  {
    GradientTape<float> tape;
    backward(weighted_total(relu(add_bias(x, b)), gv));
  }
  auto forward = [&](const oracle::Vec& xs, const oracle::Vec& bs) {
    oracle::Vec y(12);
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 3; ++c) y[r * 3 + c] = std::max(0.0, xs[r * 3 + c] + bs[c]);
    return dot(y, gv);
  };
  CHECK(oracle::first_mismatch(x.grad(), oracle::central_difference([&](const auto& v) { return forward(v, bv); }, xv)) == -1);
  CHECK(oracle::first_mismatch(b.grad(), oracle::central_difference([&](const auto& v) { return forward(xv, v); }, bv)) == -1);

  SUBCASE("channel bias on NCHW") {
    auto img = Tensorf::zeros({2, 2, 1, 2}, true);
    auto cb = Tensorf::from({2}, {1, -1}, true);
    auto y = add_bias(img, cb);
    CHECK(y.data()[0] == 1.0f);
    CHECK(y.data()[2] == -1.0f);
    GradientTape<float> tape;
    backward(sum(add_bias(img, cb)));
    CHECK(cb.grad()[0] == 4.0f);
    CHECK(img.grad() == Vector<float>::Ones(8));
  }
  CHECK_THROWS_AS(add_bias(Tensorf::zeros({2, 3}), Tensorf::zeros({2})), DimensionError);
}

TEST_CASE("softmax cross-entropy") {
  SUBCASE("equal logits give ln K") {
    std::vector<int> labels{0, 3};
    auto loss = softmax_cross_entropy(Tensorf(Shape{2, 4}, Vector<float>::Constant(8, 0.7f)), labels);
    CHECK(loss.item() == doctest::Approx(std::log(4.0)).epsilon(1e-6));
  }
  SUBCASE("huge matching logit drives the loss to 0") {
    std::vector<int> labels{1};
    auto loss = softmax_cross_entropy(Tensorf::from({1, 3}, {0, 60, 0}), labels);
    CHECK(loss.item() < 1e-20f);
  }
  SUBCASE("label out of range") {
    std::vector<int> bad{4};
    CHECK_THROWS_AS(softmax_cross_entropy(Tensorf::zeros({1, 4}), bad), IndexError);
    std::vector<int> neg{-1};
    CHECK_THROWS_AS(softmax_cross_entropy(Tensorf::zeros({1, 4}), neg), IndexError);
  }
  SUBCASE("smoothing must be below 1") {
    std::vector<int> labels{0};
    CHECK_THROWS_AS(softmax_cross_entropy(Tensorf::zeros({1, 4}), labels, 1.0), ContractError);
  }
  SUBCASE("gradient matches finite differences") {
    const std::vector<int> labels{4, 0, 2};
    for (double smoothing : {0.0, 0.1}) {
      for (std::uint64_t seed = 30; seed < 33; ++seed) {
        const auto lv = oracle::random_vec(15, seed, 2.0);
        auto logits = from_vec({3, 5}, lv);
        {
          GradientTape<float> tape;
          auto loss = softmax_cross_entropy(logits, labels, smoothing);
          CHECK(loss.item() == doctest::Approx(oracle::cross_entropy(lv, labels, 5, smoothing)).epsilon(1e-5));
          backward(loss);
        }
        auto f = [&](const oracle::Vec& v) { return oracle::cross_entropy(v, labels, 5, smoothing); };
        CHECK(oracle::first_mismatch(logits.grad(), oracle::central_difference(f, lv)) == -1);
      }
    }
  }
}

TEST_CASE("backward semantics") {
  SUBCASE("sum gives ones") {
    auto x = Tensorf::zeros({2, 3}, true);
    GradientTape<float> tape;
    backward(sum(x));
    CHECK(x.grad() == Vector<float>::Ones(6));
  }
  SUBCASE("second backward without zeroing doubles exactly") {
    const auto xv = oracle::random_vec(6, 40);
    auto x = from_vec({2, 3}, xv);
    auto w = from_vec({3, 2}, oracle::random_vec(6, 41));
    GradientTape<float> tape;
    // x feeds two branches, so its gradient is itself a sum.
    auto loss = sum(matmul(matmul(relu(x), w), x));
    backward(loss);
    const Vector<float> once = x.grad();
    const Vector<float> w_once = w.grad();
    backward(loss);
    CHECK(x.grad() == (2.0f * once).eval());
    CHECK(w.grad() == (2.0f * w_once).eval());
  }
  SUBCASE("non-scalar loss is rejected") {
    auto x = Tensorf::zeros({2}, true);
    GradientTape<float> tape;
    CHECK_THROWS_AS(backward(relu(x)), ContractError);
  }
  SUBCASE("no active tape") {
    auto x = Tensorf::zeros({2}, true);
    CHECK_THROWS_AS(backward(sum(x)), ContractError);
  }
  SUBCASE("nested tapes restore the outer one") {
    GradientTape<float> outer;
    {
      GradientTape<float> inner;
      CHECK(GradientTape<float>::active() == &inner);
    }
    CHECK(GradientTape<float>::active() == &outer);
  }
}

TEST_CASE("composite MLP loss gradient matches finite differences") {
  const oracle::Mlp2 net{6, 5, 3};
  const int batch = 4;
  const std::vector<int> labels{0, 2, 1, 2};
  const auto xv = oracle::random_vec(batch * net.in, 50);
  const auto w1v = oracle::random_vec(net.in * net.hidden, 51);
  const auto b1v = oracle::random_vec(net.hidden, 52);
  const auto w2v = oracle::random_vec(net.hidden * net.out, 53);
  const auto b2v = oracle::random_vec(net.out, 54);

  auto w1 = from_vec({6, 5}, w1v);
  auto b1 = from_vec({5}, b1v);
  auto w2 = from_vec({5, 3}, w2v);
  auto b2 = from_vec({3}, b2v);
  {
    GradientTape<float> tape;
    auto h = relu(add_bias(matmul(from_vec({4, 6}, xv, false), w1), b1));
    backward(softmax_cross_entropy(add_bias(matmul(h, w2), b2), labels, 0.1));
  }
  auto loss = [&](const oracle::Vec& a, const oracle::Vec& b, const oracle::Vec& c, const oracle::Vec& d) {
    return oracle::cross_entropy(net.logits(xv, batch, a, b, c, d), labels, net.out, 0.1);
  };
  CHECK(oracle::first_mismatch(w1.grad(), oracle::central_difference([&](const auto& v) { return loss(v, b1v, w2v, b2v); }, w1v)) == -1);
  CHECK(oracle::first_mismatch(b1.grad(), oracle::central_difference([&](const auto& v) { return loss(w1v, v, w2v, b2v); }, b1v)) == -1);
  CHECK(oracle::first_mismatch(w2.grad(), oracle::central_difference([&](const auto& v) { return loss(w1v, b1v, v, b2v); }, w2v)) == -1);
  CHECK(oracle::first_mismatch(b2.grad(), oracle::central_difference([&](const auto& v) { return loss(w1v, b1v, w2v, v); }, b2v)) == -1);
}

TEST_CASE("forward results are bitwise repeatable") {
  const auto xv = oracle::random_vec(64 * 50, 60);
  const auto iv = oracle::random_vec(2 * 2 * 40 * 40, 63);
  const auto wv = oracle::random_vec(50 * 40, 61);
  const auto kv = oracle::random_vec(4 * 2 * 3 * 3, 62);
  auto run = [&] {
    auto y = matmul(from_vec({64, 50}, xv, false), from_vec({50, 40}, wv, false));
    auto c = conv2d(from_vec({2, 2, 40, 40}, iv, false), from_vec({4, 2, 3, 3}, kv, false), {1, 1});
    return std::pair{y.data().eval(), c.data().eval()};
  };
  const auto first = run();
  const auto second = run();
  CHECK(first.first == second.first);
  CHECK(first.second == second.second);
}

TEST_CASE("double-precision tensors share the same op set") {
  auto a = Tensord::from({1, 2}, {0.5, -0.25}, true);
  auto b = Tensord::from({2, 1}, {2.0, 4.0});
  GradientTape<double> tape;
  auto y = matmul(a, b);
  CHECK(y.item() == 0.0);
  backward(sum(y));
  CHECK(a.grad()[1] == 4.0);
}
