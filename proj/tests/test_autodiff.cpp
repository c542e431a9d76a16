#include <doctest.h>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "matadv/autodiff.hpp"
#include "matadv/gradcheck.hpp"
#include "matadv/optim.hpp"
#include "matadv/rng.hpp"
#include "primitive_catalog.hpp"

using namespace matadv;
using ad::Tape;
using ad::Tensor;
using ad::Var;

using testing::random_tensor;

TEST_CASE("primitive forward values") {
  Tape t;
  const auto r = ad::relu(t.constant(Tensor::matrix(1, 2, {-1.0, 2.0})));
  CHECK(r.value() == Tensor::matrix(1, 2, {0.0, 2.0}));
  const auto mm = ad::matmul(t.constant(Tensor::matrix(2, 2, {1, 2, 3, 4})),
                             t.constant(Tensor::matrix(2, 1, {1, 1})));
  CHECK(mm.value() == Tensor::matrix(2, 1, {3, 7}));
  const auto cl = ad::clamp(t.constant(Tensor::scalar(3.0)), -1.0, 1.0);
  CHECK(cl.value().item() == 1.0);
  const auto mx = ad::max(t.constant(Tensor::matrix(2, 3, {1, 5, 5, 7, 2, 7})), 1);
  CHECK(mx.value() == Tensor::matrix(2, 1, {5, 7}));
  const auto cs = ad::column_softmax(t.constant(Tensor::matrix(3, 2, {1, 0, 2, 0, 3, 0})));
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0.0;
    for (std::size_t row = 0; row < 3; ++row) s += cs.value()(row, c);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-15));
  }
  CHECK(cs.value()(0, 1) == doctest::Approx(1.0 / 3.0));
  const auto pd = ad::pairwise_sqdist(t.constant(Tensor::matrix(1, 3, {0, 0, 0})),
                                      t.constant(Tensor::matrix(2, 3, {1, 2, 2, 0, 0, 1})));
  CHECK(pd.value() == Tensor::matrix(1, 2, {9, 1}));
}

TEST_CASE("backward basics") {
  Tape t;
  const auto x = t.leaf(Tensor::matrix(1, 3, {1, 2, 3}));
  auto g = t.backward(ad::sum_all(x));
  CHECK(g.of(x) == Tensor::matrix(1, 3, {1, 1, 1}));

  Tape t2;
  const auto a = t2.leaf(Tensor::scalar(2.0));
  const auto b = t2.leaf(Tensor::scalar(3.0));
  const auto unused = t2.leaf(Tensor::scalar(4.0));
  const auto loss = ad::mul(a, b);
  const auto grads = t2.backward(loss);
  CHECK(grads.of(a).item() == 3.0);
  CHECK(grads.of(b).item() == 2.0);
  CHECK(grads.of(unused).item() == 0.0);

  const auto again = t2.backward(loss);
  CHECK(again.of(a) == grads.of(a));

  CHECK_THROWS_AS(t.backward(x), ad::ShapeError);
}

TEST_CASE("relu mask and clamp saturation") {
  Tape t;
  const auto x = t.leaf(Tensor::matrix(1, 2, {-1.0, 2.0}));
  CHECK(t.backward(ad::sum_all(ad::relu(x))).of(x) == Tensor::matrix(1, 2, {0.0, 1.0}));
  const auto y = t.leaf(Tensor::scalar(3.0));
  CHECK(t.backward(ad::clamp(y, -1.0, 1.0)).of(y).item() == 0.0);
}

TEST_CASE("max and min route to the lowest winning index") {
  Tape t;
  const auto x = t.leaf(Tensor::matrix(1, 4, {2, 5, 5, 1}));
  CHECK(t.backward(ad::sum_all(ad::max(x, 1))).of(x) == Tensor::matrix(1, 4, {0, 1, 0, 0}));
  const auto y = t.leaf(Tensor::matrix(1, 4, {3, 1, 4, 1}));
  CHECK(t.backward(ad::sum_all(ad::min(y, 1))).of(y) == Tensor::matrix(1, 4, {0, 1, 0, 0}));
}

TEST_CASE("shape and finiteness errors") {
  Tape t;
  const auto a = t.constant(Tensor({2, 3}, 1.0));
  const auto b = t.constant(Tensor({3, 2}, 1.0));
  CHECK_THROWS_AS(ad::add(a, b), ad::ShapeError);
  CHECK_THROWS_AS(ad::matmul(a, a), ad::ShapeError);
  CHECK_THROWS_AS(ad::concat_cols(a, b), ad::ShapeError);
  CHECK_THROWS_AS(ad::exp(t.constant(Tensor::scalar(1000.0))), ad::NonFiniteError);
  CHECK_THROWS_AS(ad::scale(a, INFINITY), ad::NonFiniteError);
  CHECK_THROWS_AS(Tensor({2}, std::vector<double>{1.0}), ad::ShapeError);
}

TEST_CASE("every primitive passes finite-difference checks") {
  for (const auto& c : testing::primitive_catalog()) {
    CAPTURE(c.name);
    CHECK(testing::check_primitive(c, 10, std::hash<std::string>{}(c.name)) < 1e-4);
  }
}

TEST_CASE("grad_check reference cases") {
  Rng rng(5);
  const Tensor x = random_tensor({4, 3}, rng);
  auto sq = ad::grad_check([](Tape&, const Var& v) { return ad::sum_all(ad::square(v)); }, x);
  CHECK(sq.max_rel_error < 1e-6);
  CHECK(sq.checked == 12);

  auto r = ad::grad_check([](Tape&, const Var& v) { return ad::sum_all(ad::relu(v)); },
                          Tensor::matrix(1, 4, {1.0, -1.0, 1.0, -1.0}));
  CHECK(r.max_rel_error < 1e-6);
  CHECK(r.excluded.empty());

  auto kink = ad::grad_check([](Tape&, const Var& v) { return ad::sum_all(ad::relu(v)); },
                             Tensor::matrix(1, 3, {0.0, 1.0, -2.0}));
  CHECK(kink.excluded == std::vector<std::size_t>{0});
  CHECK(kink.checked == 2);

  CHECK_THROWS(ad::grad_check([](Tape&, const Var& v) { return v; }, x));
}

TEST_CASE("three-layer perceptron gradients") {
  Rng rng(6);
  const Tensor w1 = random_tensor({3, 8}, rng), b1 = random_tensor({1, 8}, rng);
  const Tensor w2 = random_tensor({8, 8}, rng), b2 = random_tensor({1, 8}, rng);
  const Tensor w3 = random_tensor({8, 1}, rng), b3 = random_tensor({1, 1}, rng);
  auto mlp = [&](Tape& t, const Var& x) {
    auto h = ad::affine_relu(x, t.constant(w1), t.constant(b1));
    h = ad::affine_relu(h, t.constant(w2), t.constant(b2));
    return ad::sum_all(ad::affine(h, t.constant(w3), t.constant(b3)));
  };
  for (int trial = 0; trial < 10; ++trial) {
    auto res = ad::grad_check(mlp, random_tensor({5, 3}, rng));
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("affine with a sparse adjoint matches the dense formulas") {
  Rng rng(7);
  const Tensor x = random_tensor({64, 5}, rng), w = random_tensor({5, 6}, rng);
  const Tensor b = random_tensor({1, 6}, rng);
  Tensor pick({64, 6});
  for (std::size_t r = 0; r < 64; r += 3) pick(r, (r * 7) % 6) = rng.uniform(0.5, 2.0);

  Tape t;
  const auto xv = t.leaf(x), wv = t.leaf(w), bv = t.leaf(b);
  const auto grads = t.backward(ad::sum_all(ad::affine(xv, wv, bv) * t.constant(pick)));

  Tensor gx({64, 5}), gw({5, 6}), gb({1, 6});
  for (std::size_t r = 0; r < 64; ++r)
    for (std::size_t c = 0; c < 6; ++c) {
      gb(0, c) += pick(r, c);
      for (std::size_t j = 0; j < 5; ++j) {
        gx(r, j) += pick(r, c) * w(j, c);
        gw(j, c) += x(r, j) * pick(r, c);
      }
    }
  auto close = [](const Tensor& a, const Tensor& e) {
    for (std::size_t i = 0; i < a.size(); ++i)
      if (std::abs(a[i] - e[i]) > 1e-12) return false;
    return true;
  };
  CHECK(close(grads.of(xv), gx));
  CHECK(close(grads.of(wv), gw));
  CHECK(close(grads.of(bv), gb));

  // Max pooling after a rectified layer is the case that produces such adjoints.
  const Tensor w1 = random_tensor({3, 32}, rng), b1 = random_tensor({1, 32}, rng);
  auto pooled = [&](Tape& tp, const Var& v) {
    const auto h = ad::affine_relu(v, tp.constant(w1), tp.constant(b1));
    return ad::sum_all(ad::square(ad::segment_max(h, 16)));
  };
  for (int trial = 0; trial < 5; ++trial)
    CHECK(ad::grad_check(pooled, random_tensor({64, 3}, rng)).max_rel_error < 1e-4);
}

TEST_CASE("forward and backward are bit-reproducible") {
  Rng rng(8);
  const Tensor a = random_tensor({20, 3}, rng), b = random_tensor({30, 3}, rng);
  auto run = [&] {
    Tape t;
    const auto x = t.leaf(a);
    const auto d = ad::pairwise_sqdist(x, t.constant(b));
    const auto loss = ad::mean_all(ad::min(d, 1)) + ad::mean_all(ad::softmax(d, 1));
    return std::pair{loss.value(), t.backward(loss).of(x)};
  };
  CHECK(run() == run());
}

TEST_CASE("adam") {
  std::vector<Tensor> params{Tensor::matrix(1, 2, {0.5, -0.5})};
  ad::AdamState state(ad::AdamOptions{0.1});
  std::vector<Tensor> zero{Tensor({1, 2})};
  ad::adam_step(params, zero, state);
  CHECK(params[0] == Tensor::matrix(1, 2, {0.5, -0.5}));
  CHECK(state.step == 1);

  std::vector<Tensor> p{Tensor::scalar(0.0)};
  ad::AdamState s(ad::AdamOptions{0.1});
  std::vector<Tensor> one{Tensor::scalar(1.0)};
  ad::adam_step(p, one, s);
  // Oracle: bias-corrected first step is -lr g / (|g| + eps).
  CHECK(p[0].item() == doctest::Approx(-0.09999999900000002).epsilon(1e-14));

  std::vector<Tensor> q{Tensor::scalar(0.0)};
  ad::AdamState s2(ad::AdamOptions{0.01});
  std::vector<Tensor> neg{Tensor::scalar(-3.0)};
  for (int i = 0; i < 50; ++i) ad::adam_step(q, neg, s2);
  CHECK(q[0].item() > 0.4);
  CHECK(s2.step == 50);

  std::vector<Tensor> bad{Tensor({1, 3})};
  CHECK_THROWS_AS(ad::adam_step(p, bad, s), ad::ShapeError);
}
