#include <doctest.h>

#include <cmath>
#include <thread>
#include <vector>

#include "inat/nn_ops.hpp"
#include "inat/rng.hpp"
#include "inat/tensor.hpp"

using namespace inat;
using T64 = Tensor<double>;

namespace {

double wv(int i) { return 0.6 * std::sin(static_cast<double>(i)); }

T64 filled(Shape shape, int (*index)(int, int)) {
  auto t = T64::uninit(shape);
  auto d = t.mutable_data();
  const int64_t cols = shape.size() == 2 ? shape[1] : 1;
  for (int64_t i = 0; i < t.numel(); ++i)
    d[static_cast<size_t>(i)] = wv(index(static_cast<int>(i / cols), static_cast<int>(i % cols)));
  return t;
}

}  // namespace

TEST_CASE("matmul identity and hand cases") {
  auto eye = T64::from_vector({2, 2}, {1, 0, 0, 1});
  auto a = T64::from_vector({2, 2}, {1, 2, 3, 4});
  auto r = matmul(eye, a);
  for (int64_t i = 0; i < 4; ++i) CHECK(r.data()[i] == a.data()[i]);

  auto row = T64::from_vector({1, 2}, {1, 2});
  auto col = T64::from_vector({2, 1}, {3, 4});
  CHECK(matmul(row, col).item() == doctest::Approx(11).epsilon(1e-15));

  CHECK_THROWS_AS(matmul(T64::zeros({2, 3}), T64::zeros({2, 3})), ShapeError);
  try {
    matmul(T64::zeros({2, 3}), T64::zeros({2, 3}));
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("[2, 3]") != std::string::npos);
  }
}

TEST_CASE("backward on trivial graphs") {
  auto w = T64::from_vector({3}, {1, 2, 3}).set_requires_grad(true);
  sum(w).backward();
  for (int64_t i = 0; i < 3; ++i) CHECK(w.grad()[i] == 1.0);

  auto w2 = T64::from_vector({2}, {1, 2}).set_requires_grad(true);
  sum(mul(w2, w2)).backward();
  CHECK(w2.grad()[0] == doctest::Approx(2).epsilon(1e-15));
  CHECK(w2.grad()[1] == doctest::Approx(4).epsilon(1e-15));

  CHECK_THROWS_AS(T64::zeros({2, 2}).backward(), ShapeError);
}

TEST_CASE("softmax_rows against the high-precision reference") {
  auto x = T64::from_vector({1, 3}, {1, 2, 3});
  auto y = softmax_rows(x);
  CHECK(y.data()[0] == doctest::Approx(0.090030573170380457998).epsilon(1e-14));
  CHECK(y.data()[1] == doctest::Approx(0.244728471054797652473).epsilon(1e-14));
  CHECK(y.data()[2] == doctest::Approx(0.665240955774821889529).epsilon(1e-14));

  auto sym = softmax_rows(T64::from_vector({1, 2}, {0, 0}));
  CHECK(sym.data()[0] == 0.5);
  CHECK(sym.data()[1] == 0.5);
  CHECK(softmax_rows(T64::from_vector({1, 1}, {4.2})).item() == 1.0);
}

TEST_CASE("softmax_rows mask semantics") {
  auto x = T64::from_vector({3, 3}, {5, 100, 100, 1, 1, 100, 0.5, 0.25, -1});
  auto y = softmax_rows(x, MaskSpec::dense_causal(3));
  // masked entries exactly zero
  CHECK(y.at(0, 1) == 0.0);
  CHECK(y.at(0, 2) == 0.0);
  CHECK(y.at(1, 2) == 0.0);
  CHECK(y.at(0, 0) == 1.0);
  for (int64_t r = 0; r < 3; ++r) {
    double s = 0;
    for (int64_t c = 0; c < 3; ++c) s += y.at(r, c);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
  // degenerate span rejected
  CHECK_THROWS_AS(softmax_rows(x, std::vector<KeySpan>{{0, 3}, {2, 2}, {0, 3}}), MaskError);
}

TEST_CASE("gelu matches the erf-form reference") {
  auto x = T64::from_vector({4}, {1.0, -0.5, 0.25, -2.0});
  auto y = gelu(x);
  CHECK(y.data()[0] == doctest::Approx(0.841344746068542948585).epsilon(1e-14));
  CHECK(y.data()[1] == doctest::Approx(-0.154268769362993448181).epsilon(1e-14));
  CHECK(y.data()[2] == doctest::Approx(0.14967658142073093106).epsilon(1e-14));
  CHECK(y.data()[3] == doctest::Approx(-0.0455002638963584144006).epsilon(1e-14));
  CHECK(gelu(T64::zeros({1})).item() == 0.0);
}

TEST_CASE("layer_norm_rows against the high-precision reference") {
  auto x = filled({2, 4}, [](int i, int j) { return 4 * i + j + 1; });
  auto g = T64::from_vector({4}, {1.0, 1.1, 1.2, 1.3});
  auto b = T64::from_vector({4}, {0.0, 0.05, 0.1, 0.15});
  auto y = layer_norm_rows(x, g, b, 1e-5);
  const double want[2][4] = {
      {0.830086872367494685101, 1.07414465076899106931, -0.154789070393893387906, -1.86344421024165106291},
      {-1.37929059551342728653, -0.495460535441775096239, 0.965831973619549904096, 1.64972831432898031133}};
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t j = 0; j < 4; ++j) CHECK(y.at(i, j) == doctest::Approx(want[i][j]).epsilon(1e-12));
}

TEST_CASE("cross_entropy_mean against the high-precision reference") {
  auto logits = filled({2, 5}, [](int i, int j) { return 4 * i + j + 6; });
  auto loss = cross_entropy_mean(logits, {3, 1});
  CHECK(loss.item() == doctest::Approx(1.89788594641211599991).epsilon(1e-14));
  CHECK_THROWS_AS(cross_entropy_mean(logits, {3}), ShapeError);
  CHECK_THROWS_AS(cross_entropy_mean(logits, {3, 9}), Error);
}

TEST_CASE("embedding_rows gathers and validates") {
  auto table = T64::from_vector({3, 2}, {0, 1, 10, 11, 20, 21});
  auto out = embedding_rows(table, {2, 0, 2});
  CHECK(out.at(0, 0) == 20.0);
  CHECK(out.at(1, 1) == 1.0);
  CHECK(out.at(2, 0) == 20.0);
  CHECK_THROWS_AS(embedding_rows(table, {3}), Error);
  CHECK_THROWS_AS(embedding_rows(table, {-1}), Error);

  // repeated ids accumulate gradient
  table.set_requires_grad(true);
  sum(embedding_rows(table, {2, 0, 2})).backward();
  CHECK(table.grad()[4] == 2.0);  // row 2 used twice
  CHECK(table.grad()[0] == 1.0);
  CHECK(table.grad()[2] == 0.0);
}

TEST_CASE("rope_rows basics") {
  Rng rng(3);
  auto x = T64::randn({4, 8}, rng);
  // position 0 is the identity
  auto y0 = rope_rows(T64(x), {0, 5, 9, 12}, 4, 4, 10000.0);
  for (int64_t j = 0; j < 8; ++j) CHECK(y0.at(0, j) == x.at(0, j));
  // pair norms preserved
  for (int64_t t = 0; t < 4; ++t)
    for (int64_t p = 0; p < 4; ++p) {
      const double before = x.at(t, 2 * p) * x.at(t, 2 * p) + x.at(t, 2 * p + 1) * x.at(t, 2 * p + 1);
      const double after =
          y0.at(t, 2 * p) * y0.at(t, 2 * p) + y0.at(t, 2 * p + 1) * y0.at(t, 2 * p + 1);
      CHECK(after == doctest::Approx(before).epsilon(1e-9));
    }
  // hand value: pair (1, 0.5) rotated at position 7, first pair frequency 1
  auto z = rope_rows(T64::from_vector({1, 2}, {1.0, 0.5}), {7}, 2, 2, 10000.0);
  CHECK(z.at(0, 0) == doctest::Approx(0.425408954983910092943).epsilon(1e-12));
  CHECK(z.at(0, 1) == doctest::Approx(1.03393772589044140947).epsilon(1e-12));

  CHECK_THROWS_AS(rope_rows(T64(x), {0, 1, 2, 3}, 4, 3, 10000.0), ConfigError);
  CHECK_THROWS_AS(rope_rows(T64(x), {0, 1, 1, 3}, 4, 4, 10000.0), ConfigError);
  CHECK_THROWS_AS(rope_rows(T64(x), {-1, 1, 2, 3}, 4, 4, 10000.0), ConfigError);
}

TEST_CASE("rope relative-position dot products") {
  Rng rng(11);
  const int64_t dk = 8;
  for (int trial = 0; trial < 20; ++trial) {
    auto q = T64::randn({1, dk}, rng);
    auto k = T64::randn({1, dk}, rng);
    const int64_t m = static_cast<int64_t>(rng.uniform_int(32));
    const int64_t n = m + static_cast<int64_t>(rng.uniform_int(32));
    const int64_t s = static_cast<int64_t>(rng.uniform_int(64));
    const auto dot = [&](int64_t pm, int64_t pn) {
      auto qr = rope_rows(q, {pm}, dk, dk, 10000.0);
      auto kr = rope_rows(k, {pn}, dk, dk, 10000.0);
      double acc = 0;
      for (int64_t j = 0; j < dk; ++j) acc += qr.at(0, j) * kr.at(0, j);
      return acc;
    };
    CHECK(dot(m, n) == doctest::Approx(dot(m + s, n + s)).epsilon(1e-5));
  }
}

TEST_CASE("structural ops: slicing, concat, transpose, reshape") {
  auto a = T64::from_vector({3, 2}, {1, 2, 3, 4, 5, 6});
  auto s = slice_rows(a, 1, 3);
  CHECK(s.at(0, 0) == 3.0);
  CHECK(s.at(1, 1) == 6.0);
  CHECK_THROWS_AS(slice_rows(a, 2, 2), ShapeError);

  auto c = concat_rows<double>({slice_rows(a, 0, 1), slice_rows(a, 1, 3)});
  for (int64_t i = 0; i < 6; ++i) CHECK(c.data()[i] == a.data()[i]);

  auto sc = slice_cols(a, 1, 2);
  CHECK(sc.at(2, 0) == 6.0);
  auto cc = concat_cols<double>({slice_cols(a, 0, 1), slice_cols(a, 1, 2)});
  for (int64_t i = 0; i < 6; ++i) CHECK(cc.data()[i] == a.data()[i]);

  auto tr = transpose(a);
  CHECK(tr.shape() == Shape{2, 3});
  CHECK(tr.at(0, 2) == 5.0);

  auto rs = reshape(a, {2, 3});
  CHECK(rs.at(1, 0) == 4.0);
  CHECK_THROWS_AS(reshape(a, {4, 2}), ShapeError);
}

TEST_CASE("reductions accumulate left to right") {
  auto a = T64::from_vector({4}, {0.25, -1.5, 3.0, 2.25});
  CHECK(sum(a).item() == ((0.25 + -1.5) + 3.0) + 2.25);
  CHECK(mean(a).item() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("non-finite results are rejected") {
  auto big = T64::full({2}, 1e308);
  CHECK_THROWS_AS(add(big, big), NumericError);
  CHECK_THROWS_AS(mul(big, big), NumericError);
}

TEST_CASE("no-grad mode records nothing") {
  auto a = T64::from_vector({2}, {1, 2}).set_requires_grad(true);
  Tensor<double> out;
  {
    NoGradGuard ng;
    out = mul(a, a);
  }
  CHECK_FALSE(out.node()->grad_fn);
  CHECK(out.node()->parents.empty());
  // and grad mode restores afterwards
  auto loss = sum(mul(a, a));
  loss.backward();
  CHECK(a.grad()[1] == 4.0);
}

TEST_CASE("deterministic backward accumulation across identical runs") {
  const auto run = [] {
    Rng rng(17);
    auto a = Tensor<float>::randn({6, 6}, rng).set_requires_grad(true);
    auto b = Tensor<float>::randn({6, 6}, rng).set_requires_grad(true);
    auto loss = mean(gelu(matmul(add(a, b), transpose(sub(a, b)))));
    loss.backward();
    std::vector<float> g(a.grad().begin(), a.grad().end());
    return g;
  };
  CHECK(run() == run());
}

TEST_CASE("independent instances evaluate safely on separate threads") {
  std::vector<std::vector<double>> results(2);
  const auto work = [&](int slot) {
    Rng rng(100 + static_cast<uint64_t>(slot));
    auto a = T64::randn({8, 8}, rng).set_requires_grad(true);
    auto loss = mean(gelu(matmul(a, transpose(a))));
    loss.backward();
    results[static_cast<size_t>(slot)] = {loss.item(), static_cast<double>(a.grad()[3])};
  };
  std::thread t0(work, 0), t1(work, 1);
  t0.join();
  t1.join();
  // same work single-threaded gives identical numbers
  std::vector<std::vector<double>> again(2);
  for (int s = 0; s < 2; ++s) {
    Rng rng(100 + static_cast<uint64_t>(s));
    auto a = T64::randn({8, 8}, rng).set_requires_grad(true);
    auto loss = mean(gelu(matmul(a, transpose(a))));
    loss.backward();
    again[static_cast<size_t>(s)] = {loss.item(), static_cast<double>(a.grad()[3])};
  }
  CHECK(results == again);
}
