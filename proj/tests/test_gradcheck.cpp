#include <doctest.h>

#include "inat/gradcheck.hpp"
#include "inat/nn_ops.hpp"
#include "inat/rng.hpp"

using namespace inat;
using T64 = Tensor<double>;

TEST_CASE("linear maps check out almost exactly") {
  Rng rng(5);
  auto w = T64::randn({4, 3}, rng);
  auto x = T64::randn({5, 4}, rng);
  auto worst = grad_check<double>([&] { return sum(matmul(x, w)); }, {w, x});
  CHECK(worst < 1e-9);
}

TEST_CASE("softmax + cross entropy composite") {
  Rng rng(6);
  auto logits = T64::randn({4, 7}, rng);
  const std::vector<int32_t> targets = {2, 0, 6, 3};
  auto worst = grad_check<double>([&] { return cross_entropy_mean(logits, targets); }, {logits});
  CHECK(worst < 1e-6);
}

TEST_CASE("masked softmax, layer norm, gelu, rope") {
  Rng rng(7);
  auto x = T64::randn({5, 5}, rng);
  auto probe = T64::randn({5, 5}, rng);  // fixed weights; plain sum of a softmax is constant
  CHECK(grad_check<double>([&] { return sum(mul(softmax_rows(x, MaskSpec::dense_causal(5)), probe)); },
                           {x}) < 1e-6);

  auto h = T64::randn({3, 6}, rng);
  auto gain = T64::randn({6}, rng, 0.2, 1.0);
  auto bias = T64::randn({6}, rng, 0.2);
  CHECK(grad_check<double>(
            [&] { return mean(mul(layer_norm_rows(h, gain, bias, 1e-5), h)); }, {h, gain, bias}) < 1e-5);

  auto z = T64::randn({4, 4}, rng);
  CHECK(grad_check<double>([&] { return sum(gelu(z)); }, {z}) < 1e-7);

  auto q = T64::randn({4, 8}, rng);
  CHECK(grad_check<double>(
            [&] { return sum(mul(rope_rows(q, {0, 3, 4, 10}, 4, 4, 10000.0), q)); }, {q}) < 1e-7);
}

TEST_CASE("eps outside the supported interval is rejected") {
  auto x = T64::full({2}, 0.5);
  const auto f = [&] { return sum(x); };
  CHECK_THROWS_AS(grad_check<double>(f, {x}, 0.0), ConfigError);
  CHECK_THROWS_AS(grad_check<double>(f, {x}, -1e-5), ConfigError);
  CHECK_THROWS_AS(grad_check<double>(f, {x}, 0.5), ConfigError);
  CHECK_NOTHROW(grad_check<double>(f, {x}, 1e-2));
}

TEST_CASE("a corrupted backward rule is detected") {
  Rng rng(8);
  auto x = T64::randn({3, 3}, rng);
  // Doubling the loss after backward has run is equivalent to an op whose
  // backward rule is off by 2x; the checker must flag it.
  bool first = true;
  const auto f = [&]() -> T64 {
    auto loss = sum(mul(x, x));
    if (!first) loss = scale(loss, 2.0);
    first = false;
    return loss;
  };
  auto worst = grad_check<double>(f, {x});
  CHECK(worst > 1e-2);
}

TEST_CASE("non-finite losses abort the check") {
  auto x = T64::full({2}, 1e160);
  CHECK_THROWS_AS(grad_check<double>([&] { return sum(mul(x, x)); }, {x}), NumericError);
}
