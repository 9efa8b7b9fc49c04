#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "tcs3d/gradcheck.hpp"
#include "tcs3d/rng.hpp"
#include "tcs3d/serialization.hpp"
#include "tcs3d/tensor.hpp"

using namespace tcs3d;

namespace {

Tensor random_tensor(const Shape5& shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_values(shape, std::move(v));
}

}  // namespace

TEST_CASE("make: fill and degenerate extents") {
  const Tensor single = Tensor::full({1, 1, 1, 1, 1}, 0.0);
  REQUIRE(single.size() == 1);
  REQUIRE(single.values()[0] == 0.0);

  const Tensor filled = Tensor::full({1, 4, 8, 6, 6}, 2.5);
  REQUIRE(filled.size() == 1152);
  for (double v : filled.values()) REQUIRE(v == 2.5);

  const Tensor empty = Tensor::full({1, 0, 8, 6, 6}, 1.0);
  REQUIRE(empty.size() == 0);
}

TEST_CASE("make: extent product overflow is rejected") {
  const std::size_t big = std::size_t(1) << 40;
  REQUIRE_THROWS_AS(Tensor::full({big, big, big, 1, 1}, 0.0), std::invalid_argument);
}

TEST_CASE("row-major layout round-trips every index") {
  const Shape5 shape{2, 3, 4, 5, 6};
  Tensor t = Tensor::full(shape, 0.0);
  auto v = t.values_mut();
  double counter = 0.0;
  for (std::size_t n = 0; n < shape[0]; ++n)
    for (std::size_t c = 0; c < shape[1]; ++c)
      for (std::size_t it = 0; it < shape[2]; ++it)
        for (std::size_t h = 0; h < shape[3]; ++h)
          for (std::size_t w = 0; w < shape[4]; ++w) v[flat_index(shape, n, c, it, h, w)] = counter++;
  counter = 0.0;
  for (std::size_t n = 0; n < shape[0]; ++n)
    for (std::size_t c = 0; c < shape[1]; ++c)
      for (std::size_t it = 0; it < shape[2]; ++it)
        for (std::size_t h = 0; h < shape[3]; ++h)
          for (std::size_t w = 0; w < shape[4]; ++w) REQUIRE(t.at(n, c, it, h, w) == counter++);
}

TEST_CASE("ewise_add basics and gradient") {
  const Shape5 shape{1, 2, 2, 2, 2};
  const Tensor ones = Tensor::full(shape, 1.0);
  const Tensor sum = ewise_add(ones, ones);
  for (double v : sum.values()) REQUIRE(v == 2.0);

  Rng rng(7);
  Tensor x = random_tensor(shape, rng);
  const Tensor zero = Tensor::full(shape, 0.0);
  const Tensor same = ewise_add(x, zero);
  for (std::size_t i = 0; i < x.size(); ++i) REQUIRE(same.values()[i] == x.values()[i]);

  x.set_requires_grad(true);
  backward(sum_all(ewise_add(x, zero)));
  for (double g : x.grad()) REQUIRE(g == 1.0);

  REQUIRE_THROWS_AS(ewise_add(x, Tensor::full({1, 2, 2, 2, 3}, 0.0)), std::invalid_argument);
}

TEST_CASE("broadcast_mul: shape, identity, gradient sums over broadcast axes") {
  const Shape5 fshape{1, 4, 8, 6, 6};
  const Tensor feature = Tensor::full(fshape, 2.0);
  const Tensor attn = Tensor::full({1, 1, 8, 1, 1}, 3.0);
  const Tensor out = broadcast_mul(feature, attn);
  REQUIRE(out.shape() == fshape);
  for (double v : out.values()) REQUIRE(v == 6.0);

  Rng rng(11);
  const Tensor x = random_tensor(fshape, rng);
  const Tensor ones = Tensor::full({1, 1, 8, 1, 1}, 1.0);
  const Tensor gated = broadcast_mul(x, ones);
  for (std::size_t i = 0; i < x.size(); ++i) REQUIRE(gated.values()[i] == x.values()[i]);

  // grad wrt attn sums the feature over the broadcast axes: 4*6*6 cells of 2.0
  Tensor attn_leaf = Tensor::full({1, 1, 8, 1, 1}, 3.0, true);
  backward(sum_all(broadcast_mul(feature, attn_leaf)));
  for (double g : attn_leaf.grad()) REQUIRE(g == Catch::Approx(288.0));

  REQUIRE_THROWS_AS(broadcast_mul(feature, Tensor::full({1, 3, 8, 1, 1}, 1.0)),
                    std::invalid_argument);
}

TEST_CASE("broadcast identity also holds for gradients") {
  Rng rng(13);
  const Shape5 shape{2, 3, 4, 2, 2};
  Tensor x = Tensor::from_values(shape, detail_gradcheck::kink_safe_values(numel(shape), rng));
  x.set_requires_grad(true);
  const Tensor ones = Tensor::full({1, 1, 1, 1, 1}, 1.0);
  backward(sum_all(broadcast_mul(x, ones)));
  for (double g : x.grad()) REQUIRE(g == 1.0);
}

TEST_CASE("sigmoid values") {
  const Tensor mid = sigmoid(Tensor::full({1, 1, 1, 1, 1}, 0.0));
  REQUIRE(mid.values()[0] == 0.5);
  const Tensor hi = sigmoid(Tensor::full({1, 1, 1, 1, 1}, 1e3));
  REQUIRE(hi.values()[0] == Catch::Approx(1.0).margin(1e-12));
  const Tensor lo = sigmoid(Tensor::full({1, 1, 1, 1, 1}, -1e3));
  REQUIRE(lo.values()[0] >= 0.0);
  REQUIRE(lo.values()[0] == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("sigmoid derivative at 0 is 0.25 and matches finite differences") {
  Tensor x = Tensor::full({1, 1, 2, 1, 1}, 0.0, true);
  backward(sum_all(sigmoid(x)));
  for (double g : x.grad()) REQUIRE(g == Catch::Approx(0.25).epsilon(1e-12));

  const double fd_err = max_grad_rel_err(
      [](const std::vector<Tensor>& in) { return sum_all(sigmoid(in[0])); },
      {Tensor::full({1, 1, 2, 1, 1}, 0.0)});
  REQUIRE(fd_err <= 1e-4);
}

TEST_CASE("relu values and subgradient convention") {
  const Tensor neg = relu(Tensor::full({1, 1, 1, 1, 1}, -1.0));
  REQUIRE(neg.values()[0] == 0.0);
  const Tensor pos = relu(Tensor::full({1, 1, 1, 1, 1}, 3.0));
  REQUIRE(pos.values()[0] == 3.0);

  Tensor zero = Tensor::full({1, 1, 1, 1, 1}, 0.0, true);
  backward(sum_all(relu(zero)));
  REQUIRE(zero.grad()[0] == 0.0);
}

TEST_CASE("pool_global shapes follow the kept axes") {
  Rng rng(3);
  const Tensor x = random_tensor({1, 4, 8, 6, 6}, rng);
  REQUIRE(pool_global(x, PoolMode::Avg, {Axis::T}).shape() == Shape5{1, 1, 8, 1, 1});
  REQUIRE(pool_global(x, PoolMode::Max, {Axis::T}).shape() == Shape5{1, 1, 8, 1, 1});
  REQUIRE(pool_global(x, PoolMode::Avg, {Axis::C}).shape() == Shape5{1, 4, 1, 1, 1});
  REQUIRE(pool_global(x, PoolMode::Avg, {Axis::H, Axis::W}).shape() == Shape5{1, 1, 1, 6, 6});
}

TEST_CASE("pool_global of a constant tensor is that constant in both modes") {
  const Tensor c = Tensor::full({2, 3, 4, 2, 2}, 1.25);
  for (PoolMode mode : {PoolMode::Avg, PoolMode::Max}) {
    const Tensor out = pool_global(c, mode, {Axis::T});
    for (double v : out.values()) REQUIRE(v == 1.25);
  }
}

TEST_CASE("pool_global avg vs max differ unless constant along reduced axes") {
  Tensor x = Tensor::full({1, 1, 2, 1, 2}, 0.0);
  x.values_mut()[0] = 1.0;  // non-constant over the reduced H/W plane
  const Tensor avg = pool_global(x, PoolMode::Avg, {Axis::T});
  const Tensor mx = pool_global(x, PoolMode::Max, {Axis::T});
  REQUIRE(avg.values()[0] != mx.values()[0]);
}

TEST_CASE("pool_global max routes gradient to the first argmax in row-major order") {
  Tensor x = Tensor::full({1, 1, 1, 1, 4}, 0.0, true);
  {
    auto v = x.values_mut();
    v[0] = 1.0;
    v[1] = 7.0;
    v[2] = 7.0;  // tie: the earlier index must win
    v[3] = 2.0;
  }
  backward(sum_all(pool_global(x, PoolMode::Max, {})));
  REQUIRE(x.grad()[1] == 1.0);
  REQUIRE(x.grad()[2] == 0.0);
}

TEST_CASE("pool_global rejects reductions over zero elements") {
  const Tensor x = Tensor::full({1, 0, 2, 2, 2}, 0.0);
  REQUIRE_THROWS_AS(pool_global(x, PoolMode::Avg, {Axis::T}), std::invalid_argument);
}

TEST_CASE("pool_block_avg block means and divisibility") {
  Tensor x = Tensor::full({1, 1, 4, 2, 2}, 0.0);
  {
    auto v = x.values_mut();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  }
  const Tensor out = pool_block_avg(x, {2, 1, 1});
  REQUIRE(out.shape() == Shape5{1, 1, 2, 2, 2});
  // first block averages t=0 and t=1 planes
  REQUIRE(out.at(0, 0, 0, 0, 0) == Catch::Approx(2.0));
  REQUIRE(out.at(0, 0, 1, 1, 1) == Catch::Approx(13.0));
  REQUIRE_THROWS_AS(pool_block_avg(x, {3, 1, 1}), std::invalid_argument);
}

TEST_CASE("conv3d: delta kernel with matching padding is the identity") {
  Rng rng(5);
  const Tensor x = random_tensor({1, 1, 3, 5, 5}, rng);
  Conv3dKernel k;
  k.weight = Tensor::full({1, 1, 3, 3, 3}, 0.0);
  k.weight.values_mut()[flat_index({1, 1, 3, 3, 3}, 0, 0, 1, 1, 1)] = 1.0;
  k.padding = {1, 1, 1};
  const Tensor out = conv3d(x, k);
  REQUIRE(out.shape() == x.shape());
  for (std::size_t i = 0; i < x.size(); ++i)
    REQUIRE(out.values()[i] == Catch::Approx(x.values()[i]).epsilon(1e-15));
}

TEST_CASE("conv3d: all-ones kernel on constant input sums 27c") {
  const double c = 1.5;
  const Tensor x = Tensor::full({1, 1, 3, 6, 6}, c);
  Conv3dKernel k;
  k.weight = Tensor::full({1, 1, 3, 3, 3}, 1.0);
  const Tensor out = conv3d(x, k);
  REQUIRE(out.shape() == Shape5{1, 1, 1, 4, 4});
  for (double v : out.values()) REQUIRE(v == Catch::Approx(27.0 * c));
}

TEST_CASE("conv3d: 2-in/1-out 3x3x3 with padding keeps the spatial extents") {
  Rng rng(9);
  const Tensor x = random_tensor({1, 2, 1, 6, 6}, rng);
  Conv3dKernel k;
  k.weight = random_tensor({1, 2, 3, 3, 3}, rng);
  k.padding = {1, 1, 1};
  REQUIRE(conv3d(x, k).shape() == Shape5{1, 1, 1, 6, 6});
}

TEST_CASE("conv3d errors: channel mismatch and oversized kernel") {
  Rng rng(17);
  const Tensor x = random_tensor({1, 2, 2, 4, 4}, rng);
  Conv3dKernel k;
  k.weight = random_tensor({1, 3, 1, 1, 1}, rng);
  REQUIRE_THROWS_AS(conv3d(x, k), std::invalid_argument);

  Conv3dKernel too_big;
  too_big.weight = random_tensor({1, 2, 3, 1, 1}, rng);
  REQUIRE_THROWS_AS(conv3d(x, too_big), std::invalid_argument);  // kt=3 > T=2 unpadded
}

TEST_CASE("concat_channels layout and zero-channel edge") {
  const Tensor a = Tensor::full({1, 1, 1, 6, 6}, 1.0);
  const Tensor b = Tensor::full({1, 1, 1, 6, 6}, 2.0);
  const Tensor out = concat_channels(a, b);
  REQUIRE(out.shape() == Shape5{1, 2, 1, 6, 6});
  REQUIRE(out.at(0, 0, 0, 0, 0) == 1.0);
  REQUIRE(out.at(0, 1, 0, 0, 0) == 2.0);

  const Tensor empty = Tensor::full({1, 0, 1, 6, 6}, 0.0);
  const Tensor same = concat_channels(a, empty);
  REQUIRE(same.shape() == a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(same.values()[i] == a.values()[i]);

  REQUIRE_THROWS_AS(concat_channels(a, Tensor::full({1, 1, 2, 6, 6}, 0.0)),
                    std::invalid_argument);
}

TEST_CASE("concat_channels splits gradients by channel range") {
  Tensor a = Tensor::full({1, 2, 1, 2, 2}, 1.0, true);
  Tensor b = Tensor::full({1, 1, 1, 2, 2}, 1.0, true);
  const Tensor scaled = broadcast_mul(
      concat_channels(a, b),
      Tensor::from_values({1, 3, 1, 1, 1}, {1.0, 2.0, 3.0}));
  backward(sum_all(scaled));
  for (std::size_t i = 0; i < 4; ++i) REQUIRE(a.grad()[i] == 1.0);      // channel 0
  for (std::size_t i = 4; i < 8; ++i) REQUIRE(a.grad()[i] == 2.0);      // channel 1
  for (double g : b.grad()) REQUIRE(g == 3.0);                          // channel 2
}

TEST_CASE("transpose_ct swaps channel and time") {
  Rng rng(21);
  const Tensor x = random_tensor({2, 3, 4, 2, 2}, rng);
  const Tensor t = transpose_ct(x);
  REQUIRE(t.shape() == Shape5{2, 4, 3, 2, 2});
  REQUIRE(t.at(1, 3, 2, 1, 0) == x.at(1, 2, 3, 1, 0));
  const Tensor back = transpose_ct(t);
  for (std::size_t i = 0; i < x.size(); ++i) REQUIRE(back.values()[i] == x.values()[i]);
}

TEST_CASE("pool_regions averages the crop and validates bounds") {
  Tensor x = Tensor::full({1, 2, 1, 2, 2}, 0.0);
  {
    auto v = x.values_mut();
    // channel 0: 1 2 / 3 4; channel 1: 10 20 / 30 40
    v[0] = 1; v[1] = 2; v[2] = 3; v[3] = 4;
    v[4] = 10; v[5] = 20; v[6] = 30; v[7] = 40;
  }
  const Tensor out = pool_regions(x, {{0, 0, 0, 2, 2}, {0, 1, 0, 2, 1}});
  REQUIRE(out.shape() == Shape5{2, 2, 1, 1, 1});
  REQUIRE(out.at(0, 0, 0, 0, 0) == Catch::Approx(2.5));
  REQUIRE(out.at(0, 1, 0, 0, 0) == Catch::Approx(25.0));
  REQUIRE(out.at(1, 0, 0, 0, 0) == Catch::Approx(2.0));  // x range [1,2), y [0,1): value 2
  REQUIRE_THROWS_AS(pool_regions(x, {{0, 0, 0, 3, 2}}), std::invalid_argument);
  REQUIRE_THROWS_AS(pool_regions(x, {{0, 1, 1, 1, 2}}), std::invalid_argument);
}

TEST_CASE("backward: sum of flagged leaf gives all-ones, accumulates until cleared") {
  Tensor x = Tensor::full({1, 2, 1, 1, 1}, 0.7, true);
  backward(sum_all(x));
  for (double g : x.grad()) REQUIRE(g == 1.0);
  backward(sum_all(x));
  for (double g : x.grad()) REQUIRE(g == 2.0);  // accumulation across calls
  x.zero_grad();
  backward(sum_all(x));
  for (double g : x.grad()) REQUIRE(g == 1.0);
}

TEST_CASE("backward: sum(sigmoid(x)) at x=0 gives 0.25 everywhere") {
  Tensor x = Tensor::full({1, 3, 2, 1, 1}, 0.0, true);
  backward(sum_all(sigmoid(x)));
  for (double g : x.grad()) REQUIRE(g == Catch::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("backward rejects non-scalar roots and disconnected graphs") {
  Tensor x = Tensor::full({1, 2, 1, 1, 1}, 1.0, true);
  REQUIRE_THROWS_AS(backward(relu(x)), std::invalid_argument);
  const Tensor unflagged = Tensor::full({1, 1, 1, 1, 1}, 1.0);
  REQUIRE_THROWS_AS(backward(sum_all(unflagged)), std::invalid_argument);
}

TEST_CASE("reused subexpression accumulates both gradient paths") {
  Tensor x = Tensor::full({1, 1, 1, 1, 1}, 3.0, true);
  backward(sum_all(ewise_add(x, x)));
  REQUIRE(x.grad()[0] == 2.0);

  x.zero_grad();
  backward(sum_all(broadcast_mul(x, x)));  // d(x^2)/dx = 2x
  REQUIRE(x.grad()[0] == Catch::Approx(6.0));
}

TEST_CASE("gradcheck: every tensor op matches central finite differences") {
  for (std::uint64_t seed : {1, 2, 3}) {
    for (const OpCheck& c : gradcheck_tensor(seed)) {
      INFO("op " << c.name << " seed " << seed);
      REQUIRE(c.max_rel_err <= 1e-4);
    }
  }
}

TEST_CASE("gradcheck: composed random graph matches finite differences") {
  Rng rng(31);
  const Shape5 shape{1, 2, 4, 4, 4};
  auto graph = [](const std::vector<Tensor>& in) {
    Conv3dKernel k{in[1], in[2], {1, 1, 1}};
    const Tensor conv = relu(conv3d(in[0], k));
    const Tensor gated = broadcast_mul(conv, sigmoid(pool_global(conv, PoolMode::Avg, {Axis::C})));
    return sum_all(pool_block_avg(gated, {2, 2, 2}));
  };
  const double err = max_grad_rel_err(
      graph, {Tensor::from_values(shape, detail_gradcheck::kink_safe_values(numel(shape), rng)),
              Tensor::from_values({2, 2, 3, 3, 3},
                                  detail_gradcheck::kink_safe_values(2 * 2 * 27, rng)),
              Tensor::from_values({1, 2, 1, 1, 1}, detail_gradcheck::kink_safe_values(2, rng))});
  REQUIRE(err <= 1e-4);
}

TEST_CASE("negative control: the checker catches a corrupted gradient") {
  REQUIRE(gradcheck_negative_control(1).max_rel_err > 1e-4);
}

TEST_CASE("tensor text serialization round-trips exactly") {
  Rng rng(41);
  const Tensor t = random_tensor({2, 1, 3, 2, 2}, rng, -1e6, 1e6);
  std::stringstream ss;
  write_tensor(ss, t);
  const Tensor back = read_tensor(ss);
  REQUIRE(back.shape() == t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) REQUIRE(back.values()[i] == t.values()[i]);
}

TEST_CASE("checkpoint round-trips named tensors and config") {
  Rng rng(43);
  const NamedTensors tensors{{"a.weight", random_tensor({1, 2, 1, 1, 1}, rng)},
                             {"b.bias", random_tensor({1, 3, 1, 1, 1}, rng)}};
  std::stringstream ss;
  write_checkpoint(ss, tensors, {{"k", "v"}, {"n", "42"}});
  const Checkpoint ck = read_checkpoint(ss);
  REQUIRE(ck.config.at("k") == "v");
  REQUIRE(ck.tensors.size() == 2);
  REQUIRE(ck.tensors[0].first == "a.weight");
  const Tensor* b = ck.find("b.bias");
  REQUIRE(b != nullptr);
  for (std::size_t i = 0; i < b->size(); ++i)
    REQUIRE(b->values()[i] == tensors[1].second.values()[i]);
}
