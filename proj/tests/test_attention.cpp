#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "tcs3d/attention.hpp"
#include "tcs3d/gradcheck.hpp"
#include "tcs3d/rng.hpp"
#include "tcs3d/tensor.hpp"

using namespace tcs3d;

namespace {

Tensor random_tensor(const Shape5& shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_values(shape, std::move(v));
}

double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void zero_params(AttentionParams& p) {
  for (auto& [name, t] : attention_named_tensors(p)) {
    for (double& v : t.values_mut()) v = 0.0;
  }
}

}  // namespace

TEST_CASE("attention maps have the contract shapes") {
  Rng rng(1);
  const AttentionParams p84 = make_attention_params(4, 8, 8, 1, 1);
  const Tensor f = random_tensor({1, 4, 8, 6, 6}, rng);
  REQUIRE(tam_forward(f, p84).shape() == Shape5{1, 1, 8, 1, 1});
  REQUIRE(sam_forward(f, p84).shape() == Shape5{1, 1, 1, 6, 6});

  const AttentionParams p16 = make_attention_params(16, 4, 2, 16, 1);
  const Tensor g = random_tensor({1, 16, 4, 6, 6}, rng);
  REQUIRE(cam_forward(g, p16).shape() == Shape5{1, 16, 1, 1, 1});
}

TEST_CASE("zero weights and biases give attention 0.5 everywhere") {
  Rng rng(2);
  AttentionParams p = make_attention_params(4, 8, 8, 2, 1);
  zero_params(p);
  const Tensor f = random_tensor({2, 4, 8, 3, 3}, rng);
  for (const Tensor& m : {tam_forward(f, p), cam_forward(f, p), sam_forward(f, p)})
    for (double v : m.values()) REQUIRE(v == 0.5);
}

TEST_CASE("TAM on a constant input matches the scalar two-branch oracle") {
  const std::size_t T = 4, C = 3;
  const double c = 0.37;
  const AttentionParams p = make_attention_params(C, T, 2, 1, 5);
  const Tensor f = Tensor::full({1, C, T, 1, 1}, c);
  const Tensor m_t = tam_forward(f, p);
  REQUIRE(m_t.shape() == Shape5{1, 1, T, 1, 1});

  // both pooled branches equal the constant, so M_t = sigmoid(2 * MLP(c,...,c))
  const auto w0 = p.tam.squeeze.weight.values();  // (T/2, T, 1,1,1)
  const auto b0 = p.tam.squeeze.bias->values();
  const auto w1 = p.tam.excite.weight.values();   // (T, T/2, 1,1,1)
  const auto b1 = p.tam.excite.bias->values();
  const std::size_t hidden = T / 2;
  std::vector<double> h(hidden);
  for (std::size_t j = 0; j < hidden; ++j) {
    double acc = b0[j];
    for (std::size_t t = 0; t < T; ++t) acc += w0[j * T + t] * c;
    h[j] = acc > 0 ? acc : 0;
  }
  for (std::size_t t = 0; t < T; ++t) {
    double acc = b1[t];
    for (std::size_t j = 0; j < hidden; ++j) acc += w1[t * hidden + j] * h[j];
    REQUIRE(m_t.values()[t] == Catch::Approx(sigmoid_scalar(2.0 * acc)).epsilon(1e-12));
  }
}

TEST_CASE("CAM with identity weights favors the dominant channel, scalar-exact") {
  AttentionParams p = make_attention_params(2, 2, 2, 1, 0);
  zero_params(p);
  {
    auto w0 = p.cam.squeeze.weight.values_mut();  // (2,2)
    w0[0] = 1.0;  // identity
    w0[3] = 1.0;
    auto w1 = p.cam.excite.weight.values_mut();
    w1[0] = 1.0;
    w1[3] = 1.0;
  }
  Tensor f = Tensor::full({1, 2, 2, 2, 2}, 0.2);
  for (std::size_t i = 8; i < 16; ++i) f.values_mut()[i] = 0.8;  // channel 1 dominant
  const Tensor m_c = cam_forward(f, p);
  // avg = max = 0.2 / 0.8 per channel; identity MLP doubles via branch sum
  REQUIRE(m_c.values()[0] == Catch::Approx(sigmoid_scalar(0.4)).epsilon(1e-12));
  REQUIRE(m_c.values()[1] == Catch::Approx(sigmoid_scalar(1.6)).epsilon(1e-12));
  REQUIRE(m_c.values()[1] > m_c.values()[0]);
}

TEST_CASE("SAM with a center-tap kernel on constant input gives sigmoid(2cw)") {
  const double c = 0.6, w = 0.8;
  AttentionParams p = make_attention_params(4, 4, 2, 2, 0);
  zero_params(p);
  {
    auto sw = p.sam.weight.values_mut();  // (1,2,3,3,3)
    const Shape5 ws{1, 2, 3, 3, 3};
    sw[flat_index(ws, 0, 0, 1, 1, 1)] = w;
    sw[flat_index(ws, 0, 1, 1, 1, 1)] = w;
  }
  const Tensor f = Tensor::full({1, 4, 4, 2, 2}, c);
  const Tensor m_s = sam_forward(f, p);
  for (double v : m_s.values())
    REQUIRE(v == Catch::Approx(sigmoid_scalar(2.0 * c * w)).epsilon(1e-12));
}

TEST_CASE("tcs3d_forward preserves shape and carries an ordered trace") {
  Rng rng(7);
  const AttentionParams p = make_attention_params(16, 8, 8, 16, 3);
  const Tensor f = random_tensor({1, 16, 8, 6, 6}, rng);
  auto [out, trace] = tcs3d_forward(f, p);
  REQUIRE(out.shape() == f.shape());
  REQUIRE(trace.m_t.shape() == Shape5{1, 1, 8, 1, 1});
  REQUIRE(trace.m_c.shape() == Shape5{1, 16, 1, 1, 1});
  REQUIRE(trace.m_s.shape() == Shape5{1, 1, 1, 6, 6});

  // attention values lie strictly in (0,1)
  for (const Tensor* m : {&trace.m_t, &trace.m_c, &trace.m_s})
    for (double v : m->values()) {
      REQUIRE(v > 0.0);
      REQUIRE(v < 1.0);
    }

  // order: temporal gating first, then channel, then spatial
  const Tensor f1 = broadcast_mul(f, trace.m_t);
  for (std::size_t i = 0; i < f1.size(); ++i)
    REQUIRE(trace.f1.values()[i] == Catch::Approx(f1.values()[i]).epsilon(1e-14));
  const Tensor f2 = broadcast_mul(trace.f1, trace.m_c);
  for (std::size_t i = 0; i < f2.size(); ++i)
    REQUIRE(trace.f2.values()[i] == Catch::Approx(f2.values()[i]).epsilon(1e-14));
  for (std::size_t i = 0; i < out.size(); ++i) REQUIRE(out.values()[i] == trace.f3.values()[i]);
}

TEST_CASE("large positive excitation biases force all maps to 1: output == input") {
  Rng rng(9);
  AttentionParams p = make_attention_params(4, 4, 2, 2, 11);
  zero_params(p);
  for (double& v : p.tam.excite.bias->values_mut()) v = 50.0;
  for (double& v : p.cam.excite.bias->values_mut()) v = 50.0;
  for (double& v : p.sam.bias->values_mut()) v = 50.0;
  const Tensor f = random_tensor({1, 4, 4, 3, 3}, rng);
  auto [out, trace] = tcs3d_forward(f, p);
  for (std::size_t i = 0; i < f.size(); ++i)
    REQUIRE(out.values()[i] == Catch::Approx(f.values()[i]).margin(1e-9));
}

TEST_CASE("attenuation: |F3| <= |F2| <= |F1| <= |F| elementwise") {
  Rng rng(13);
  for (int rep = 0; rep < 5; ++rep) {
    const AttentionParams p = make_attention_params(4, 8, 4, 2, 100 + rep);
    const Tensor f = random_tensor({2, 4, 8, 4, 4}, rng);
    auto [out, trace] = tcs3d_forward(f, p);
    for (std::size_t i = 0; i < f.size(); ++i) {
      REQUIRE(std::abs(trace.f1.values()[i]) <= std::abs(f.values()[i]));
      REQUIRE(std::abs(trace.f2.values()[i]) <= std::abs(trace.f1.values()[i]));
      REQUIRE(std::abs(trace.f3.values()[i]) <= std::abs(trace.f2.values()[i]));
    }
  }
}

TEST_CASE("divisibility violations are rejected at construction and at forward") {
  REQUIRE_THROWS_AS(make_attention_params(5, 8, 8, 16, 0), std::invalid_argument);  // C % 16
  REQUIRE_THROWS_AS(make_attention_params(16, 6, 8, 16, 0), std::invalid_argument);  // T % 8

  Rng rng(15);
  const AttentionParams p = make_attention_params(4, 8, 8, 2, 0);
  REQUIRE_THROWS_AS(tam_forward(random_tensor({1, 4, 6, 3, 3}, rng), p), std::invalid_argument);
  REQUIRE_THROWS_AS(cam_forward(random_tensor({1, 3, 8, 3, 3}, rng), p), std::invalid_argument);
}

TEST_CASE("init: deterministic from seed, fan-in bound, seeds differ") {
  const AttentionParams a = make_attention_params(16, 8, 8, 16, 42);
  const AttentionParams b = make_attention_params(16, 8, 8, 16, 42);
  const AttentionParams c = make_attention_params(16, 8, 8, 16, 43);
  const auto an = attention_named_tensors(a);
  const auto bn = attention_named_tensors(b);
  const auto cn = attention_named_tensors(c);
  REQUIRE(an.size() == 10);  // one shared kernel pair per module plus biases
  bool any_diff = false;
  for (std::size_t i = 0; i < an.size(); ++i) {
    for (std::size_t j = 0; j < an[i].second.size(); ++j) {
      REQUIRE(an[i].second.values()[j] == bn[i].second.values()[j]);
      any_diff = any_diff || an[i].second.values()[j] != cn[i].second.values()[j];
    }
  }
  REQUIRE(any_diff);

  // cam.w0 has fan_in = 16 (1x1x1 over 16 channels): weights within 1/sqrt(16)
  const Tensor& cam_w0 = a.cam.squeeze.weight;
  REQUIRE(cam_w0.shape()[1] == 16);
  for (double v : cam_w0.values()) {
    REQUIRE(v >= -0.25);
    REQUIRE(v <= 0.25);
  }
}

TEST_CASE("gradcheck: TAM, CAM, SAM and the full stack match finite differences") {
  for (std::uint64_t seed : {1, 2, 3}) {
    for (const OpCheck& c : gradcheck_attention(seed)) {
      INFO("op " << c.name << " seed " << seed);
      REQUIRE(c.max_rel_err <= 1e-4);
    }
  }
}

TEST_CASE("checkpoint names follow the tam/cam/sam layout") {
  const AttentionParams p = make_attention_params(4, 4, 2, 2, 0);
  const auto named = attention_named_tensors(p);
  REQUIRE(named[0].first == "tam.w0");
  REQUIRE(named[1].first == "tam.w0.bias");
  REQUIRE(named[2].first == "tam.w1");
  REQUIRE(named[4].first == "cam.w0");
  REQUIRE(named[6].first == "cam.w1");
  REQUIRE(named[8].first == "sam.conv");
  REQUIRE(named[9].first == "sam.conv.bias");
}
