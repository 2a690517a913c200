#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "xaiport/explainers.hpp"
#include "xaiport/rng.hpp"

using namespace xaiport;

namespace {

LayerCapture make_capture(std::vector<uint32_t> dims, std::vector<float> a, std::vector<float> g,
                          uint32_t cls = 0) {
  LayerCapture cap;
  cap.activations = Tensor(dims, std::move(a));
  cap.gradients = Tensor(std::move(dims), std::move(g));
  cap.class_index = cls;
  return cap;
}

ExplainContext ctx_for(const LayerCapture& cap) {
  return {cap.activations.dims()[1], cap.activations.dims()[2], "sample", "conv1"};
}

bool values_bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.dims() != b.dims()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

void check_map_invariants(const SaliencyMap& map) {
  float mx = 0.0f;
  for (float v : map.values.data()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
    mx = std::max(mx, v);
  }
  CHECK((mx == 1.0f || mx == 0.0f));
}

// Cyclic Jacobi eigensolver for a small symmetric matrix; returns the
// eigenvector of the largest eigenvalue. Test-side SVD oracle, independent
// of the power iteration it checks.
std::vector<double> principal_eigenvector(std::vector<double> m, uint32_t n) {
  std::vector<double> v(n * n, 0.0);
  for (uint32_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (uint32_t p = 0; p < n; ++p)
      for (uint32_t q = p + 1; q < n; ++q) off += m[p * n + q] * m[p * n + q];
    if (off < 1e-24) break;
    for (uint32_t p = 0; p < n; ++p) {
      for (uint32_t q = p + 1; q < n; ++q) {
        if (m[p * n + q] == 0.0) continue;
        const double theta = (m[q * n + q] - m[p * n + p]) / (2.0 * m[p * n + q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (uint32_t k = 0; k < n; ++k) {
          const double mkp = m[k * n + p], mkq = m[k * n + q];
          m[k * n + p] = c * mkp - s * mkq;
          m[k * n + q] = s * mkp + c * mkq;
        }
        for (uint32_t k = 0; k < n; ++k) {
          const double mpk = m[p * n + k], mqk = m[q * n + k];
          m[p * n + k] = c * mpk - s * mqk;
          m[q * n + k] = s * mpk + c * mqk;
        }
        for (uint32_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  uint32_t best = 0;
  for (uint32_t i = 1; i < n; ++i) {
    if (m[i * n + i] > m[best * n + best]) best = i;
  }
  std::vector<double> out(n);
  for (uint32_t k = 0; k < n; ++k) out[k] = v[k * n + best];
  return out;
}

// Oracle map: project onto the Jacobi principal component, apply the same
// sign/relu/normalize conventions as the implementation.
Tensor eigen_oracle_map(const Tensor& a) {
  const uint32_t K = a.dims()[0], H = a.dims()[1], W = a.dims()[2];
  const uint32_t HW = H * W;
  std::vector<double> gram(std::size_t(K) * K, 0.0);
  for (uint32_t i = 0; i < K; ++i)
    for (uint32_t j = 0; j < K; ++j) {
      double acc = 0.0;
      for (uint32_t p = 0; p < HW; ++p)
        acc += double(a[std::size_t(i) * HW + p]) * double(a[std::size_t(j) * HW + p]);
      gram[i * K + j] = acc;
    }
  const auto v1 = principal_eigenvector(gram, K);
  Tensor raw({H, W});
  double total = 0.0;
  for (uint32_t p = 0; p < HW; ++p) {
    double acc = 0.0;
    for (uint32_t k = 0; k < K; ++k) acc += double(a[std::size_t(k) * HW + p]) * v1[k];
    raw[p] = float(acc);
    total += acc;
  }
  if (total < 0.0) {
    for (float& x : raw.data()) x = -x;
  }
  for (float& x : raw.data()) x = x > 0.0f ? x : 0.0f;
  return upsample_normalize(raw, H, W);
}

}  // namespace

TEST_CASE("grad_cam hand oracle") {
  auto cap = make_capture({1, 2, 2}, {1, 2, 3, 4}, {1, 1, 1, 1});
  SaliencyMap map = grad_cam(cap, ctx_for(cap));
  CHECK(map.values[0] == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(map.values[1] == doctest::Approx(1.0 / 3).epsilon(1e-6));
  CHECK(map.values[2] == doctest::Approx(2.0 / 3).epsilon(1e-6));
  CHECK(map.values[3] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(map.method == "grad_cam");
  CHECK(map.class_index.has_value());
  check_map_invariants(map);
}

TEST_CASE("grad_cam zero gradients give the zero map") {
  auto cap = make_capture({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8}, std::vector<float>(8, 0.0f));
  SaliencyMap map = grad_cam(cap, ctx_for(cap));
  for (float v : map.values.data()) CHECK(v == 0.0f);
}

TEST_CASE("grad_cam_pp hand oracles") {
  SUBCASE("single positive cell") {
    auto cap = make_capture({1, 1, 1}, {2}, {1});
    SaliencyMap map = grad_cam_pp(cap, ctx_for(cap));
    CHECK(map.values[0] == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("flat nonzero map becomes all ones") {
    auto cap = make_capture({1, 1, 2}, {1, 1}, {1, 1});
    SaliencyMap map = grad_cam_pp(cap, ctx_for(cap));
    CHECK(map.values[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(map.values[1] == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("zero gradients give the zero map") {
    auto cap = make_capture({1, 2, 2}, {1, 2, 3, 4}, {0, 0, 0, 0});
    SaliencyMap map = grad_cam_pp(cap, ctx_for(cap));
    for (float v : map.values.data()) CHECK(v == 0.0f);
  }
}

TEST_CASE("layer_cam hand oracle") {
  auto cap = make_capture({1, 2, 2}, {1, -1, 2, 0}, {1, -2, 0.5f, 3});
  SaliencyMap map = layer_cam(cap, ctx_for(cap));
  CHECK(map.values[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(map.values[1] == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(map.values[2] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(map.values[3] == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("layer_cam with nonpositive gradients is the zero map") {
  auto cap = make_capture({1, 2, 2}, {1, 2, 3, 4}, {-1, 0, -3, 0});
  SaliencyMap map = layer_cam(cap, ctx_for(cap));
  for (float v : map.values.data()) CHECK(v == 0.0f);
}

TEST_CASE("xgrad_cam hand oracle") {
  auto cap = make_capture({1, 1, 2}, {1, 3}, {2, 4});
  SaliencyMap map = xgrad_cam(cap, ctx_for(cap));
  CHECK(map.values[0] == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(map.values[1] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("xgrad_cam with zero activations is the zero map") {
  auto cap = make_capture({1, 2, 2}, {0, 0, 0, 0}, {1, 2, 3, 4});
  SaliencyMap map = xgrad_cam(cap, ctx_for(cap));
  for (float v : map.values.data()) CHECK(v == 0.0f);
}

TEST_CASE("xgrad_cam agrees with grad_cam on constant activations") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<float> a(2 * 4 * 4);
    for (std::size_t k = 0; k < 2; ++k) {
      const float constant = 0.5f + rng.next_f32();
      for (std::size_t p = 0; p < 16; ++p) a[k * 16 + p] = constant;
    }
    std::vector<float> g(2 * 4 * 4);
    for (auto& v : g) v = rng.next_f32() * 2.0f - 1.0f;
    auto cap = make_capture({2, 4, 4}, a, g);
    SaliencyMap xg = xgrad_cam(cap, ctx_for(cap));
    SaliencyMap gc = grad_cam(cap, ctx_for(cap));
    CHECK(values_bitwise_equal(xg.values, gc.values));
  }
}

TEST_CASE("eigen_cam rank-1 equals normalized relu(A)") {
  std::vector<float> a = {0.5f, 2.0f, 0.0f, 1.0f};
  auto cap = make_capture({1, 2, 2}, a, {0, 0, 0, 0});
  SaliencyMap map = eigen_cam(cap, ctx_for(cap));
  Tensor expect = upsample_normalize(Tensor({2, 2}, {0.5f, 2.0f, 0.0f, 1.0f}), 2, 2);
  for (std::size_t i = 0; i < 4; ++i) CHECK(map.values[i] == doctest::Approx(expect[i]).epsilon(1e-6));
  CHECK_FALSE(map.class_index.has_value());
}

TEST_CASE("eigen_cam ignores the class index bitwise") {
  Rng rng(8);
  std::vector<float> a(3 * 5 * 5), g(3 * 5 * 5);
  for (auto& v : a) v = rng.next_f32();
  for (auto& v : g) v = rng.next_f32() - 0.5f;
  auto cap0 = make_capture({3, 5, 5}, a, g, 0);
  auto cap1 = make_capture({3, 5, 5}, a, g, 1);
  SaliencyMap m0 = eigen_cam(cap0, ctx_for(cap0));
  SaliencyMap m1 = eigen_cam(cap1, ctx_for(cap1));
  CHECK(values_bitwise_equal(m0.values, m1.values));
}

TEST_CASE("eigen_cam matches the dense Jacobi oracle on random stacks") {
  Rng rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<float> a(4 * 6 * 6);
    for (auto& v : a) v = rng.next_f32();
    auto cap = make_capture({4, 6, 6}, a, std::vector<float>(4 * 6 * 6, 0.0f));
    SaliencyMap map = eigen_cam(cap, ctx_for(cap));
    Tensor oracle = eigen_oracle_map(cap.activations);
    for (std::size_t i = 0; i < map.values.size(); ++i) {
      CHECK(std::abs(map.values[i] - oracle[i]) <= 1e-5);
    }
  }
}

TEST_CASE("positive gradient scaling leaves maps unchanged") {
  Rng rng(21);
  std::vector<float> a(2 * 4 * 4), g(2 * 4 * 4);
  for (auto& v : a) v = rng.next_f32();
  for (auto& v : g) v = rng.next_f32() - 0.25f;
  auto cap = make_capture({2, 4, 4}, a, g);

  std::vector<float> g4(g);
  for (auto& v : g4) v *= 4.0f;  // power of two: float scaling is exact
  auto cap4 = make_capture({2, 4, 4}, a, g4);

  for (auto method : {&grad_cam, &layer_cam, &xgrad_cam}) {
    SaliencyMap base = method(cap, ctx_for(cap));
    SaliencyMap scaled = method(cap4, ctx_for(cap4));
    CHECK(values_bitwise_equal(base.values, scaled.values));
  }
}

TEST_CASE("all methods are pure and satisfy the map invariants") {
  Rng rng(34);
  std::vector<float> a(3 * 4 * 4), g(3 * 4 * 4);
  for (auto& v : a) v = rng.next_f32();
  for (auto& v : g) v = rng.next_f32() - 0.5f;
  auto cap = make_capture({3, 4, 4}, a, g, 1);
  for (auto method : kCamMethods) {
    SaliencyMap first = explain(method, cap, ctx_for(cap));
    SaliencyMap second = explain(method, cap, ctx_for(cap));
    CHECK(values_bitwise_equal(first.values, second.values));
    CHECK(first.method == method);
    check_map_invariants(first);
  }
  CHECK_THROWS(explain("lime", cap, ctx_for(cap)));
}

TEST_CASE("upsample_normalize") {
  SUBCASE("constant positive map becomes all ones") {
    Tensor up = upsample_normalize(Tensor::full({2, 2}, 3.0f), 4, 4);
    for (float v : up.data()) CHECK(v == 1.0f);
  }
  SUBCASE("zero map stays zero") {
    Tensor up = upsample_normalize(Tensor({3, 3}), 6, 6);
    for (float v : up.data()) CHECK(v == 0.0f);
  }
  SUBCASE("2x2 checker upsampled to 3x3 has center 0.5") {
    Tensor up = upsample_normalize(Tensor({2, 2}, {0, 1, 1, 0}), 3, 3);
    CHECK(up.dims() == std::vector<uint32_t>{3, 3});
    CHECK(up[up.offset2(1, 1)] == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(up[up.offset2(0, 0)] == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(up[up.offset2(0, 2)] == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("upsampled dims match the requested output") {
    Tensor up = upsample_normalize(Tensor({2, 3}, {0, 1, 2, 3, 4, 5}), 16, 16);
    CHECK(up.dims() == std::vector<uint32_t>{16, 16});
  }
}

TEST_CASE("mismatched capture dims are rejected") {
  LayerCapture cap;
  cap.activations = Tensor({1, 2, 2});
  cap.gradients = Tensor({1, 2, 3});
  CHECK_THROWS(grad_cam(cap, {2, 2, "s", "l"}));
}
