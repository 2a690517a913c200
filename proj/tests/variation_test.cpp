#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "xaiport/error.hpp"
#include "xaiport/rng.hpp"
#include "xaiport/variation.hpp"

using namespace xaiport;

namespace {

Tensor random_image(std::vector<uint32_t> dims, uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(dims));
  for (auto& v : t.data()) v = rng.next_f32();
  return t;
}

SaliencyMap map_of(Tensor values) {
  SaliencyMap s;
  s.values = std::move(values);
  s.method = "grad_cam";
  s.sample_id = "s";
  s.target_layer = "conv1";
  return s;
}

}  // namespace

TEST_CASE("mix_box: lambda 1 returns a bitwise and the label of a") {
  Tensor a = random_image({1, 16, 16}, 1);
  Tensor b = random_image({1, 16, 16}, 2);
  const float ya[] = {1.0f, 0.0f};
  const float yb[] = {0.0f, 1.0f};
  MixResult r = mix_box(a, ya, b, yb, 1.0f, 7, 9);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(r.image[i] == a[i]);
  CHECK(r.label[0] == 1.0f);
  CHECK(r.label[1] == 0.0f);
  CHECK(r.spec.lambda == 1.0f);
  CHECK(r.spec.height == 0);
}

TEST_CASE("mix_box: lambda 0.75 on 16x16 cuts an 8x8 box") {
  Tensor a = random_image({1, 16, 16}, 3);
  Tensor b = random_image({1, 16, 16}, 4);
  const float ya[] = {1.0f, 0.0f};
  const float yb[] = {0.0f, 1.0f};
  MixResult r = mix_box(a, ya, b, yb, 0.75f, 8, 8);  // interior center: no clipping
  CHECK(r.spec.height == 8);
  CHECK(r.spec.width == 8);
  CHECK(r.spec.lambda == doctest::Approx(0.75).epsilon(1e-6));
  CHECK(r.label[0] == doctest::Approx(0.75).epsilon(1e-6));
  CHECK(r.label[1] == doctest::Approx(0.25).epsilon(1e-6));
}

TEST_CASE("mix_box partitions pixels exactly between a and b") {
  Tensor a = random_image({2, 12, 12}, 5);
  Tensor b = random_image({2, 12, 12}, 6);
  const float ya[] = {1.0f, 0.0f};
  const float yb[] = {0.0f, 1.0f};
  MixResult r = mix_box(a, ya, b, yb, 0.6f, 2, 11);  // clips at the edges
  const auto& s = r.spec;
  for (uint32_t c = 0; c < 2; ++c) {
    for (uint32_t i = 0; i < 12; ++i) {
      for (uint32_t j = 0; j < 12; ++j) {
        const std::size_t idx = (std::size_t(c) * 12 + i) * 12 + j;
        const bool inside = i >= s.top && i < s.top + s.height && j >= s.left && j < s.left + s.width;
        CHECK(r.image[idx] == (inside ? b[idx] : a[idx]));
      }
    }
  }
  // Recomputed lambda matches the clipped box area to float precision.
  CHECK(double(s.lambda) ==
        doctest::Approx(1.0 - double(s.height) * s.width / 144.0).epsilon(1e-6));
}

TEST_CASE("cutmix draws lambda and center from the rng deterministically") {
  Tensor a = random_image({1, 16, 16}, 7);
  Tensor b = random_image({1, 16, 16}, 8);
  const float ya[] = {1.0f, 0.0f};
  const float yb[] = {0.0f, 1.0f};
  Rng r1(99), r2(99);
  MixResult m1 = cutmix(a, ya, b, yb, r1);
  MixResult m2 = cutmix(a, ya, b, yb, r2);
  CHECK(m1.spec.lambda == m2.spec.lambda);
  CHECK(m1.spec.top == m2.spec.top);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(m1.image[i] == m2.image[i]);

  // Label mixing follows the recomputed lambda.
  CHECK(m1.label[0] == doctest::Approx(m1.spec.lambda).epsilon(1e-6));
  CHECK(m1.label[1] == doctest::Approx(1.0f - m1.spec.lambda).epsilon(1e-6));
}

TEST_CASE("cutmix rejects shape mismatches") {
  Tensor a({1, 4, 4});
  Tensor b({1, 5, 5});
  const float y[] = {1.0f, 0.0f};
  Rng rng(1);
  CHECK_THROWS_AS(cutmix(a, y, b, y, rng), Error);
}

TEST_CASE("saliency_mix centers the box on the saliency argmax") {
  Tensor a = Tensor::full({1, 16, 16}, 0.25f);
  Tensor b = Tensor::full({1, 16, 16}, 0.75f);
  const float ya[] = {1.0f, 0.0f};
  const float yb[] = {0.0f, 1.0f};
  Tensor sal({16, 16});
  sal[sal.offset2(4, 4)] = 1.0f;

  // Find an rng seed drawing a mid-range lambda, then check the box.
  Rng rng(3);
  MixResult r = saliency_mix(a, ya, b, yb, map_of(sal), rng);
  if (r.spec.height > 0) {
    // Unclipped box centered at (4,4): top = 4 - h/2 (clipped at 0).
    const uint32_t h = r.spec.height;
    const uint32_t expected_top = 4 >= h / 2 ? 4 - h / 2 : 0;
    CHECK(r.spec.top == expected_top);
  }
}

TEST_CASE("saliency_mix ties break to the smallest row-major index") {
  Tensor a = Tensor::full({1, 8, 8}, 0.0f);
  Tensor b = Tensor::full({1, 8, 8}, 1.0f);
  const float ya[] = {1.0f, 0.0f};
  const float yb[] = {0.0f, 1.0f};
  Tensor uniform = Tensor::full({8, 8}, 0.5f);
  Rng rng(11);
  MixResult r = saliency_mix(a, ya, b, yb, map_of(uniform), rng);
  // Center (0,0): the clipped box hugs the top-left corner.
  CHECK(r.spec.top == 0);
  CHECK(r.spec.left == 0);
}

TEST_CASE("saliency_mix with lambda 1 returns a") {
  Tensor a = random_image({1, 8, 8}, 9);
  Tensor b = random_image({1, 8, 8}, 10);
  const float ya[] = {1.0f, 0.0f};
  const float yb[] = {0.0f, 1.0f};
  MixResult r = mix_box(a, ya, b, yb, 1.0f, 0, 0);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(r.image[i] == a[i]);
}

TEST_CASE("mask_topk masks exactly ceil(p*H*W) pixels with the channel mean") {
  Tensor x = random_image({1, 16, 16}, 12);
  Tensor sal = random_image({16, 16}, 13);
  const float mean[] = {0.5f};
  Tensor masked = mask_topk(x, map_of(sal), 0.25, mean);
  std::size_t changed = 0, at_mean = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (masked[i] != x[i]) ++changed;
    if (masked[i] == 0.5f) ++at_mean;
  }
  CHECK(at_mean >= 64);  // ceil(0.25 * 256)
  CHECK(changed <= 64);
}

TEST_CASE("mask_topk on uniform saliency masks the first row-major pixels") {
  Tensor x = Tensor::full({1, 16, 16}, 0.9f);
  Tensor sal = Tensor::full({16, 16}, 0.3f);
  const float mean[] = {0.1f};
  Tensor masked = mask_topk(x, map_of(sal), 0.25, mean);
  for (std::size_t i = 0; i < 64; ++i) CHECK(masked[i] == 0.1f);
  for (std::size_t i = 64; i < 256; ++i) CHECK(masked[i] == 0.9f);
}

TEST_CASE("mask_topk with a single salient pixel and p = 1/256") {
  Tensor x = Tensor::full({2, 16, 16}, 0.9f);
  Tensor sal({16, 16});
  sal[sal.offset2(3, 5)] = 1.0f;
  const float mean[] = {0.1f, 0.2f};
  Tensor masked = mask_topk(x, map_of(sal), 1.0 / 256.0, mean);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < masked.size(); ++i) changed += masked[i] != x[i];
  CHECK(changed == 2);  // the pixel across both channels
  CHECK(masked[masked.offset3(0, 3, 5)] == 0.1f);
  CHECK(masked[masked.offset3(1, 3, 5)] == 0.2f);
}

TEST_CASE("mask_topk is idempotent") {
  Tensor x = random_image({1, 16, 16}, 14);
  Tensor sal = random_image({16, 16}, 15);
  const float mean[] = {0.4f};
  Tensor once = mask_topk(x, map_of(sal), 0.3, mean);
  Tensor twice = mask_topk(once, map_of(sal), 0.3, mean);
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(once[i] == twice[i]);
}

TEST_CASE("mask_topk validates the probe fraction") {
  Tensor x({1, 4, 4});
  Tensor sal({4, 4});
  const float mean[] = {0.0f};
  CHECK_THROWS_AS(mask_topk(x, map_of(sal), 0.0, mean), Error);
  CHECK_THROWS_AS(mask_topk(x, map_of(sal), 1.0, mean), Error);
  CHECK_THROWS_AS(mask_topk(x, map_of(sal), 1.5, mean), Error);
}

TEST_CASE("cutmix lambda / box-area quantization invariant over random draws") {
  Rng rng(77);
  Tensor a = random_image({1, 16, 16}, 20);
  Tensor b = random_image({1, 16, 16}, 21);
  const float ya[] = {1.0f, 0.0f};
  const float yb[] = {0.0f, 1.0f};
  for (int trial = 0; trial < 200; ++trial) {
    MixResult r = cutmix(a, ya, b, yb, rng);
    const double area_frac = double(r.spec.height) * r.spec.width / 256.0;
    CHECK(std::abs((1.0 - double(r.spec.lambda)) - area_frac) <= 1.0 / 256.0);
    CHECK(r.spec.top + r.spec.height <= 16);
    CHECK(r.spec.left + r.spec.width <= 16);
  }
}
