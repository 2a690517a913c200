#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xaiport/explainers.hpp"
#include "xaiport/rng.hpp"
#include "xaiport/tensor.hpp"

namespace xaiport {

// Record of one mix: the label coefficient, the pasted box (pixels), the
// partner sample and the rng seed that produced it.
struct MixSpec {
  float lambda = 1.0f;  // recomputed from the clipped box: 1 - area/total
  uint32_t top = 0, left = 0, height = 0, width = 0;
  std::string partner_id;
  uint64_t seed = 0;
};

struct MixResult {
  Tensor image;
  std::vector<float> label;
  MixSpec spec;
};

// Deterministic core: paste b's pixels into a inside a box of side
// round(dim * sqrt(1 - lambda)) centered at (cy, cx), clipped to bounds;
// the label mixes with lambda recomputed from the clipped area.
MixResult mix_box(const Tensor& a, std::span<const float> label_a, const Tensor& b,
                  std::span<const float> label_b, float lambda, uint32_t cy, uint32_t cx);

// lambda ~ Uniform[0,1) (Beta(1,1)), box center uniform over the image.
MixResult cutmix(const Tensor& a, std::span<const float> label_a, const Tensor& b,
                 std::span<const float> label_b, Rng& rng);

// As cutmix, but the box centers on the argmax of b's saliency map (ties
// broken by smallest row-major index).
MixResult saliency_mix(const Tensor& a, std::span<const float> label_a, const Tensor& b,
                       std::span<const float> label_b, const SaliencyMap& saliency_b, Rng& rng);

// Replaces the ceil(p*H*W) most salient pixels (ties by row-major index)
// with the per-channel dataset mean, across all channels.
Tensor mask_topk(const Tensor& x, const SaliencyMap& saliency, double p,
                 std::span<const float> channel_mean);

}  // namespace xaiport
