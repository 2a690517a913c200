#include "xaiport/variation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xaiport/error.hpp"

namespace xaiport {

namespace {

void check_pair(const Tensor& a, const Tensor& b) {
  if (a.dims().size() != 3) {
    throw Error(errc::shape_mismatch, "image must be (C,H,W), got " + a.dims_string());
  }
  if (!a.same_dims(b)) {
    throw Error(errc::shape_mismatch,
                "image dims mismatch: " + a.dims_string() + " vs " + b.dims_string());
  }
}

}  // namespace

MixResult mix_box(const Tensor& a, std::span<const float> label_a, const Tensor& b,
                  std::span<const float> label_b, float lambda, uint32_t cy, uint32_t cx) {
  check_pair(a, b);
  if (label_a.size() != label_b.size()) {
    throw Error(errc::shape_mismatch, "label lengths differ: " + std::to_string(label_a.size()) +
                                          " vs " + std::to_string(label_b.size()));
  }
  const uint32_t C = a.dims()[0], H = a.dims()[1], W = a.dims()[2];

  const double ratio = std::sqrt(std::max(0.0, 1.0 - double(lambda)));
  const int cut_h = int(std::lround(double(H) * ratio));
  const int cut_w = int(std::lround(double(W) * ratio));
  const int y1 = std::clamp(int(cy) - cut_h / 2, 0, int(H));
  const int y2 = std::clamp(int(cy) + (cut_h + 1) / 2, 0, int(H));
  const int x1 = std::clamp(int(cx) - cut_w / 2, 0, int(W));
  const int x2 = std::clamp(int(cx) + (cut_w + 1) / 2, 0, int(W));

  MixResult out;
  out.image = a;
  for (uint32_t c = 0; c < C; ++c) {
    for (int i = y1; i < y2; ++i) {
      for (int j = x1; j < x2; ++j) {
        const std::size_t idx = (std::size_t(c) * H + uint32_t(i)) * W + uint32_t(j);
        out.image[idx] = b[idx];
      }
    }
  }

  const double area = double(y2 - y1) * double(x2 - x1);
  const float lam = float(1.0 - area / (double(H) * double(W)));
  out.label.resize(label_a.size());
  for (std::size_t i = 0; i < label_a.size(); ++i) {
    out.label[i] = lam * label_a[i] + (1.0f - lam) * label_b[i];
  }
  out.spec.lambda = lam;
  out.spec.top = uint32_t(y1);
  out.spec.left = uint32_t(x1);
  out.spec.height = uint32_t(y2 - y1);
  out.spec.width = uint32_t(x2 - x1);
  return out;
}

MixResult cutmix(const Tensor& a, std::span<const float> label_a, const Tensor& b,
                 std::span<const float> label_b, Rng& rng) {
  check_pair(a, b);
  const uint32_t H = a.dims()[1], W = a.dims()[2];
  const float lambda = rng.next_f32();
  const uint32_t cy = rng.next_below(H);
  const uint32_t cx = rng.next_below(W);
  MixResult out = mix_box(a, label_a, b, label_b, lambda, cy, cx);
  out.spec.seed = rng.seed();
  return out;
}

MixResult saliency_mix(const Tensor& a, std::span<const float> label_a, const Tensor& b,
                       std::span<const float> label_b, const SaliencyMap& saliency_b, Rng& rng) {
  check_pair(a, b);
  const uint32_t H = a.dims()[1], W = a.dims()[2];
  const auto& s = saliency_b.values;
  if (s.dims() != std::vector<uint32_t>{H, W}) {
    throw Error(errc::shape_mismatch,
                "saliency dims " + s.dims_string() + " do not match image spatial dims");
  }
  // Argmax with smallest row-major index on ties.
  std::size_t best = 0;
  for (std::size_t i = 1; i < s.size(); ++i) {
    if (s[i] > s[best]) best = i;
  }
  const uint32_t cy = uint32_t(best / W);
  const uint32_t cx = uint32_t(best % W);
  const float lambda = rng.next_f32();
  MixResult out = mix_box(a, label_a, b, label_b, lambda, cy, cx);
  out.spec.seed = rng.seed();
  return out;
}

Tensor mask_topk(const Tensor& x, const SaliencyMap& saliency, double p,
                 std::span<const float> channel_mean) {
  if (x.dims().size() != 3) {
    throw Error(errc::shape_mismatch, "image must be (C,H,W), got " + x.dims_string());
  }
  const uint32_t C = x.dims()[0], H = x.dims()[1], W = x.dims()[2];
  if (saliency.values.dims() != std::vector<uint32_t>{H, W}) {
    throw Error(errc::shape_mismatch, "saliency dims " + saliency.values.dims_string() +
                                          " do not match image spatial dims");
  }
  if (!(p > 0.0 && p < 1.0)) {
    throw Error(errc::invalid_argument, "probe fraction must be in (0,1)", "probe_fraction");
  }
  if (channel_mean.size() != C) {
    throw Error(errc::shape_mismatch, "channel mean length " + std::to_string(channel_mean.size()) +
                                          " != channels " + std::to_string(C));
  }

  const std::size_t total = std::size_t(H) * W;
  const std::size_t k = std::size_t(std::ceil(p * double(total)));
  std::vector<uint32_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  const auto& s = saliency.values;
  std::stable_sort(order.begin(), order.end(), [&](uint32_t lhs, uint32_t rhs) {
    if (s[lhs] != s[rhs]) return s[lhs] > s[rhs];
    return lhs < rhs;
  });

  Tensor out = x;
  for (std::size_t r = 0; r < k; ++r) {
    const uint32_t pix = order[r];
    for (uint32_t c = 0; c < C; ++c) out[std::size_t(c) * total + pix] = channel_mean[c];
  }
  return out;
}

}  // namespace xaiport
