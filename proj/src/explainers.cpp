#include "xaiport/explainers.hpp"

#include <algorithm>
#include <cmath>

#include "xaiport/error.hpp"

namespace xaiport {

namespace {

void check_capture(const LayerCapture& cap) {
  if (cap.activations.dims().size() != 3) {
    throw Error(errc::shape_mismatch,
                "capture activations must be (K,H,W), got " + cap.activations.dims_string());
  }
  if (!cap.activations.same_dims(cap.gradients)) {
    throw Error(errc::shape_mismatch, "activation dims " + cap.activations.dims_string() +
                                          " != gradient dims " + cap.gradients.dims_string());
  }
}

// relu(sum_k w_k A^k) over the channel axis.
Tensor weighted_channel_sum(const Tensor& a, const std::vector<double>& w) {
  const uint32_t K = a.dims()[0], H = a.dims()[1], W = a.dims()[2];
  Tensor raw({H, W});
  for (uint32_t i = 0; i < H * W; ++i) {
    double acc = 0.0;
    for (uint32_t k = 0; k < K; ++k) acc += w[k] * double(a[std::size_t(k) * H * W + i]);
    raw[i] = acc > 0.0 ? float(acc) : 0.0f;
  }
  return raw;
}

SaliencyMap finish(Tensor raw, std::string_view method, const LayerCapture& cap,
                   const ExplainContext& ctx, bool class_free = false) {
  SaliencyMap map;
  map.values = upsample_normalize(raw, ctx.out_height, ctx.out_width);
  map.method = std::string(method);
  map.sample_id = ctx.sample_id;
  map.target_layer = ctx.target_layer;
  if (!class_free) map.class_index = cap.class_index;
  return map;
}

}  // namespace

bool is_cam_method(std::string_view name) {
  return std::find(kCamMethods.begin(), kCamMethods.end(), name) != kCamMethods.end();
}

Tensor upsample_normalize(const Tensor& raw, uint32_t out_height, uint32_t out_width) {
  const uint32_t H = raw.dims()[0], W = raw.dims()[1];
  Tensor up({out_height, out_width});

  // Corner-aligned bilinear interpolation.
  for (uint32_t i = 0; i < out_height; ++i) {
    const double sy = out_height > 1 ? double(i) * double(H - 1) / double(out_height - 1) : 0.0;
    const uint32_t y0 = uint32_t(sy);
    const uint32_t y1 = std::min(y0 + 1, H - 1);
    const double fy = sy - double(y0);
    for (uint32_t j = 0; j < out_width; ++j) {
      const double sx = out_width > 1 ? double(j) * double(W - 1) / double(out_width - 1) : 0.0;
      const uint32_t x0 = uint32_t(sx);
      const uint32_t x1 = std::min(x0 + 1, W - 1);
      const double fx = sx - double(x0);
      const double v = (1.0 - fy) * ((1.0 - fx) * raw[raw.offset2(y0, x0)] +
                                     fx * raw[raw.offset2(y0, x1)]) +
                       fy * ((1.0 - fx) * raw[raw.offset2(y1, x0)] +
                             fx * raw[raw.offset2(y1, x1)]);
      up[up.offset2(i, j)] = float(v);
    }
  }

  float mn = up[0], mx = up[0];
  for (float v : up.data()) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  if (mx == mn) {
    // Flat map: all ones if positive, all zeros if identically zero.
    const float fill = mx > 0.0f ? 1.0f : 0.0f;
    std::fill(up.data().begin(), up.data().end(), fill);
    return up;
  }
  const float span = mx - mn;
  for (float& v : up.data()) v = (v - mn) / span;
  return up;
}

SaliencyMap grad_cam(const LayerCapture& cap, const ExplainContext& ctx) {
  check_capture(cap);
  const uint32_t K = cap.activations.dims()[0];
  const uint32_t HW = cap.activations.dims()[1] * cap.activations.dims()[2];
  std::vector<double> w(K, 0.0);
  for (uint32_t k = 0; k < K; ++k) {
    double acc = 0.0;
    for (uint32_t i = 0; i < HW; ++i) acc += double(cap.gradients[std::size_t(k) * HW + i]);
    w[k] = acc / double(HW);
  }
  return finish(weighted_channel_sum(cap.activations, w), "grad_cam", cap, ctx);
}

SaliencyMap grad_cam_pp(const LayerCapture& cap, const ExplainContext& ctx) {
  check_capture(cap);
  const uint32_t K = cap.activations.dims()[0];
  const uint32_t HW = cap.activations.dims()[1] * cap.activations.dims()[2];
  std::vector<double> w(K, 0.0);
  for (uint32_t k = 0; k < K; ++k) {
    double a_sum = 0.0;
    for (uint32_t i = 0; i < HW; ++i) a_sum += double(cap.activations[std::size_t(k) * HW + i]);
    double acc = 0.0;
    for (uint32_t i = 0; i < HW; ++i) {
      const double g = double(cap.gradients[std::size_t(k) * HW + i]);
      const double denom = 2.0 * g * g + a_sum * g * g * g;
      if (std::abs(denom) < 1e-12) continue;  // alpha -> 0 where ill-defined
      const double alpha = g * g / denom;
      acc += alpha * std::max(g, 0.0);
    }
    w[k] = acc;
  }
  return finish(weighted_channel_sum(cap.activations, w), "grad_cam_pp", cap, ctx);
}

SaliencyMap eigen_cam(const LayerCapture& cap, const ExplainContext& ctx) {
  check_capture(cap);
  const uint32_t K = cap.activations.dims()[0];
  const uint32_t H = cap.activations.dims()[1], W = cap.activations.dims()[2];
  const uint32_t HW = H * W;

  // M is (H*W) x K with M[p][k] = A[k][p]; power-iterate on G = M^T M (K x K).
  std::vector<double> gram(std::size_t(K) * K, 0.0);
  for (uint32_t k1 = 0; k1 < K; ++k1) {
    for (uint32_t k2 = k1; k2 < K; ++k2) {
      double acc = 0.0;
      for (uint32_t p = 0; p < HW; ++p) {
        acc += double(cap.activations[std::size_t(k1) * HW + p]) *
               double(cap.activations[std::size_t(k2) * HW + p]);
      }
      gram[std::size_t(k1) * K + k2] = acc;
      gram[std::size_t(k2) * K + k1] = acc;
    }
  }

  std::vector<double> v(K, 1.0 / std::sqrt(double(K)));
  std::vector<double> next(K, 0.0);
  for (int iter = 0; iter < 100; ++iter) {
    for (uint32_t i = 0; i < K; ++i) {
      double acc = 0.0;
      for (uint32_t j = 0; j < K; ++j) acc += gram[std::size_t(i) * K + j] * v[j];
      next[i] = acc;
    }
    double norm = 0.0;
    for (double x : next) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) break;  // zero activations: keep the start direction
    double delta = 0.0;
    for (uint32_t i = 0; i < K; ++i) {
      next[i] /= norm;
      delta += (next[i] - v[i]) * (next[i] - v[i]);
    }
    v = next;
    if (std::sqrt(delta) < 1e-9) break;
  }

  Tensor raw({H, W});
  double total = 0.0;
  for (uint32_t p = 0; p < HW; ++p) {
    double acc = 0.0;
    for (uint32_t k = 0; k < K; ++k) acc += double(cap.activations[std::size_t(k) * HW + p]) * v[k];
    raw[p] = float(acc);
    total += acc;
  }
  if (total < 0.0) {
    for (float& x : raw.data()) x = -x;
  }
  for (float& x : raw.data()) x = x > 0.0f ? x : 0.0f;
  return finish(std::move(raw), "eigen_cam", cap, ctx, /*class_free=*/true);
}

SaliencyMap layer_cam(const LayerCapture& cap, const ExplainContext& ctx) {
  check_capture(cap);
  const uint32_t K = cap.activations.dims()[0];
  const uint32_t H = cap.activations.dims()[1], W = cap.activations.dims()[2];
  const uint32_t HW = H * W;
  Tensor raw({H, W});
  for (uint32_t p = 0; p < HW; ++p) {
    double acc = 0.0;
    for (uint32_t k = 0; k < K; ++k) {
      const double g = double(cap.gradients[std::size_t(k) * HW + p]);
      if (g > 0.0) acc += g * double(cap.activations[std::size_t(k) * HW + p]);
    }
    raw[p] = acc > 0.0 ? float(acc) : 0.0f;
  }
  return finish(std::move(raw), "layer_cam", cap, ctx);
}

SaliencyMap xgrad_cam(const LayerCapture& cap, const ExplainContext& ctx) {
  check_capture(cap);
  const uint32_t K = cap.activations.dims()[0];
  const uint32_t HW = cap.activations.dims()[1] * cap.activations.dims()[2];
  std::vector<double> w(K, 0.0);
  for (uint32_t k = 0; k < K; ++k) {
    double a_sum = 0.0;
    for (uint32_t i = 0; i < HW; ++i) a_sum += double(cap.activations[std::size_t(k) * HW + i]);
    double acc = 0.0;
    for (uint32_t i = 0; i < HW; ++i) {
      acc += double(cap.activations[std::size_t(k) * HW + i]) / (a_sum + 1e-12) *
             double(cap.gradients[std::size_t(k) * HW + i]);
    }
    w[k] = acc;
  }
  return finish(weighted_channel_sum(cap.activations, w), "xgrad_cam", cap, ctx);
}

SaliencyMap explain(std::string_view method, const LayerCapture& cap, const ExplainContext& ctx) {
  if (method == "grad_cam") return grad_cam(cap, ctx);
  if (method == "grad_cam_pp") return grad_cam_pp(cap, ctx);
  if (method == "eigen_cam") return eigen_cam(cap, ctx);
  if (method == "layer_cam") return layer_cam(cap, ctx);
  if (method == "xgrad_cam") return xgrad_cam(cap, ctx);
  throw Error(errc::invalid_argument, "unknown CAM method: " + std::string(method), "methods");
}

}  // namespace xaiport
