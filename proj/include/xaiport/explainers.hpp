#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "xaiport/model.hpp"
#include "xaiport/tensor.hpp"

namespace xaiport {

// 2-D map at input resolution, min-max normalized to [0,1], with provenance.
struct SaliencyMap {
  Tensor values;  // (H_in, W_in)
  std::string method;
  std::string sample_id;
  std::optional<uint32_t> class_index;  // absent for eigen_cam
  std::string target_layer;
};

// Output resolution plus the provenance fields stamped onto the map.
struct ExplainContext {
  uint32_t out_height = 0;
  uint32_t out_width = 0;
  std::string sample_id;
  std::string target_layer;
};

// Canonical method order used by reports and manifests.
inline constexpr std::array<std::string_view, 5> kCamMethods = {
    "grad_cam", "grad_cam_pp", "eigen_cam", "layer_cam", "xgrad_cam"};

bool is_cam_method(std::string_view name);

// Channel weights = spatial mean of the gradient; map = relu(sum_k w_k A^k).
SaliencyMap grad_cam(const LayerCapture& cap, const ExplainContext& ctx);

// Closed-form second-order weighting under the exponential-score assumption:
// alpha_ij = g_ij^2 / (2 g_ij^2 + sum(A) g_ij^3), w = sum(alpha * relu(g)).
SaliencyMap grad_cam_pp(const LayerCapture& cap, const ExplainContext& ctx);

// Class-free: projects the activation stack onto its first right singular
// vector (power iteration from the all-ones direction, sign fixed so the raw
// map sums >= 0).
SaliencyMap eigen_cam(const LayerCapture& cap, const ExplainContext& ctx);

// map = relu(sum_k relu(G^k) * A^k), elementwise spatial weighting.
SaliencyMap layer_cam(const LayerCapture& cap, const ExplainContext& ctx);

// Weights gradients by activations normalized to their channel sum:
// w_k = sum_ij A_ij / (sum A + 1e-12) * G_ij.
SaliencyMap xgrad_cam(const LayerCapture& cap, const ExplainContext& ctx);

// Dispatch by method tag.
SaliencyMap explain(std::string_view method, const LayerCapture& cap, const ExplainContext& ctx);

// Bilinear upsample with corner alignment, then min-max normalize; a flat
// positive map becomes all ones, an identically-zero map stays zero.
Tensor upsample_normalize(const Tensor& raw, uint32_t out_height, uint32_t out_width);

}  // namespace xaiport
