#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "xaiport/rng.hpp"
#include "xaiport/tensor.hpp"

namespace xaiport {

// Layer vocabulary: conv is always 3x3, zero padding 1, stride 1 (spatial
// dims preserved); gap is global average pooling; softmax must be last.
struct LayerSpec {
  enum class Kind { conv, relu, gap, dense, softmax };
  Kind kind;
  uint32_t units = 0;  // conv out-channels / dense out-features

  static LayerSpec conv(uint32_t out_channels) { return {Kind::conv, out_channels}; }
  static LayerSpec relu() { return {Kind::relu}; }
  static LayerSpec gap() { return {Kind::gap}; }
  static LayerSpec dense(uint32_t out_features) { return {Kind::dense, out_features}; }
  static LayerSpec softmax() { return {Kind::softmax}; }
};

struct ModelSpec {
  uint32_t in_channels = 1;
  uint32_t in_height = 16;
  uint32_t in_width = 16;
  std::vector<LayerSpec> layers;
  std::string target_layer;  // conv name ("conv1", "conv2", ...); capture is its post-ReLU output
  uint64_t seed = 0;

  // conv(8) relu conv(8) relu gap dense(classes) softmax, target = conv2.
  static ModelSpec desk_scale(uint32_t classes = 2, uint64_t seed = 0);

  void validate() const;
  uint32_t class_count() const;
  std::vector<std::string> conv_names() const;  // "conv1", "conv2", ... in layer order
};

// Activations A (K,H,W) at the target layer (post-ReLU) and the gradient of
// the pre-softmax class score with respect to them, same dims.
struct LayerCapture {
  Tensor activations;
  Tensor gradients;
  uint32_t class_index = 0;
};

struct LabeledSample {
  std::string id;
  Tensor image;              // (C,H,W)
  std::vector<float> label;  // probability vector (one-hot or mixed)
  Tensor mask;               // ground-truth salient region (H,W) in {0,1}; may be empty
};

struct LabeledDataset {
  std::vector<LabeledSample> samples;
  uint32_t class_count = 0;
  std::vector<float> channel_mean;  // per input channel, over all samples and pixels

  void compute_channel_mean();
};

struct TrainConfig {
  uint32_t epochs = 10;
  uint32_t batch_size = 8;
  float learning_rate = 0.05f;
  uint64_t seed = 0;
  enum class Augment { none, cutmix, saliency_mix } augmentation = Augment::none;
  float mix_probability = 0.5f;

  void validate() const;
};

struct MixedSample {
  Tensor image;
  std::vector<float> label;
};

class Model;

// Supplied by the pipeline layer; invoked on a batch sample (a) and a
// partner (b) when the per-sample mix draw fires. Sees the current model so
// saliency-guided mixing can explain the partner mid-training.
using Mixer = std::function<MixedSample(const Model& current, const LabeledSample& a,
                                        const LabeledSample& b, Rng& rng)>;

class Model {
public:
  struct Params {
    Tensor weights;           // conv: (out,in,3,3); dense: (out,in)
    std::vector<float> bias;  // length out
  };

  static Model init(const ModelSpec& spec);

  const ModelSpec& spec() const { return spec_; }

  // Softmax class probabilities for one input (C,H,W).
  std::vector<float> forward(const Tensor& x) const;

  // Probabilities plus the target-layer capture for class c; the gradient is
  // of the pre-softmax score, by reverse-mode accumulation.
  std::pair<std::vector<float>, LayerCapture> forward_capture(const Tensor& x, uint32_t c) const;

  // Parameters indexed by layer position (empty for parameterless layers);
  // exposed for checkpoints and gradient tests.
  const std::vector<Params>& params() const { return params_; }
  std::vector<Params>& params() { return params_; }

private:
  friend std::vector<double> train(Model&, const LabeledDataset&, const TrainConfig&, const Mixer*);
  explicit Model(ModelSpec spec) : spec_(std::move(spec)) {}

  ModelSpec spec_;
  std::vector<Params> params_;
};

// Plain SGD on cross-entropy with soft labels; mutates the model in place and
// returns the per-epoch mean loss. Deterministic for fixed (dataset, cfg,
// model seed); the mixer fires per batch sample with cfg.mix_probability.
std::vector<double> train(Model& model, const LabeledDataset& dataset, const TrainConfig& cfg,
                          const Mixer* mixer = nullptr);

// n grayscale (1,16,16) images: even indices carry a horizontal 4x16 bar in
// the top quadrant (class 0), odd a vertical 16x4 bar in the left quadrant
// (class 1). Background noise in [0,0.2], bar intensity in [0.8,1.0]; the
// bar region is stored as the per-sample mask.
LabeledDataset make_synthetic_bars(uint32_t n, uint64_t seed);

// Checkpoint directory: manifest.json (layer order, dims, seed, target layer)
// plus one XTEN file per parameter tensor.
void save_checkpoint(const Model& model, const std::filesystem::path& dir);
Model load_checkpoint(const std::filesystem::path& dir);

}  // namespace xaiport
