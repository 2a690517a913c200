#include "xaiport/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "xaiport/error.hpp"
#include "xaiport/tensor_io.hpp"

namespace xaiport {

namespace {

using Kind = LayerSpec::Kind;

const char* kind_name(Kind k) {
  switch (k) {
    case Kind::conv: return "conv";
    case Kind::relu: return "relu";
    case Kind::gap: return "gap";
    case Kind::dense: return "dense";
    case Kind::softmax: return "softmax";
  }
  return "?";
}

Kind kind_from_name(const std::string& s) {
  if (s == "conv") return Kind::conv;
  if (s == "relu") return Kind::relu;
  if (s == "gap") return Kind::gap;
  if (s == "dense") return Kind::dense;
  if (s == "softmax") return Kind::softmax;
  throw Error(errc::invalid_spec, "unknown layer kind: " + s);
}

Tensor conv_forward(const Tensor& in, const Tensor& w, const std::vector<float>& b) {
  const uint32_t C = in.dims()[0], H = in.dims()[1], W = in.dims()[2];
  const uint32_t O = w.dims()[0];
  Tensor out({O, H, W});
  for (uint32_t o = 0; o < O; ++o) {
    for (uint32_t i = 0; i < H; ++i) {
      for (uint32_t j = 0; j < W; ++j) {
        float acc = b[o];
        for (uint32_t c = 0; c < C; ++c) {
          for (int di = -1; di <= 1; ++di) {
            const int y = int(i) + di;
            if (y < 0 || y >= int(H)) continue;
            for (int dj = -1; dj <= 1; ++dj) {
              const int x = int(j) + dj;
              if (x < 0 || x >= int(W)) continue;
              acc += w[((std::size_t(o) * C + c) * 3 + uint32_t(di + 1)) * 3 + uint32_t(dj + 1)] *
                     in[(std::size_t(c) * H + uint32_t(y)) * W + uint32_t(x)];
            }
          }
        }
        out[(std::size_t(o) * H + i) * W + j] = acc;
      }
    }
  }
  return out;
}

// Gradients w.r.t. input, weights and bias for the 3x3/pad-1 convolution.
void conv_backward(const Tensor& in, const Tensor& w, const Tensor& d_out, Tensor& d_in,
                   Tensor& d_w, std::vector<float>& d_b) {
  const uint32_t C = in.dims()[0], H = in.dims()[1], W = in.dims()[2];
  const uint32_t O = w.dims()[0];
  d_in = Tensor({C, H, W});
  d_w = Tensor(w.dims());
  d_b.assign(O, 0.0f);
  for (uint32_t o = 0; o < O; ++o) {
    double bias_acc = 0.0;
    for (uint32_t i = 0; i < H; ++i) {
      for (uint32_t j = 0; j < W; ++j) {
        const float g = d_out[(std::size_t(o) * H + i) * W + j];
        bias_acc += double(g);
        if (g == 0.0f) continue;
        for (uint32_t c = 0; c < C; ++c) {
          for (int di = -1; di <= 1; ++di) {
            const int y = int(i) + di;
            if (y < 0 || y >= int(H)) continue;
            for (int dj = -1; dj <= 1; ++dj) {
              const int x = int(j) + dj;
              if (x < 0 || x >= int(W)) continue;
              const std::size_t w_idx =
                  ((std::size_t(o) * C + c) * 3 + uint32_t(di + 1)) * 3 + uint32_t(dj + 1);
              const std::size_t in_idx = (std::size_t(c) * H + uint32_t(y)) * W + uint32_t(x);
              d_in[in_idx] += w[w_idx] * g;
              d_w[w_idx] += in[in_idx] * g;
            }
          }
        }
      }
    }
    d_b[o] = float(bias_acc);
  }
}

Tensor gap_forward(const Tensor& in) {
  const uint32_t K = in.dims()[0], H = in.dims()[1], W = in.dims()[2];
  Tensor out({K});
  const double inv = 1.0 / (double(H) * double(W));
  for (uint32_t k = 0; k < K; ++k) {
    double acc = 0.0;
    for (uint32_t i = 0; i < H * W; ++i) acc += double(in[std::size_t(k) * H * W + i]);
    out[k] = float(acc * inv);
  }
  return out;
}

Tensor gap_backward(const Tensor& d_out, uint32_t K, uint32_t H, uint32_t W) {
  Tensor d_in({K, H, W});
  const float inv = 1.0f / float(H * W);
  for (uint32_t k = 0; k < K; ++k) {
    const float g = d_out[k] * inv;
    for (uint32_t i = 0; i < H * W; ++i) d_in[std::size_t(k) * H * W + i] = g;
  }
  return d_in;
}

Tensor dense_forward(const Tensor& in, const Tensor& w, const std::vector<float>& b) {
  const uint32_t M = w.dims()[0], K = w.dims()[1];
  Tensor out({M});
  for (uint32_t m = 0; m < M; ++m) {
    double acc = double(b[m]);
    for (uint32_t k = 0; k < K; ++k) acc += double(w[std::size_t(m) * K + k]) * double(in[k]);
    out[m] = float(acc);
  }
  return out;
}

void dense_backward(const Tensor& in, const Tensor& w, const Tensor& d_out, Tensor& d_in,
                    Tensor& d_w, std::vector<float>& d_b) {
  const uint32_t M = w.dims()[0], K = w.dims()[1];
  d_in = Tensor({K});
  d_w = Tensor(w.dims());
  d_b.assign(M, 0.0f);
  for (uint32_t k = 0; k < K; ++k) {
    double acc = 0.0;
    for (uint32_t m = 0; m < M; ++m) acc += double(w[std::size_t(m) * K + k]) * double(d_out[m]);
    d_in[k] = float(acc);
  }
  for (uint32_t m = 0; m < M; ++m) {
    d_b[m] = d_out[m];
    for (uint32_t k = 0; k < K; ++k) d_w[std::size_t(m) * K + k] = d_out[m] * in[k];
  }
}

Tensor softmax_forward(const Tensor& in) {
  double mx = -1e300;
  for (float v : in.data()) mx = std::max(mx, double(v));
  double sum = 0.0;
  std::vector<double> e(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    e[i] = std::exp(double(in[i]) - mx);
    sum += e[i];
  }
  Tensor out({uint32_t(in.size())});
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = float(e[i] / sum);
  return out;
}

struct ForwardTrace {
  std::vector<Tensor> outputs;  // one per layer
};

struct BackwardResult {
  std::vector<Tensor> output_grads;       // grad w.r.t. each layer's output
  std::vector<Model::Params> param_grads;  // aligned with params(); empty tensors where none
};

}  // namespace

ModelSpec ModelSpec::desk_scale(uint32_t classes, uint64_t seed) {
  ModelSpec s;
  s.in_channels = 1;
  s.in_height = 16;
  s.in_width = 16;
  s.layers = {LayerSpec::conv(8), LayerSpec::relu(), LayerSpec::conv(8), LayerSpec::relu(),
              LayerSpec::gap(),  LayerSpec::dense(classes), LayerSpec::softmax()};
  s.target_layer = "conv2";
  s.seed = seed;
  return s;
}

std::vector<std::string> ModelSpec::conv_names() const {
  std::vector<std::string> names;
  uint32_t n = 0;
  for (const auto& l : layers) {
    if (l.kind == Kind::conv) names.push_back("conv" + std::to_string(++n));
  }
  return names;
}

void ModelSpec::validate() const {
  if (in_channels == 0 || in_height == 0 || in_width == 0)
    throw Error(errc::invalid_spec, "input dims must be positive");
  if (layers.empty()) throw Error(errc::invalid_spec, "layer list is empty");

  uint32_t softmax_count = 0, gap_count = 0, dense_count = 0;
  for (const auto& l : layers) {
    if (l.kind == Kind::softmax) ++softmax_count;
    if (l.kind == Kind::gap) ++gap_count;
    if (l.kind == Kind::dense) ++dense_count;
  }
  if (softmax_count != 1 || layers.back().kind != Kind::softmax)
    throw Error(errc::invalid_spec, "exactly one softmax is required, in last position");
  if (gap_count != 1) throw Error(errc::invalid_spec, "exactly one gap layer is required");
  if (dense_count == 0) throw Error(errc::invalid_spec, "at least one dense layer is required");

  // conv/relu operate on 3-D maps, dense on vectors; gap is the boundary.
  bool past_gap = false;
  for (const auto& l : layers) {
    if (l.kind == Kind::gap) past_gap = true;
    if ((l.kind == Kind::conv) && past_gap)
      throw Error(errc::invalid_spec, "conv layers must precede gap");
    if (l.kind == Kind::dense && !past_gap)
      throw Error(errc::invalid_spec, "dense layers must follow gap");
    if ((l.kind == Kind::conv || l.kind == Kind::dense) && l.units == 0)
      throw Error(errc::invalid_spec, "layer units must be positive");
  }

  auto names = conv_names();
  uint32_t conv_seen = 0;
  bool target_ok = false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].kind != Kind::conv) continue;
    if (names[conv_seen++] == target_layer) {
      target_ok = i + 1 < layers.size() && layers[i + 1].kind == Kind::relu;
      break;
    }
  }
  if (!target_ok)
    throw Error(errc::invalid_spec,
                "target layer must name a conv layer followed by relu, got '" + target_layer + "'");
}

uint32_t ModelSpec::class_count() const {
  for (auto it = layers.rbegin(); it != layers.rend(); ++it)
    if (it->kind == Kind::dense) return it->units;
  return 0;
}

Model Model::init(const ModelSpec& spec) {
  spec.validate();
  Model m(spec);
  Rng rng(spec.seed);
  uint32_t channels = spec.in_channels;
  uint32_t features = 0;
  for (const auto& l : spec.layers) {
    Params p;
    switch (l.kind) {
      case Kind::conv: {
        const uint32_t fan_in = channels * 9;
        const float bound = std::sqrt(1.0f / float(fan_in));
        p.weights = Tensor({l.units, channels, 3, 3});
        for (auto& w : p.weights.data()) w = (2.0f * rng.next_f32() - 1.0f) * bound;
        p.bias.assign(l.units, 0.0f);
        channels = l.units;
        break;
      }
      case Kind::gap:
        features = channels;
        break;
      case Kind::dense: {
        const uint32_t fan_in = features;
        const float bound = std::sqrt(1.0f / float(fan_in));
        p.weights = Tensor({l.units, features});
        for (auto& w : p.weights.data()) w = (2.0f * rng.next_f32() - 1.0f) * bound;
        p.bias.assign(l.units, 0.0f);
        features = l.units;
        break;
      }
      default: break;
    }
    m.params_.push_back(std::move(p));
  }
  return m;
}

namespace {

void check_input_dims(const ModelSpec& spec, const Tensor& x) {
  const std::vector<uint32_t> want = {spec.in_channels, spec.in_height, spec.in_width};
  if (x.dims() != want) {
    Tensor probe(want);
    throw Error(errc::shape_mismatch,
                "input dims " + x.dims_string() + " do not match model input " + probe.dims_string());
  }
}

ForwardTrace run_forward(const Model& m, const Tensor& x) {
  ForwardTrace t;
  const auto& layers = m.spec().layers;
  const Tensor* cur = &x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    switch (layers[i].kind) {
      case Kind::conv:
        t.outputs.push_back(conv_forward(*cur, m.params()[i].weights, m.params()[i].bias));
        break;
      case Kind::relu: t.outputs.push_back(relu(*cur)); break;
      case Kind::gap: t.outputs.push_back(gap_forward(*cur)); break;
      case Kind::dense:
        t.outputs.push_back(dense_forward(*cur, m.params()[i].weights, m.params()[i].bias));
        break;
      case Kind::softmax: t.outputs.push_back(softmax_forward(*cur)); break;
    }
    cur = &t.outputs.back();
  }
  return t;
}

// Reverse-mode sweep from a gradient on the pre-softmax scores, visiting
// layers score..lowest_layer inclusive (0 = full sweep). Weight gradients are
// filled for every layer visited.
BackwardResult run_backward(const Model& m, const Tensor& x, const ForwardTrace& t,
                            const Tensor& score_grad, std::size_t lowest_layer) {
  const auto& layers = m.spec().layers;
  const std::size_t L = layers.size();
  BackwardResult r;
  r.output_grads.resize(L);
  r.param_grads.resize(L);

  // Scores = output of the layer feeding softmax.
  const std::size_t score_layer = L - 2;
  r.output_grads[score_layer] = score_grad;

  for (std::ptrdiff_t i = std::ptrdiff_t(score_layer); i >= std::ptrdiff_t(lowest_layer); --i) {
    const Tensor& in = (i == 0) ? x : t.outputs[i - 1];
    const Tensor& d_out = r.output_grads[i];
    Tensor d_in;
    switch (layers[i].kind) {
      case Kind::conv:
        conv_backward(in, m.params()[i].weights, d_out, d_in, r.param_grads[i].weights,
                      r.param_grads[i].bias);
        break;
      case Kind::relu: {
        d_in = Tensor(in.dims());
        for (std::size_t n = 0; n < in.size(); ++n) d_in[n] = in[n] > 0.0f ? d_out[n] : 0.0f;
        break;
      }
      case Kind::gap:
        d_in = gap_backward(d_out, in.dims()[0], in.dims()[1], in.dims()[2]);
        break;
      case Kind::dense:
        dense_backward(in, m.params()[i].weights, d_out, d_in, r.param_grads[i].weights,
                       r.param_grads[i].bias);
        break;
      case Kind::softmax: break;  // never visited
    }
    if (i > 0) r.output_grads[i - 1] = std::move(d_in);
  }
  return r;
}

// Index of the relu following the target conv (the capture point).
std::size_t target_relu_index(const ModelSpec& spec) {
  auto names = spec.conv_names();
  uint32_t conv_seen = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (spec.layers[i].kind != Kind::conv) continue;
    if (names[conv_seen++] == spec.target_layer) return i + 1;
  }
  throw Error(errc::invalid_spec, "target layer not found: " + spec.target_layer);
}

}  // namespace

std::vector<float> Model::forward(const Tensor& x) const {
  check_input_dims(spec_, x);
  auto t = run_forward(*this, x);
  const auto& probs = t.outputs.back();
  return {probs.data().begin(), probs.data().end()};
}

std::pair<std::vector<float>, LayerCapture> Model::forward_capture(const Tensor& x,
                                                                   uint32_t c) const {
  check_input_dims(spec_, x);
  const uint32_t classes = spec_.class_count();
  if (c >= classes) {
    throw Error(errc::class_out_of_range,
                "class " + std::to_string(c) + " out of range (" + std::to_string(classes) + ")");
  }
  auto trace = run_forward(*this, x);

  Tensor seed({classes});
  seed[c] = 1.0f;
  const std::size_t relu_idx = target_relu_index(spec_);
  // Gradients w.r.t. the relu output appear once the layer above it is
  // processed; the sweep can stop there.
  auto back = run_backward(*this, x, trace, seed, relu_idx + 1);

  LayerCapture cap;
  cap.activations = trace.outputs[relu_idx];
  cap.gradients = std::move(back.output_grads[relu_idx]);
  cap.class_index = c;

  const auto& probs = trace.outputs.back();
  return {{probs.data().begin(), probs.data().end()}, std::move(cap)};
}

void TrainConfig::validate() const {
  if (epochs < 1) throw Error(errc::invalid_spec, "epochs must be >= 1", "epochs");
  // lr == 0 is accepted as an explicit no-op training run.
  if (!(learning_rate >= 0.0f))
    throw Error(errc::invalid_spec, "learning rate must be >= 0", "learning_rate");
  if (!(mix_probability >= 0.0f && mix_probability <= 1.0f))
    throw Error(errc::invalid_spec, "mix probability must be in [0,1]", "mix_probability");
}

std::vector<double> train(Model& model, const LabeledDataset& dataset, const TrainConfig& cfg,
                          const Mixer* mixer) {
  cfg.validate();
  if (dataset.samples.empty()) throw Error(errc::empty_dataset, "dataset is empty");

  const std::size_t n = dataset.samples.size();
  const std::size_t batch = std::max<std::size_t>(1, cfg.batch_size);
  Rng shuffle_rng = Rng(cfg.seed).split(1);
  Rng mix_rng = Rng(cfg.seed).split(2);

  const auto& layers = model.spec().layers;
  std::vector<double> history;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = shuffle_rng.next_below(uint32_t(i));
      std::swap(order[i - 1], order[j]);
    }

    double epoch_loss = 0.0;
    for (std::size_t b0 = 0; b0 < n; b0 += batch) {
      const std::size_t bn = std::min(batch, n - b0);

      std::vector<Model::Params> grad_sum(layers.size());
      for (std::size_t i = 0; i < layers.size(); ++i) {
        if (model.params()[i].weights.empty()) continue;
        grad_sum[i].weights = Tensor(model.params()[i].weights.dims());
        grad_sum[i].bias.assign(model.params()[i].bias.size(), 0.0f);
      }

      for (std::size_t s = 0; s < bn; ++s) {
        const LabeledSample& sample = dataset.samples[order[b0 + s]];
        const Tensor* image = &sample.image;
        const std::vector<float>* label = &sample.label;
        MixedSample mixed;
        if (mixer && mix_rng.next_f32() < cfg.mix_probability) {
          const LabeledSample& partner = dataset.samples[mix_rng.next_below(uint32_t(n))];
          mixed = (*mixer)(model, sample, partner, mix_rng);
          image = &mixed.image;
          label = &mixed.label;
        }

        auto trace = run_forward(model, *image);
        const Tensor& probs = trace.outputs.back();
        double loss = 0.0;
        Tensor score_grad({uint32_t(probs.size())});
        for (std::size_t k = 0; k < probs.size(); ++k) {
          loss -= double((*label)[k]) * std::log(std::max(double(probs[k]), 1e-12));
          score_grad[k] = probs[k] - (*label)[k];  // softmax + cross-entropy
        }
        epoch_loss += loss;

        auto back = run_backward(model, *image, trace, score_grad, 0);
        for (std::size_t i = 0; i < layers.size(); ++i) {
          if (grad_sum[i].weights.empty()) continue;
          auto gw = grad_sum[i].weights.data();
          auto pw = back.param_grads[i].weights.data();
          for (std::size_t k = 0; k < gw.size(); ++k) gw[k] += pw[k];
          for (std::size_t k = 0; k < grad_sum[i].bias.size(); ++k)
            grad_sum[i].bias[k] += back.param_grads[i].bias[k];
        }
      }

      const float step = cfg.learning_rate / float(bn);
      for (std::size_t i = 0; i < layers.size(); ++i) {
        if (grad_sum[i].weights.empty()) continue;
        auto w = model.params()[i].weights.data();
        auto g = grad_sum[i].weights.data();
        for (std::size_t k = 0; k < w.size(); ++k) w[k] -= step * g[k];
        for (std::size_t k = 0; k < grad_sum[i].bias.size(); ++k)
          model.params()[i].bias[k] -= step * grad_sum[i].bias[k];
      }
    }
    history.push_back(epoch_loss / double(n));
  }
  return history;
}

void LabeledDataset::compute_channel_mean() {
  if (samples.empty()) {
    channel_mean.clear();
    return;
  }
  const uint32_t channels = samples.front().image.dims()[0];
  std::vector<double> acc(channels, 0.0);
  std::size_t per_channel = 0;
  for (const auto& s : samples) {
    const uint32_t H = s.image.dims()[1], W = s.image.dims()[2];
    per_channel += std::size_t(H) * W;
    for (uint32_t c = 0; c < channels; ++c) {
      for (uint32_t i = 0; i < H * W; ++i) acc[c] += double(s.image[std::size_t(c) * H * W + i]);
    }
  }
  channel_mean.resize(channels);
  for (uint32_t c = 0; c < channels; ++c) channel_mean[c] = float(acc[c] / double(per_channel));
}

LabeledDataset make_synthetic_bars(uint32_t n, uint64_t seed) {
  if (n < 2) throw Error(errc::invalid_argument, "need at least 2 samples");
  constexpr uint32_t H = 16, W = 16, BAR = 4;
  LabeledDataset ds;
  ds.class_count = 2;
  ds.samples.reserve(n);
  for (uint32_t idx = 0; idx < n; ++idx) {
    Rng rng = Rng(seed).split(idx);
    const uint32_t cls = idx % 2;
    Tensor image({1, H, W});
    Tensor mask({H, W});
    for (uint32_t i = 0; i < H; ++i) {
      for (uint32_t j = 0; j < W; ++j) {
        const bool in_bar = cls == 0 ? (i < BAR) : (j < BAR);
        const float u = rng.next_f32();
        image[std::size_t(i) * W + j] = in_bar ? 0.8f + 0.2f * u : 0.2f * u;
        mask[std::size_t(i) * W + j] = in_bar ? 1.0f : 0.0f;
      }
    }
    LabeledSample s;
    char buf[16];
    std::snprintf(buf, sizeof buf, "s%04u", idx);
    s.id = buf;
    s.image = std::move(image);
    s.label = cls == 0 ? std::vector<float>{1.0f, 0.0f} : std::vector<float>{0.0f, 1.0f};
    s.mask = std::move(mask);
    ds.samples.push_back(std::move(s));
  }
  ds.compute_channel_mean();
  return ds;
}

void save_checkpoint(const Model& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto& spec = model.spec();
  nlohmann::json manifest;
  manifest["format"] = "xaiport-checkpoint-v1";
  manifest["input"] = {{"channels", spec.in_channels}, {"height", spec.in_height},
                       {"width", spec.in_width}};
  manifest["seed"] = spec.seed;
  manifest["target_layer"] = spec.target_layer;
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    nlohmann::json l;
    l["kind"] = kind_name(spec.layers[i].kind);
    if (spec.layers[i].units) l["units"] = spec.layers[i].units;
    if (!model.params()[i].weights.empty()) {
      const std::string stem = "layer" + std::to_string(i);
      save_xten(dir / (stem + "_weights.xten"), model.params()[i].weights);
      save_xten(dir / (stem + "_bias.xten"),
                Tensor({uint32_t(model.params()[i].bias.size())},
                       std::vector<float>(model.params()[i].bias)));
      l["weights"] = stem + "_weights.xten";
      l["bias"] = stem + "_bias.xten";
    }
    layers.push_back(std::move(l));
  }
  manifest["layers"] = std::move(layers);
  std::ofstream f(dir / "manifest.json", std::ios::trunc);
  if (!f) throw Error(errc::storage_io, "cannot write checkpoint manifest in " + dir.string());
  f << manifest.dump(2) << '\n';
}

Model load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream f(dir / "manifest.json");
  if (!f) throw Error(errc::storage_io, "cannot read checkpoint manifest in " + dir.string());
  nlohmann::json manifest = nlohmann::json::parse(f, nullptr, true);

  ModelSpec spec;
  spec.in_channels = manifest.at("input").at("channels").get<uint32_t>();
  spec.in_height = manifest.at("input").at("height").get<uint32_t>();
  spec.in_width = manifest.at("input").at("width").get<uint32_t>();
  spec.seed = manifest.at("seed").get<uint64_t>();
  spec.target_layer = manifest.at("target_layer").get<std::string>();
  for (const auto& l : manifest.at("layers")) {
    LayerSpec ls{kind_from_name(l.at("kind").get<std::string>()),
                 l.contains("units") ? l.at("units").get<uint32_t>() : 0};
    spec.layers.push_back(ls);
  }

  Model model = Model::init(spec);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = manifest.at("layers").at(i);
    if (!l.contains("weights")) continue;
    model.params()[i].weights = load_xten(dir / l.at("weights").get<std::string>());
    Tensor bias = load_xten(dir / l.at("bias").get<std::string>());
    model.params()[i].bias.assign(bias.data().begin(), bias.data().end());
  }
  return model;
}

}  // namespace xaiport
