#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "xaiport/error.hpp"
#include "xaiport/model.hpp"
#include "xaiport/rng.hpp"

using namespace xaiport;

namespace {

// Test-side double-precision forward from the target layer's post-ReLU
// activations to the pre-softmax score of one class. Independent of the
// library's backward path; used as the finite-difference oracle.
struct HeadOracle {
  const Model& model;
  std::size_t first_layer;  // index of the first layer after the capture point

  // relu_signs, when supplied, collects the sign pattern of every relu input
  // above the capture point; a perturbation that flips a sign crosses a kink,
  // where central differences are invalid.
  double score(const std::vector<double>& activations, const std::vector<uint32_t>& dims,
               uint32_t cls, std::vector<bool>* relu_signs = nullptr) const {
    std::vector<double> cur = activations;
    uint32_t C = dims[0], H = dims[1], W = dims[2];
    const auto& layers = model.spec().layers;
    for (std::size_t li = first_layer; li + 1 < layers.size(); ++li) {
      const auto& layer = layers[li];
      switch (layer.kind) {
        case LayerSpec::Kind::conv: {
          const auto& w = model.params()[li].weights;
          const auto& b = model.params()[li].bias;
          const uint32_t O = w.dims()[0];
          std::vector<double> out(std::size_t(O) * H * W, 0.0);
          for (uint32_t o = 0; o < O; ++o)
            for (uint32_t i = 0; i < H; ++i)
              for (uint32_t j = 0; j < W; ++j) {
                double acc = double(b[o]);
                for (uint32_t c = 0; c < C; ++c)
                  for (int di = -1; di <= 1; ++di)
                    for (int dj = -1; dj <= 1; ++dj) {
                      const int y = int(i) + di, x = int(j) + dj;
                      if (y < 0 || y >= int(H) || x < 0 || x >= int(W)) continue;
                      acc += double(w[((std::size_t(o) * C + c) * 3 + uint32_t(di + 1)) * 3 +
                                      uint32_t(dj + 1)]) *
                             cur[(std::size_t(c) * H + uint32_t(y)) * W + uint32_t(x)];
                    }
                out[(std::size_t(o) * H + i) * W + j] = acc;
              }
          cur = std::move(out);
          C = O;
          break;
        }
        case LayerSpec::Kind::relu:
          for (auto& v : cur) {
            if (relu_signs) relu_signs->push_back(v > 0.0);
            v = v > 0.0 ? v : 0.0;
          }
          break;
        case LayerSpec::Kind::gap: {
          std::vector<double> out(C, 0.0);
          for (uint32_t c = 0; c < C; ++c) {
            double acc = 0.0;
            for (uint32_t p = 0; p < H * W; ++p) acc += cur[std::size_t(c) * H * W + p];
            out[c] = acc / double(H * W);
          }
          cur = std::move(out);
          break;
        }
        case LayerSpec::Kind::dense: {
          const auto& w = model.params()[li].weights;
          const auto& b = model.params()[li].bias;
          const uint32_t M = w.dims()[0], K = w.dims()[1];
          std::vector<double> out(M, 0.0);
          for (uint32_t m = 0; m < M; ++m) {
            double acc = double(b[m]);
            for (uint32_t k = 0; k < K; ++k) acc += double(w[std::size_t(m) * K + k]) * cur[k];
            out[m] = acc;
          }
          cur = std::move(out);
          break;
        }
        case LayerSpec::Kind::softmax: break;
      }
    }
    return cur[cls];
  }
};

std::size_t relu_index_after_target(const ModelSpec& spec) {
  auto names = spec.conv_names();
  uint32_t seen = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (spec.layers[i].kind != LayerSpec::Kind::conv) continue;
    if (names[seen++] == spec.target_layer) return i + 1;
  }
  REQUIRE(false);
  return 0;
}

Tensor random_image(const ModelSpec& spec, uint64_t seed) {
  Rng rng(seed);
  Tensor x({spec.in_channels, spec.in_height, spec.in_width});
  for (auto& v : x.data()) v = rng.next_f32();
  return x;
}

// Checks every captured gradient entry against central finite differences of
// the double-precision head oracle. Entries whose perturbation flips a relu
// sign above the capture point are skipped; the check requires most entries
// to be eligible so it cannot pass vacuously.
void gradient_check(const ModelSpec& spec, uint64_t image_seed, uint32_t cls) {
  Model model = Model::init(spec);
  Tensor x = random_image(spec, image_seed);
  auto [scores, cap] = model.forward_capture(x, cls);

  const std::size_t relu_idx = relu_index_after_target(spec);
  HeadOracle oracle{model, relu_idx + 1};
  std::vector<double> act(cap.activations.data().begin(), cap.activations.data().end());
  const double h = 1e-3;
  std::size_t eligible = 0;
  for (std::size_t i = 0; i < act.size(); ++i) {
    std::vector<double> hi = act, lo = act;
    hi[i] += h;
    lo[i] -= h;
    std::vector<bool> signs_hi, signs_lo;
    const double f_hi = oracle.score(hi, cap.activations.dims(), cls, &signs_hi);
    const double f_lo = oracle.score(lo, cap.activations.dims(), cls, &signs_lo);
    if (signs_hi != signs_lo) continue;
    ++eligible;
    const double fd = (f_hi - f_lo) / (2.0 * h);
    const double g = double(cap.gradients[i]);
    const double tol = std::max(1e-5, 1e-3 * std::abs(fd));
    CHECK(std::abs(g - fd) <= tol);
  }
  CHECK(eligible * 2 >= act.size());
}

bool params_bitwise_equal(const Model& a, const Model& b) {
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    const auto& pa = a.params()[i];
    const auto& pb = b.params()[i];
    if (pa.weights.size() != pb.weights.size()) return false;
    for (std::size_t k = 0; k < pa.weights.size(); ++k) {
      if (pa.weights[k] != pb.weights[k]) return false;
    }
    if (pa.bias != pb.bias) return false;
  }
  return true;
}

double train_accuracy(const Model& model, const LabeledDataset& ds) {
  std::size_t hits = 0;
  for (const auto& s : ds.samples) {
    const auto scores = model.forward(s.image);
    uint32_t pred = 0;
    for (uint32_t i = 1; i < scores.size(); ++i) {
      if (scores[i] > scores[pred]) pred = i;
    }
    uint32_t truth = 0;
    for (uint32_t i = 1; i < s.label.size(); ++i) {
      if (s.label[i] > s.label[truth]) truth = i;
    }
    hits += pred == truth;
  }
  return double(hits) / double(ds.samples.size());
}

}  // namespace

TEST_CASE("init is deterministic, seed-sensitive, and range-bounded") {
  ModelSpec spec = ModelSpec::desk_scale(2, 42);
  Model a = Model::init(spec);
  Model b = Model::init(spec);
  CHECK(params_bitwise_equal(a, b));

  ModelSpec other = spec;
  other.seed = 43;
  CHECK_FALSE(params_bitwise_equal(a, Model::init(other)));

  // conv1 fan_in = 9 * in_channels.
  const float bound = std::sqrt(1.0f / 9.0f);
  for (float w : a.params()[0].weights.data()) {
    CHECK(w > -bound);
    CHECK(w < bound);
  }
  for (float bias : a.params()[0].bias) CHECK(bias == 0.0f);
}

TEST_CASE("invalid specs are rejected") {
  ModelSpec spec = ModelSpec::desk_scale();
  SUBCASE("softmax not last") {
    spec.layers.push_back(LayerSpec::dense(2));
    CHECK_THROWS_AS(Model::init(spec), Error);
  }
  SUBCASE("unknown target layer") {
    spec.target_layer = "conv9";
    CHECK_THROWS_AS(Model::init(spec), Error);
  }
  SUBCASE("target conv not followed by relu") {
    spec.layers = {LayerSpec::conv(4), LayerSpec::gap(), LayerSpec::dense(2), LayerSpec::softmax()};
    spec.target_layer = "conv1";
    CHECK_THROWS_AS(Model::init(spec), Error);
  }
}

TEST_CASE("softmax output sums to 1 within 1e-6") {
  ModelSpec spec = ModelSpec::desk_scale(3, 5);
  Model model = Model::init(spec);
  for (uint64_t s = 0; s < 10; ++s) {
    const auto scores = model.forward(random_image(spec, s));
    double sum = 0.0;
    for (float v : scores) sum += v;
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }
}

TEST_CASE("all-zero weights give uniform scores") {
  ModelSpec spec = ModelSpec::desk_scale(2, 0);
  Model model = Model::init(spec);
  for (auto& p : model.params()) {
    for (auto& w : p.weights.data()) w = 0.0f;
  }
  const auto scores = model.forward(random_image(spec, 1));
  CHECK(scores[0] == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(scores[1] == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("forward rejects bad input shape and class index") {
  ModelSpec spec = ModelSpec::desk_scale();
  Model model = Model::init(spec);
  CHECK_THROWS_AS(model.forward(Tensor({1, 8, 8})), Error);
  CHECK_THROWS_AS(model.forward_capture(random_image(spec, 0), 7), Error);
}

TEST_CASE("captured gradients match finite differences on a (1,8,8) 2-channel conv") {
  ModelSpec spec;
  spec.in_channels = 1;
  spec.in_height = 8;
  spec.in_width = 8;
  spec.layers = {LayerSpec::conv(2), LayerSpec::relu(), LayerSpec::gap(), LayerSpec::dense(2),
                 LayerSpec::softmax()};
  spec.target_layer = "conv1";
  spec.seed = 31;
  gradient_check(spec, 7, 0);
  gradient_check(spec, 8, 1);
}

TEST_CASE("gradient check holds when layers sit above the target") {
  ModelSpec spec;
  spec.in_channels = 2;
  spec.in_height = 6;
  spec.in_width = 6;
  spec.layers = {LayerSpec::conv(3), LayerSpec::relu(), LayerSpec::conv(4), LayerSpec::relu(),
                 LayerSpec::gap(),  LayerSpec::dense(3), LayerSpec::softmax()};
  spec.target_layer = "conv1";  // backprop must flow through conv2
  spec.seed = 77;
  gradient_check(spec, 9, 2);
}

TEST_CASE("synthetic bars dataset shape and masks") {
  LabeledDataset ds = make_synthetic_bars(21, 4);
  CHECK(ds.samples.size() == 21);
  CHECK(ds.class_count == 2);

  int c0 = 0, c1 = 0;
  for (const auto& s : ds.samples) {
    CHECK(s.image.dims() == std::vector<uint32_t>{1, 16, 16});
    (s.label[0] == 1.0f ? c0 : c1)++;
    for (float v : s.image.data()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
    float mask_sum = 0.0f;
    for (float v : s.mask.data()) mask_sum += v;
    CHECK(mask_sum == 64.0f);  // both bar shapes cover 64 of 256 pixels
  }
  CHECK(std::abs(c0 - c1) <= 1);
  CHECK(ds.channel_mean.size() == 1);
  CHECK(ds.channel_mean[0] > 0.0f);
  CHECK(ds.channel_mean[0] < 1.0f);

  // Same seed regenerates the same data.
  LabeledDataset again = make_synthetic_bars(21, 4);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    for (std::size_t p = 0; p < 256; ++p) {
      CHECK(ds.samples[i].image[p] == again.samples[i].image[p]);
    }
  }
  CHECK_THROWS_AS(make_synthetic_bars(1, 0), Error);
}

TEST_CASE("training: lr 0 is a bitwise no-op") {
  LabeledDataset ds = make_synthetic_bars(10, 3);
  ModelSpec spec = ModelSpec::desk_scale(2, 8);
  Model model = Model::init(spec);
  Model before = model;
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.learning_rate = 0.0f;
  cfg.seed = 1;
  train(model, ds, cfg);
  CHECK(params_bitwise_equal(model, before));
}

TEST_CASE("training is deterministic and learns the bars in 10 epochs") {
  LabeledDataset ds = make_synthetic_bars(100, 12);
  ModelSpec spec = ModelSpec::desk_scale(2, 0);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 8;
  cfg.learning_rate = 0.2f;
  cfg.seed = 5;

  Model m1 = Model::init(spec);
  auto h1 = train(m1, ds, cfg);
  Model m2 = Model::init(spec);
  auto h2 = train(m2, ds, cfg);
  CHECK(params_bitwise_equal(m1, m2));
  CHECK(h1 == h2);

  CHECK(train_accuracy(m1, ds) >= 0.95);

  CHECK_THROWS_AS(train(m1, LabeledDataset{}, cfg), Error);
}

TEST_CASE("loss is non-increasing in at least 8 of the first 10 epochs at lr 0.05") {
  LabeledDataset ds = make_synthetic_bars(100, 12);
  Model model = Model::init(ModelSpec::desk_scale(2, 8));
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 8;
  cfg.learning_rate = 0.05f;
  cfg.seed = 10;
  auto history = train(model, ds, cfg);
  int non_increasing = 0;
  for (std::size_t e = 1; e < history.size(); ++e) non_increasing += history[e] <= history[e - 1];
  CHECK(non_increasing >= 8);
}

TEST_CASE("checkpoint round trip preserves weights bitwise") {
  ModelSpec spec = ModelSpec::desk_scale(2, 99);
  Model model = Model::init(spec);
  const auto dir = std::filesystem::temp_directory_path() / "xaiport_ckpt_test";
  std::filesystem::remove_all(dir);
  save_checkpoint(model, dir);
  Model loaded = load_checkpoint(dir);
  CHECK(loaded.spec().target_layer == spec.target_layer);
  CHECK(params_bitwise_equal(model, loaded));
  std::filesystem::remove_all(dir);
}
