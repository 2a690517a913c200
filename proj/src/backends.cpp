#include "xaiport/backends.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <semaphore>
#include <thread>

#include "httplib.h"
#include "xaiport/error.hpp"
#include "xaiport/tensor_io.hpp"

namespace xaiport {

namespace {

constexpr char kB64Alphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
constexpr auto kRetryBackoff = std::chrono::milliseconds(100);

void validate_scores(const std::vector<float>& scores, const std::string& backend_id) {
  if (scores.empty()) throw Error(errc::protocol_malformed, backend_id + ": empty score vector");
  double sum = 0.0;
  for (float s : scores) {
    if (!(s >= 0.0f && s <= 1.0f)) {
      throw Error(errc::protocol_malformed, backend_id + ": score out of [0,1]");
    }
    sum += double(s);
  }
  if (std::abs(sum - 1.0) > 1e-4) {
    throw Error(errc::protocol_malformed,
                backend_id + ": scores sum to " + std::to_string(sum) + ", expected 1");
  }
}

class LocalBackend final : public Backend {
public:
  LocalBackend(BackendRef ref, const Model* model) : Backend(std::move(ref)), model_(model) {}

protected:
  std::vector<float> score_attempt(const Tensor& image, const std::string&) const override {
    return model_->forward(image);
  }

private:
  const Model* model_;
};

class MockBackend final : public Backend {
public:
  explicit MockBackend(BackendRef ref) : Backend(std::move(ref)), rules_(this->ref().mock) {}

protected:
  std::vector<float> score_attempt(const Tensor& image, const std::string&) const override {
    const uint64_t call = ++calls_;
    if (rules_->latency_ms > 0.0) {
      std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(rules_->latency_ms));
    }
    if (rules_->failure_every_n > 0 && call % rules_->failure_every_n == 0) {
      throw Error(errc::protocol_malformed,
                  ref().id + ": injected failure on call " + std::to_string(call));
    }
    if (rules_->fixed) return *rules_->fixed;

    const auto& weights = *rules_->linear_weights;
    std::vector<double> z(weights.size());
    for (std::size_t c = 0; c < weights.size(); ++c) {
      if (!weights[c].same_dims(image)) {
        throw Error(errc::shape_mismatch, ref().id + ": weight dims " + weights[c].dims_string() +
                                              " do not match image " + image.dims_string());
      }
      double acc = 0.0;
      for (std::size_t i = 0; i < image.size(); ++i) acc += double(weights[c][i]) * double(image[i]);
      z[c] = acc;
    }
    double mx = z[0];
    for (double v : z) mx = std::max(mx, v);
    double sum = 0.0;
    for (double& v : z) {
      v = std::exp(v - mx);
      sum += v;
    }
    std::vector<float> scores(z.size());
    for (std::size_t c = 0; c < z.size(); ++c) scores[c] = float(z[c] / sum);
    return scores;
  }

private:
  std::shared_ptr<const MockRules> rules_;
  mutable std::atomic<uint64_t> calls_{0};
};

class HttpBackend final : public Backend {
public:
  explicit HttpBackend(BackendRef ref)
      : Backend(std::move(ref)), in_flight_(this->ref().max_in_flight) {}

protected:
  std::vector<float> score_attempt(const Tensor& image, const std::string& sample_id) const override {
    in_flight_.acquire();
    struct Release {
      std::counting_semaphore<256>& sem;
      ~Release() { sem.release(); }
    } release{in_flight_};

    httplib::Client client(ref().endpoint);
    const auto timeout = std::chrono::milliseconds(ref().timeout_ms);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);

    const std::string body = score_request_json(image, sample_id).dump();
    auto res = client.Post("/v1/score", body, "application/json");
    if (!res) {
      throw Error(errc::timeout_exceeded, ref().id + ": no response from " + ref().endpoint);
    }
    if (res->status != 200) {
      throw Error(errc::protocol_malformed,
                  ref().id + ": HTTP " + std::to_string(res->status) + ": " + res->body);
    }
    nlohmann::json parsed;
    try {
      parsed = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw Error(errc::protocol_malformed, ref().id + ": response is not JSON: " + e.what());
    }
    return scores_from_response(parsed);
  }

private:
  mutable std::counting_semaphore<256> in_flight_;
};

}  // namespace

void BackendRef::validate() const {
  if (id.empty()) throw Error(errc::config_invalid, "backend id must be nonempty", "backends.id");
  if (timeout_ms == 0)
    throw Error(errc::config_invalid, "timeout must be > 0", "backends.timeout_ms");
  if (labels.empty())
    throw Error(errc::config_invalid, "class-label list must be nonempty", "backends.labels");
  if (kind == Kind::http && endpoint.empty())
    throw Error(errc::config_invalid, "http backend needs an endpoint", "backends.endpoint");
  if (kind == Kind::mock) {
    if (!mock) throw Error(errc::config_invalid, "mock backend needs rules", "backends.rules");
    const bool has_fixed = mock->fixed.has_value();
    const bool has_linear = mock->linear_weights.has_value();
    if (has_fixed == has_linear) {
      throw Error(errc::config_invalid, "mock rules need exactly one of fixed/linear",
                  "backends.rules");
    }
    if (has_fixed && mock->fixed->size() != labels.size()) {
      throw Error(errc::config_invalid, "fixed vector length must match labels", "backends.rules");
    }
    if (has_linear && mock->linear_weights->size() != labels.size()) {
      throw Error(errc::config_invalid, "one weight tensor per label required", "backends.rules");
    }
    if (mock->latency_ms < 0.0) {
      throw Error(errc::config_invalid, "latency must be >= 0", "backends.rules.latency_ms");
    }
  }
}

ScoreResult Backend::score(const Tensor& image, const std::string& sample_id) const {
  const auto start = std::chrono::steady_clock::now();
  std::vector<float> scores;
  uint32_t attempt = 0;
  for (;;) {
    try {
      scores = score_attempt(image, sample_id);
      break;
    } catch (const Error& e) {
      // Only transport/protocol failures are transient; shape errors are not.
      const bool retryable =
          e.code() == errc::timeout_exceeded || e.code() == errc::protocol_malformed;
      if (!retryable || attempt++ >= ref_.retries) throw;
      std::this_thread::sleep_for(kRetryBackoff);
    }
  }
  validate_scores(scores, ref_.id);

  ScoreResult out;
  out.scores = std::move(scores);
  out.latency_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  out.backend_id = ref_.id;
  out.sample_id = sample_id;
  return out;
}

std::unique_ptr<Backend> make_backend(const BackendRef& ref, const Model* local_model) {
  ref.validate();
  switch (ref.kind) {
    case BackendRef::Kind::local:
      if (!local_model) {
        throw Error(errc::invalid_argument, "local backend requires a model: " + ref.id);
      }
      return std::unique_ptr<Backend>(new LocalBackend(ref, local_model));
    case BackendRef::Kind::mock: return std::unique_ptr<Backend>(new MockBackend(ref));
    case BackendRef::Kind::http: return std::unique_ptr<Backend>(new HttpBackend(ref));
  }
  throw Error(errc::invalid_argument, "unknown backend kind");
}

BackendRef mock_configure(MockRules rules, std::string id, std::vector<std::string> labels) {
  BackendRef ref;
  ref.id = std::move(id);
  ref.kind = BackendRef::Kind::mock;
  ref.labels = std::move(labels);
  ref.mock = std::make_shared<const MockRules>(std::move(rules));
  ref.validate();
  return ref;
}

nlohmann::json score_request_json(const Tensor& image, const std::string& sample_id) {
  return {{"sample_id", sample_id},
          {"shape", image.dims()},
          {"pixels", base64_encode(xten_payload(image))}};
}

Tensor image_from_score_request(const nlohmann::json& body, std::string* sample_id) {
  try {
    if (sample_id) *sample_id = body.at("sample_id").get<std::string>();
    auto shape = body.at("shape").get<std::vector<uint32_t>>();
    auto payload = base64_decode(body.at("pixels").get<std::string>());
    return tensor_from_payload(payload, std::move(shape));
  } catch (const nlohmann::json::exception& e) {
    throw Error(errc::protocol_malformed, std::string("bad score request: ") + e.what());
  }
}

nlohmann::json score_response_json(const std::vector<float>& scores,
                                   const std::vector<std::string>& labels,
                                   const std::string& model_version) {
  return {{"scores", scores}, {"labels", labels}, {"model_version", model_version}};
}

std::vector<float> scores_from_response(const nlohmann::json& body) {
  try {
    return body.at("scores").get<std::vector<float>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(errc::protocol_malformed, std::string("bad score response: ") + e.what());
  }
}

std::string base64_encode(std::span<const std::byte> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  while (i + 3 <= bytes.size()) {
    const uint32_t v = uint32_t(bytes[i]) << 16 | uint32_t(bytes[i + 1]) << 8 | uint32_t(bytes[i + 2]);
    out.push_back(kB64Alphabet[(v >> 18) & 63]);
    out.push_back(kB64Alphabet[(v >> 12) & 63]);
    out.push_back(kB64Alphabet[(v >> 6) & 63]);
    out.push_back(kB64Alphabet[v & 63]);
    i += 3;
  }
  const std::size_t rest = bytes.size() - i;
  if (rest == 1) {
    const uint32_t v = uint32_t(bytes[i]) << 16;
    out.push_back(kB64Alphabet[(v >> 18) & 63]);
    out.push_back(kB64Alphabet[(v >> 12) & 63]);
    out.push_back('=');
    out.push_back('=');
  } else if (rest == 2) {
    const uint32_t v = uint32_t(bytes[i]) << 16 | uint32_t(bytes[i + 1]) << 8;
    out.push_back(kB64Alphabet[(v >> 18) & 63]);
    out.push_back(kB64Alphabet[(v >> 12) & 63]);
    out.push_back(kB64Alphabet[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

std::vector<std::byte> base64_decode(std::string_view text) {
  auto value_of = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::vector<std::byte> out;
  out.reserve(text.size() / 4 * 3);
  uint32_t buf = 0;
  int bits = 0;
  for (char c : text) {
    if (c == '=') break;
    const int v = value_of(c);
    if (v < 0) throw Error(errc::protocol_malformed, "invalid base64 character");
    buf = buf << 6 | uint32_t(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(std::byte((buf >> bits) & 0xff));
    }
  }
  return out;
}

}  // namespace xaiport
