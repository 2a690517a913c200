#include <algorithm>
#include <fstream>
#include <set>

#include "xaiport/error.hpp"
#include "xaiport/explainers.hpp"
#include "xaiport/pipeline.hpp"
#include "xaiport/tensor_io.hpp"

namespace xaiport {

namespace {

using nlohmann::json;

void reject_unknown_fields(const json& obj, const std::set<std::string>& allowed,
                           const std::string& path) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw Error(errc::config_invalid, "unknown field '" + it.key() + "'",
                  path.empty() ? it.key() : path + "." + it.key());
    }
  }
}

const json& require(const json& obj, const char* key, const std::string& path) {
  if (!obj.contains(key)) {
    throw Error(errc::config_invalid, "missing required field '" + std::string(key) + "'",
                path.empty() ? key : path + "." + key);
  }
  return obj.at(key);
}

template <typename T>
T get_as(const json& v, const std::string& path) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw Error(errc::config_invalid, "wrong type for field", path);
  }
}

DatasetRef parse_dataset(const json& j) {
  DatasetRef ds;
  const std::string kind = get_as<std::string>(require(j, "kind", "dataset"), "dataset.kind");
  if (kind == "synthetic_bars") {
    reject_unknown_fields(j, {"kind", "count", "seed"}, "dataset");
    ds.kind = DatasetRef::Kind::synthetic_bars;
    ds.count = get_as<uint32_t>(require(j, "count", "dataset"), "dataset.count");
    ds.seed = j.contains("seed") ? get_as<uint64_t>(j.at("seed"), "dataset.seed") : 0;
    if (ds.count < 2) throw Error(errc::config_invalid, "count must be >= 2", "dataset.count");
  } else if (kind == "directory") {
    reject_unknown_fields(j, {"kind", "path"}, "dataset");
    ds.kind = DatasetRef::Kind::directory;
    ds.path_or_id = get_as<std::string>(require(j, "path", "dataset"), "dataset.path");
  } else if (kind == "stored") {
    reject_unknown_fields(j, {"kind", "id"}, "dataset");
    ds.kind = DatasetRef::Kind::stored;
    ds.path_or_id = get_as<std::string>(require(j, "id", "dataset"), "dataset.id");
  } else {
    throw Error(errc::config_invalid, "unknown dataset kind '" + kind + "'", "dataset.kind");
  }
  return ds;
}

VariantConfig parse_variant(const json& j, const std::string& path) {
  reject_unknown_fields(j, {"name", "train"}, path);
  VariantConfig v;
  v.name = get_as<std::string>(require(j, "name", path), path + ".name");
  if (v.name != "baseline" && v.name != "cutmix" && v.name != "saliency_mix") {
    throw Error(errc::config_invalid,
                "variant must be baseline, cutmix or saliency_mix, got '" + v.name + "'",
                path + ".name");
  }
  const json& t = require(j, "train", path);
  reject_unknown_fields(t, {"epochs", "batch_size", "learning_rate", "seed", "mix_probability"},
                        path + ".train");
  v.train.epochs = get_as<uint32_t>(require(t, "epochs", path + ".train"), path + ".train.epochs");
  v.train.batch_size = t.contains("batch_size")
                           ? get_as<uint32_t>(t.at("batch_size"), path + ".train.batch_size")
                           : 8;
  v.train.learning_rate =
      get_as<float>(require(t, "learning_rate", path + ".train"), path + ".train.learning_rate");
  v.train.seed = t.contains("seed") ? get_as<uint64_t>(t.at("seed"), path + ".train.seed") : 0;
  v.train.mix_probability =
      t.contains("mix_probability")
          ? get_as<float>(t.at("mix_probability"), path + ".train.mix_probability")
          : 0.5f;
  v.train.augmentation = v.name == "cutmix"         ? TrainConfig::Augment::cutmix
                         : v.name == "saliency_mix" ? TrainConfig::Augment::saliency_mix
                                                    : TrainConfig::Augment::none;
  try {
    v.train.validate();
  } catch (const Error& e) {
    throw Error(e.code(), e.what(), path + ".train." + e.field());
  }
  return v;
}

BackendRef parse_backend(const json& j, const std::string& path) {
  BackendRef b;
  b.id = get_as<std::string>(require(j, "id", path), path + ".id");
  const std::string kind = get_as<std::string>(require(j, "kind", path), path + ".kind");
  if (kind == "local") {
    reject_unknown_fields(j, {"id", "kind", "timeout_ms", "retries", "labels"}, path);
    b.kind = BackendRef::Kind::local;
  } else if (kind == "http") {
    reject_unknown_fields(
        j, {"id", "kind", "endpoint", "timeout_ms", "retries", "labels", "max_in_flight"}, path);
    b.kind = BackendRef::Kind::http;
    b.endpoint = get_as<std::string>(require(j, "endpoint", path), path + ".endpoint");
    if (j.contains("max_in_flight")) {
      b.max_in_flight = get_as<uint32_t>(j.at("max_in_flight"), path + ".max_in_flight");
      if (b.max_in_flight == 0 || b.max_in_flight > 256) {
        throw Error(errc::config_invalid, "max_in_flight must be in [1,256]",
                    path + ".max_in_flight");
      }
    }
  } else if (kind == "mock") {
    reject_unknown_fields(j, {"id", "kind", "timeout_ms", "retries", "labels", "rules"}, path);
    b.kind = BackendRef::Kind::mock;
    const json& r = require(j, "rules", path);
    reject_unknown_fields(r, {"fixed", "linear", "latency_ms", "failure_every_n"},
                          path + ".rules");
    MockRules rules;
    if (r.contains("fixed")) {
      rules.fixed = get_as<std::vector<float>>(r.at("fixed"), path + ".rules.fixed");
    }
    if (r.contains("linear")) {
      const json& lin = r.at("linear");
      reject_unknown_fields(lin, {"shape", "weights"}, path + ".rules.linear");
      auto shape = get_as<std::vector<uint32_t>>(require(lin, "shape", path + ".rules.linear"),
                                                 path + ".rules.linear.shape");
      std::vector<Tensor> weights;
      for (const auto& w : require(lin, "weights", path + ".rules.linear")) {
        weights.emplace_back(shape, get_as<std::vector<float>>(w, path + ".rules.linear.weights"));
      }
      rules.linear_weights = std::move(weights);
    }
    if (r.contains("latency_ms")) {
      rules.latency_ms = get_as<double>(r.at("latency_ms"), path + ".rules.latency_ms");
    }
    if (r.contains("failure_every_n")) {
      rules.failure_every_n =
          get_as<uint32_t>(r.at("failure_every_n"), path + ".rules.failure_every_n");
    }
    b.mock = std::make_shared<const MockRules>(std::move(rules));
  } else {
    throw Error(errc::config_invalid, "unknown backend kind '" + kind + "'", path + ".kind");
  }
  if (j.contains("timeout_ms")) b.timeout_ms = get_as<uint32_t>(j.at("timeout_ms"), path + ".timeout_ms");
  if (j.contains("retries")) b.retries = get_as<uint32_t>(j.at("retries"), path + ".retries");
  b.labels = get_as<std::vector<std::string>>(require(j, "labels", path), path + ".labels");
  try {
    b.validate();
  } catch (const Error& e) {
    throw Error(e.code(), e.what(), path);
  }
  return b;
}

}  // namespace

PipelineConfig validate_config(const std::string& raw_json_text) {
  json j;
  try {
    j = json::parse(raw_json_text);
  } catch (const json::parse_error& e) {
    throw Error(errc::config_parse_error,
                "config is not valid JSON (byte " + std::to_string(e.byte) + "): " + e.what());
  }
  if (!j.is_object()) throw Error(errc::config_parse_error, "config root must be an object");

  reject_unknown_fields(j,
                        {"dataset", "variants", "backends", "methods", "probe_fraction",
                         "master_seed", "output_dir", "power_model"},
                        "");

  PipelineConfig cfg;
  cfg.dataset = parse_dataset(require(j, "dataset", ""));

  const json& variants = require(j, "variants", "");
  if (!variants.is_array() || variants.empty()) {
    throw Error(errc::config_invalid, "variants must be a nonempty list", "variants");
  }
  for (std::size_t i = 0; i < variants.size(); ++i) {
    cfg.variants.push_back(parse_variant(variants.at(i), "variants[" + std::to_string(i) + "]"));
  }
  std::set<std::string> variant_names;
  for (const auto& v : cfg.variants) {
    if (!variant_names.insert(v.name).second) {
      throw Error(errc::config_invalid, "duplicate variant '" + v.name + "'", "variants");
    }
  }

  const json& backends = require(j, "backends", "");
  if (!backends.is_array() || backends.empty()) {
    throw Error(errc::config_invalid, "backends must be a nonempty list", "backends");
  }
  std::set<std::string> backend_ids;
  for (std::size_t i = 0; i < backends.size(); ++i) {
    auto b = parse_backend(backends.at(i), "backends[" + std::to_string(i) + "]");
    if (!backend_ids.insert(b.id).second) {
      throw Error(errc::config_invalid, "duplicate backend id '" + b.id + "'", "backends");
    }
    cfg.backends.push_back(std::move(b));
  }

  cfg.methods = get_as<std::vector<std::string>>(require(j, "methods", ""), "methods");
  if (cfg.methods.empty()) {
    throw Error(errc::config_invalid, "methods must be a nonempty list", "methods");
  }
  std::set<std::string> seen_methods;
  for (const auto& m : cfg.methods) {
    if (!is_cam_method(m)) {
      throw Error(errc::config_invalid, "unknown method '" + m + "'", "methods");
    }
    if (!seen_methods.insert(m).second) {
      throw Error(errc::config_invalid, "duplicate method '" + m + "'", "methods");
    }
  }

  if (j.contains("probe_fraction")) {
    cfg.probe_fraction = get_as<double>(j.at("probe_fraction"), "probe_fraction");
  }
  if (!(cfg.probe_fraction > 0.0 && cfg.probe_fraction < 1.0)) {
    throw Error(errc::config_invalid, "probe_fraction must be in (0,1)", "probe_fraction");
  }

  if (j.contains("master_seed")) {
    cfg.master_seed = get_as<uint64_t>(j.at("master_seed"), "master_seed");
  }
  if (j.contains("output_dir")) {
    cfg.output_dir = get_as<std::string>(j.at("output_dir"), "output_dir");
  }
  if (cfg.output_dir.empty()) cfg.output_dir = "xaiport-out";

  if (j.contains("power_model")) {
    const json& p = j.at("power_model");
    reject_unknown_fields(p, {"cpu_w", "gpu_w", "ram_w"}, "power_model");
    if (p.contains("cpu_w")) cfg.power.cpu_w = get_as<double>(p.at("cpu_w"), "power_model.cpu_w");
    if (p.contains("gpu_w")) cfg.power.gpu_w = get_as<double>(p.at("gpu_w"), "power_model.gpu_w");
    if (p.contains("ram_w")) cfg.power.ram_w = get_as<double>(p.at("ram_w"), "power_model.ram_w");
    if (cfg.power.cpu_w < 0 || cfg.power.gpu_w < 0 || cfg.power.ram_w < 0) {
      throw Error(errc::config_invalid, "power model watts must be >= 0", "power_model");
    }
  }
  return cfg;
}

namespace {

json dataset_to_canonical(const DatasetRef& ds, const std::string& output_dir) {
  json j;
  switch (ds.kind) {
    case DatasetRef::Kind::synthetic_bars:
      j["kind"] = "synthetic_bars";
      j["count"] = ds.count;
      j["seed"] = ds.seed;
      break;
    case DatasetRef::Kind::directory:
    case DatasetRef::Kind::stored: {
      j["kind"] = ds.kind == DatasetRef::Kind::directory ? "directory" : "stored";
      j["ref"] = ds.path_or_id;
      // Content digest so the job id pins the actual bytes, not the path.
      std::filesystem::path dir = ds.kind == DatasetRef::Kind::directory
                                      ? std::filesystem::path(ds.path_or_id)
                                      : std::filesystem::path(output_dir) / "datasets" / ds.path_or_id;
      std::vector<std::pair<std::string, std::string>> entries;
      std::error_code ec;
      for (const auto& e : std::filesystem::directory_iterator(dir, ec)) {
        if (!e.is_regular_file()) continue;
        std::ifstream f(e.path(), std::ios::binary);
        std::vector<char> raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        entries.emplace_back(e.path().filename().string(),
                             sha256_hex(std::string_view(raw.data(), raw.size())));
      }
      std::sort(entries.begin(), entries.end());
      std::string acc;
      for (const auto& [name, digest] : entries) acc += name + ":" + digest + "\n";
      j["content_digest"] = sha256_hex(acc);
      break;
    }
  }
  return j;
}

}  // namespace

nlohmann::json canonical_config_json(const PipelineConfig& cfg) {
  json j;
  j["dataset"] = dataset_to_canonical(cfg.dataset, cfg.output_dir);

  json variants = json::array();
  for (const auto& v : cfg.variants) {
    variants.push_back({{"name", v.name},
                        {"train",
                         {{"epochs", v.train.epochs},
                          {"batch_size", v.train.batch_size},
                          {"learning_rate", v.train.learning_rate},
                          {"seed", v.train.seed},
                          {"mix_probability", v.train.mix_probability}}}});
  }
  j["variants"] = std::move(variants);

  json backends = json::array();
  for (const auto& b : cfg.backends) {
    json bj;
    bj["id"] = b.id;
    bj["kind"] = b.kind == BackendRef::Kind::local  ? "local"
                 : b.kind == BackendRef::Kind::http ? "http"
                                                    : "mock";
    bj["timeout_ms"] = b.timeout_ms;
    bj["retries"] = b.retries;
    bj["labels"] = b.labels;
    if (b.kind == BackendRef::Kind::http) {
      bj["endpoint"] = b.endpoint;
      bj["max_in_flight"] = b.max_in_flight;
    }
    if (b.kind == BackendRef::Kind::mock) {
      json rules;
      if (b.mock->fixed) rules["fixed"] = *b.mock->fixed;
      if (b.mock->linear_weights) {
        json weights = json::array();
        for (const auto& w : *b.mock->linear_weights) {
          weights.push_back(std::vector<float>(w.data().begin(), w.data().end()));
        }
        rules["linear"] = {{"shape", (*b.mock->linear_weights)[0].dims()}, {"weights", weights}};
      }
      rules["latency_ms"] = b.mock->latency_ms;
      rules["failure_every_n"] = b.mock->failure_every_n;
      bj["rules"] = std::move(rules);
    }
    backends.push_back(std::move(bj));
  }
  j["backends"] = std::move(backends);

  j["methods"] = cfg.methods;
  j["probe_fraction"] = cfg.probe_fraction;
  j["master_seed"] = cfg.master_seed;
  j["power_model"] = {{"cpu_w", cfg.power.cpu_w},
                      {"gpu_w", cfg.power.gpu_w},
                      {"ram_w", cfg.power.ram_w}};
  return j;
}

std::string job_id_for(const PipelineConfig& cfg) {
  return sha256_hex(canonical_config_json(cfg).dump() + "\n" + kCodeVersion);
}

std::string_view job_state_name(JobState s) {
  switch (s) {
    case JobState::pending: return "pending";
    case JobState::running: return "running";
    case JobState::succeeded: return "succeeded";
    case JobState::failed: return "failed";
  }
  return "?";
}

}  // namespace xaiport
