#include <chrono>
#include <fstream>
#include <map>

#include "xaiport/error.hpp"
#include "xaiport/evaluation.hpp"
#include "xaiport/explainers.hpp"
#include "xaiport/pipeline.hpp"
#include "xaiport/tensor_io.hpp"
#include "xaiport/variation.hpp"

namespace xaiport {

namespace {

using nlohmann::json;

int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

uint32_t argmax(const std::vector<float>& v) {
  uint32_t best = 0;
  for (uint32_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(errc::storage_io, "cannot open " + tmp);
    f << text;
    if (!f) throw Error(errc::storage_io, "short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(errc::storage_io, "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

LabeledDataset materialize_dataset(const PipelineConfig& cfg) {
  switch (cfg.dataset.kind) {
    case DatasetRef::Kind::synthetic_bars:
      return make_synthetic_bars(cfg.dataset.count, cfg.dataset.seed ^ cfg.master_seed);
    case DatasetRef::Kind::directory: return load_directory_dataset(cfg.dataset.path_or_id);
    case DatasetRef::Kind::stored: {
      const auto dir =
          std::filesystem::path(cfg.output_dir) / "datasets" / cfg.dataset.path_or_id;
      if (!std::filesystem::exists(dir / "labels.json")) {
        throw Error(errc::dataset_not_found, "stored dataset not found: " + cfg.dataset.path_or_id);
      }
      return load_directory_dataset(dir);
    }
  }
  throw Error(errc::config_invalid, "unknown dataset kind");
}

Mixer make_mixer(TrainConfig::Augment augment, const std::string& target_layer,
                 std::vector<json>* mix_log) {
  auto log_spec = [mix_log](const MixResult& r, const std::string& a_id) {
    if (!mix_log) return;
    mix_log->push_back({{"sample", a_id},
                        {"partner", r.spec.partner_id},
                        {"lambda", r.spec.lambda},
                        {"box", {r.spec.top, r.spec.left, r.spec.height, r.spec.width}},
                        {"seed", r.spec.seed}});
  };

  if (augment == TrainConfig::Augment::cutmix) {
    return [log_spec](const Model&, const LabeledSample& a, const LabeledSample& b, Rng& rng) {
      MixResult r = cutmix(a.image, a.label, b.image, b.label, rng);
      r.spec.partner_id = b.id;
      log_spec(r, a.id);
      return MixedSample{std::move(r.image), std::move(r.label)};
    };
  }
  return [log_spec, target_layer](const Model& current, const LabeledSample& a,
                                  const LabeledSample& b, Rng& rng) {
    // The partner's saliency comes from the model as currently trained.
    const auto scores = current.forward(b.image);
    auto [probs, cap] = current.forward_capture(b.image, argmax(scores));
    ExplainContext ctx{b.image.dims()[1], b.image.dims()[2], b.id, target_layer};
    const SaliencyMap sal = grad_cam(cap, ctx);
    MixResult r = saliency_mix(a.image, a.label, b.image, b.label, sal, rng);
    r.spec.partner_id = b.id;
    log_spec(r, a.id);
    return MixedSample{std::move(r.image), std::move(r.label)};
  };
}

PipelineJob execute(const PipelineConfig& cfg, const std::string& job_id,
                    const std::filesystem::path& job_dir, ArtifactStore& store) {
  PipelineJob job;
  job.id = job_id;
  job.state = JobState::running;
  job.job_dir = job_dir;

  json manifest;
  manifest["job_id"] = job_id;
  manifest["code_version"] = kCodeVersion;
  manifest["config"] = canonical_config_json(cfg);
  manifest["created_unix_ms"] = now_ms();
  manifest["state"] = "running";

  StageCollector collector;
  std::string current_stage = "data_processing";

  try {
    // Stage 1: dataset materialization + per-channel mean (shared split
    // across variants so the augmentation effect is isolated).
    LabeledDataset dataset =
        collector.time_stage(Stage::data_processing, [&] { return materialize_dataset(cfg); });
    const uint32_t in_h = dataset.samples.front().image.dims()[1];
    const uint32_t in_w = dataset.samples.front().image.dims()[2];

    json dataset_manifest;
    {
      std::vector<std::string> ids;
      json artifacts;
      for (const auto& s : dataset.samples) {
        ids.push_back(s.id);
        json entry;
        entry["image"] = store.put(to_xten(s.image));
        if (!s.mask.empty()) entry["mask"] = store.put(to_xten(s.mask));
        artifacts[s.id] = std::move(entry);
      }
      dataset_manifest["sample_ids"] = ids;
      dataset_manifest["channel_mean"] = dataset.channel_mean;
      dataset_manifest["artifacts"] = std::move(artifacts);
    }
    manifest["dataset"] = std::move(dataset_manifest);

    ModelSpec surrogate_spec = ModelSpec::desk_scale(dataset.class_count, cfg.master_seed);
    if (dataset.samples.front().image.dims() !=
        std::vector<uint32_t>{surrogate_spec.in_channels, surrogate_spec.in_height,
                              surrogate_spec.in_width}) {
      surrogate_spec.in_channels = dataset.samples.front().image.dims()[0];
      surrogate_spec.in_height = in_h;
      surrogate_spec.in_width = in_w;
    }

    std::vector<EvaluationRun> runs;
    json variants_manifest;

    for (const auto& variant : cfg.variants) {
      json vmanifest;

      // Stage 2: feature variation + surrogate training. The whole training
      // run is charged to this stage; mixing happens inside it.
      current_stage = "feature_variation";
      Model model = Model::init(surrogate_spec);
      TrainConfig tc = variant.train;
      tc.seed = variant.train.seed ^ cfg.master_seed;
      std::vector<json> mix_log;
      std::vector<double> losses;
      if (tc.augmentation == TrainConfig::Augment::none) {
        losses = collector.time_stage(Stage::feature_variation,
                                      [&] { return train(model, dataset, tc, nullptr); });
      } else {
        Mixer mixer = make_mixer(tc.augmentation, surrogate_spec.target_layer, &mix_log);
        losses = collector.time_stage(Stage::feature_variation,
                                      [&] { return train(model, dataset, tc, &mixer); });
      }
      vmanifest["loss_history"] = losses;
      if (!mix_log.empty()) vmanifest["mix_specs"] = store.put(json(mix_log).dump());

      {
        const auto ckpt_dir = job_dir / "models" / variant.name;
        save_checkpoint(model, ckpt_dir);
        json weights;
        for (const auto& entry : std::filesystem::directory_iterator(ckpt_dir)) {
          weights[entry.path().filename().string()] = store.put(read_file(entry.path()));
        }
        vmanifest["model"] = std::move(weights);
      }

      // One backend instance per variant; probes in stage 5 share it, so
      // failure-injection counters span the whole variant run.
      std::map<std::string, std::unique_ptr<Backend>> backends;
      for (const auto& bref : cfg.backends) backends[bref.id] = make_backend(bref, &model);

      // Stage 3: clean-input scoring on every backend.
      current_stage = "inference";
      std::map<std::string, std::vector<ScoreResult>> clean_scores;
      std::vector<uint32_t> truths;
      for (const auto& s : dataset.samples) truths.push_back(argmax(s.label));
      for (const auto& bref : cfg.backends) {
        const Backend& backend = *backends.at(bref.id);
        std::vector<ScoreResult> results;
        for (const auto& s : dataset.samples) {
          results.push_back(collector.time_stage(Stage::inference,
                                                 [&] { return backend.score(s.image, s.id); }));
        }
        clean_scores[bref.id] = std::move(results);
      }

      // Stage 4: saliency maps for every (method, sample) on the surrogate,
      // explained at the predicted class.
      current_stage = "xai";
      std::map<std::string, std::map<std::string, SaliencyMap>> maps;  // sample -> method -> map
      json saliency_manifest;
      for (const auto& s : dataset.samples) {
        auto [probs, cap] = collector.time_stage(Stage::xai, [&] {
          return model.forward_capture(s.image, argmax(model.forward(s.image)));
        });
        for (const auto& method : cfg.methods) {
          ExplainContext ctx{in_h, in_w, s.id, surrogate_spec.target_layer};
          SaliencyMap map =
              collector.time_stage(Stage::xai, [&] { return explain(method, cap, ctx); });
          json meta;
          meta["method"] = method;
          meta["sample"] = s.id;
          meta["target_layer"] = map.target_layer;
          meta["class_policy"] = "predicted";
          if (map.class_index) meta["class"] = *map.class_index;
          json entry;
          entry["xten"] = store.put(to_xten(map.values));
          entry["meta"] = store.put(meta.dump());
          entry["created_ms"] = now_ms();
          saliency_manifest[s.id + "/" + method] = std::move(entry);
          maps[s.id].emplace(method, std::move(map));
        }
      }
      vmanifest["saliency"] = std::move(saliency_manifest);
      vmanifest["saliency_class_policy"] = "predicted";

      // Stage 5: deletion probes, metrics and the report cells. Masking is
      // feature-variation work; probe scoring and aggregation are evaluation.
      current_stage = "evaluation";
      EvaluationRun run_template;
      run_template.variant = variant.name;
      run_template.truths = truths;
      json summaries_manifest;
      for (const auto& bref : cfg.backends) {
        const Backend& backend = *backends.at(bref.id);
        EvaluationRun run = run_template;
        run.backend_id = bref.id;
        for (const auto& result : clean_scores[bref.id]) {
          run.predictions.push_back(argmax(result.scores));
        }
        for (const auto& method : cfg.methods) {
          ExplanationSummary summary;
          summary.method = method;
          summary.backend_id = bref.id;
          summary.probe_fraction = cfg.probe_fraction;
          for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
            const auto& s = dataset.samples[i];
            const SaliencyMap& map = maps[s.id].at(method);
            Tensor masked = collector.time_stage(Stage::feature_variation, [&] {
              return mask_topk(s.image, map, cfg.probe_fraction, dataset.channel_mean);
            });
            const double d = collector.time_stage(Stage::evaluation, [&] {
              const ScoreResult& clean = clean_scores[bref.id][i];
              const uint32_t c = argmax(clean.scores);
              const ScoreResult probed = backend.score(masked, s.id);
              return 100.0 * (double(clean.scores[c]) - double(probed.scores[c]));
            });
            summary.sample_ids.push_back(s.id);
            summary.deletion_scores.push_back(d);
          }
          json sj;
          sj["method"] = summary.method;
          sj["backend"] = summary.backend_id;
          sj["probe_fraction"] = summary.probe_fraction;
          sj["sample_ids"] = summary.sample_ids;
          sj["deletion_scores"] = summary.deletion_scores;
          json entry;
          entry["artifact"] = store.put(sj.dump());
          entry["probed_ms"] = now_ms();
          summaries_manifest[bref.id + "/" + method] = std::move(entry);
          run.summaries.push_back(std::move(summary));
        }
        runs.push_back(std::move(run));
      }
      vmanifest["summaries"] = std::move(summaries_manifest);
      variants_manifest[variant.name] = std::move(vmanifest);
    }

    current_stage = "evaluation";
    MetricReport report =
        collector.time_stage(Stage::evaluation, [&] { return build_report(runs, cfg.methods); });

    double stage_total = 0.0;
    for (const auto& t : collector.timings()) stage_total += t.total_s();
    EnergyEstimate energy =
        estimate_energy(DeviceDurations{stage_total, 0.0, stage_total}, cfg.power);

    const std::string report_text = report_to_json(report).dump(2) + "\n";
    const std::string telemetry_text = telemetry_json(collector, energy).dump(2) + "\n";
    write_file(job_dir / "report.json", report_text);
    write_file(job_dir / "telemetry.json", telemetry_text);
    manifest["report"] = store.put(report_text);
    manifest["telemetry"] = store.put(telemetry_text);
    manifest["variants"] = std::move(variants_manifest);
    manifest["state"] = "succeeded";
    manifest["finished_unix_ms"] = now_ms();
    job.state = JobState::succeeded;
  } catch (const Error& e) {
    manifest["state"] = "failed";
    manifest["finished_unix_ms"] = now_ms();
    manifest["error"] = {{"stage", current_stage}, {"code", e.code()}, {"message", e.what()}};
    job.state = JobState::failed;
    job.error = StageErrorInfo{current_stage, e.code(), e.what()};
  }

  job.manifest = manifest;
  write_file(job_dir / "manifest.json", manifest.dump(2) + "\n");
  return job;
}

}  // namespace

PipelineJob run_pipeline(const PipelineConfig& cfg) {
  const std::string job_id = job_id_for(cfg);
  const auto data_dir = std::filesystem::path(cfg.output_dir);
  const auto job_dir = data_dir / "jobs" / job_id;
  std::filesystem::create_directories(job_dir);
  ArtifactStore store(data_dir / "artifacts");

  // Identical config: return the cached succeeded job without recomputation.
  const auto manifest_path = job_dir / "manifest.json";
  if (std::filesystem::exists(manifest_path)) {
    json manifest = json::parse(read_file(manifest_path));
    if (manifest.value("state", "") == "succeeded") {
      PipelineJob job;
      job.id = job_id;
      job.state = JobState::succeeded;
      job.manifest = std::move(manifest);
      job.job_dir = job_dir;
      return job;
    }
  }
  return execute(cfg, job_id, job_dir, store);
}

PipelineJob load_job(const std::filesystem::path& data_dir, const std::string& job_id) {
  const auto job_dir = data_dir / "jobs" / job_id;
  const auto manifest_path = job_dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) {
    throw Error(errc::job_not_found, "no such job: " + job_id);
  }
  json manifest = json::parse(read_file(manifest_path));
  PipelineJob job;
  job.id = job_id;
  const std::string state = manifest.value("state", "failed");
  job.state = state == "succeeded" ? JobState::succeeded
              : state == "running" ? JobState::running
                                   : JobState::failed;
  if (manifest.contains("error")) {
    job.error = StageErrorInfo{manifest["error"].value("stage", ""),
                               manifest["error"].value("code", ""),
                               manifest["error"].value("message", "")};
  }
  job.manifest = std::move(manifest);
  job.job_dir = job_dir;
  return job;
}

LabeledDataset load_directory_dataset(const std::filesystem::path& dir) {
  const auto labels_path = dir / "labels.json";
  if (!std::filesystem::exists(labels_path)) {
    throw Error(errc::dataset_not_found, "no labels.json in " + dir.string());
  }
  json labels = json::parse(read_file(labels_path));
  LabeledDataset ds;
  ds.class_count = labels.at("class_count").get<uint32_t>();
  for (const auto& entry : labels.at("samples")) {
    LabeledSample s;
    s.id = entry.at("id").get<std::string>();
    s.image = load_xten(dir / entry.at("image").get<std::string>());
    const uint32_t cls = entry.at("class").get<uint32_t>();
    if (cls >= ds.class_count) {
      throw Error(errc::config_invalid, "sample class out of range in " + dir.string());
    }
    s.label.assign(ds.class_count, 0.0f);
    s.label[cls] = 1.0f;
    if (entry.contains("mask")) s.mask = load_xten(dir / entry.at("mask").get<std::string>());
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty()) throw Error(errc::empty_dataset, "dataset has no samples");
  ds.compute_channel_mean();
  return ds;
}

void save_directory_dataset(const LabeledDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json samples = json::array();
  for (const auto& s : ds.samples) {
    save_xten(dir / (s.id + ".xten"), s.image);
    json entry;
    entry["id"] = s.id;
    entry["image"] = s.id + ".xten";
    entry["class"] = argmax(s.label);
    if (!s.mask.empty()) {
      save_xten(dir / (s.id + "_mask.xten"), s.mask);
      entry["mask"] = s.id + "_mask.xten";
    }
    samples.push_back(std::move(entry));
  }
  json labels;
  labels["class_count"] = ds.class_count;
  labels["samples"] = std::move(samples);
  write_file(dir / "labels.json", labels.dump(2) + "\n");
}

}  // namespace xaiport
