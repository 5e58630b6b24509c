#include "d3desk.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "d3desk/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

struct d3d_session {
  std::string last_error;
};

namespace {

json parse_config(const char* config_json) {
  if (config_json == nullptr || *config_json == '\0') return json::object();
  json j = json::parse(config_json);
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  return j;
}

template <typename T>
void maybe(const json& j, const char* key, T* out) {
  auto it = j.find(key);
  if (it != j.end()) *out = it->get<T>();
}

d3d_status classify(const std::exception& e) {
  const std::string what = e.what();
  if (dynamic_cast<const std::invalid_argument*>(&e)) return D3D_ERR_INVALID_ARGUMENT;
  if (what.find("diverged") != std::string::npos) return D3D_ERR_DIVERGED;
  if (what.find("requires the stage") != std::string::npos ||
      what.find("missing") != std::string::npos)
    return D3D_ERR_STATE;
  if (what.find("cannot open") != std::string::npos ||
      what.find("not empty") != std::string::npos ||
      what.find("write") != std::string::npos)
    return D3D_ERR_IO;
  return D3D_ERR_INTERNAL;
}

template <typename Fn>
d3d_status guarded(d3d_session* s, Fn&& fn) {
  if (!s) return D3D_ERR_INVALID_ARGUMENT;
  s->last_error.clear();
  try {
    fn();
    return D3D_OK;
  } catch (const std::exception& e) {
    s->last_error = e.what();
    return classify(e);
  } catch (...) {
    s->last_error = "unknown error";
    return D3D_ERR_INTERNAL;
  }
}

d3desk::data::DatasetConfig dataset_config_from(const json& j) {
  d3desk::data::DatasetConfig cfg;
  maybe(j, "seed", &cfg.seed);
  maybe(j, "train_scenes", &cfg.train_scenes);
  maybe(j, "val_scenes", &cfg.val_scenes);
  maybe(j, "extra_scenes", &cfg.extra_scenes);
  maybe(j, "min_objects", &cfg.gen.min_objects);
  maybe(j, "max_objects", &cfg.gen.max_objects);
  maybe(j, "num_classes", &cfg.gen.num_classes);
  maybe(j, "room_extent", &cfg.gen.room_extent);
  maybe(j, "min_points_per_object", &cfg.gen.min_points_per_object);
  maybe(j, "max_points_per_object", &cfg.gen.max_points_per_object);
  maybe(j, "floor_points", &cfg.gen.floor_points);
  maybe(j, "point_cap", &cfg.gen.point_cap);
  maybe(j, "max_descriptions", &cfg.lang.max_descriptions);
  return cfg;
}

d3desk::train::TrainConfig train_config_from(const json& j, int vocab) {
  d3desk::train::TrainConfig cfg;
  cfg.model = d3desk::pipe::default_model_config(vocab);
  maybe(j, "seed", &cfg.seed);
  maybe(j, "lr_stage1", &cfg.lr_stage1);
  maybe(j, "lr_later", &cfg.lr_later);
  maybe(j, "batch_scenes", &cfg.batch_scenes);
  maybe(j, "descriptions_per_scene", &cfg.descriptions_per_scene);
  maybe(j, "iters_stage1", &cfg.iters_stage1);
  maybe(j, "iters_stage2", &cfg.iters_stage2);
  maybe(j, "iters_stage3", &cfg.iters_stage3);
  maybe(j, "iters_stage4", &cfg.iters_stage4);
  maybe(j, "extra_ratio", &cfg.extra_ratio);
  maybe(j, "alpha", &cfg.reward.alpha);
  maybe(j, "beta", &cfg.reward.beta);
  maybe(j, "beam", &cfg.beam);
  maybe(j, "freeze_detector_stage2", &cfg.freeze_detector_stage2);
  maybe(j, "ori_in_stage2", &cfg.ori_in_stage2);
  maybe(j, "stage3_gt_proposals", &cfg.stage3_gt_proposals);
  maybe(j, "checkpoint_every", &cfg.checkpoint_every);
  maybe(j, "log_every", &cfg.log_every);
  maybe(j, "jitter_sigma", &cfg.jitter_sigma);
  maybe(j, "det_hidden", &cfg.model.detector.hidden);
  maybe(j, "proposal_dim", &cfg.model.detector.proposal_dim);
  maybe(j, "min_cluster_points", &cfg.model.detector.min_cluster_points);
  maybe(j, "cluster_radius", &cfg.model.detector.cluster_radius);
  maybe(j, "score_threshold", &cfg.model.detector.score_threshold);
  maybe(j, "nms_iou", &cfg.model.detector.nms_iou);
  maybe(j, "t_max", &cfg.model.speaker.t_max);
  maybe(j, "k_neighbors", &cfg.model.speaker.k_neighbors);
  cfg.model.speaker.proposal_dim = cfg.model.detector.proposal_dim;
  cfg.model.listener.proposal_dim = cfg.model.detector.proposal_dim;
  return cfg;
}

std::string resolve_data_dir(const char* data_dir) {
  if (data_dir && *data_dir) return data_dir;
  const char* env = std::getenv("D3DESK_DATA");
  if (env && *env) return env;
  throw std::invalid_argument("no dataset directory (pass one or set D3DESK_DATA)");
}

// Loads models with the architecture recorded in the checkpoint.
d3desk::pipe::Models models_from_checkpoint(const std::string& ckpt, uint64_t seed) {
  d3desk::ad::NamedParams params;
  std::map<std::string, std::string> meta;
  d3desk::ad::load_checkpoint(ckpt, &params, &meta);
  auto it = meta.find("model_config");
  if (it == meta.end())
    throw std::runtime_error("checkpoint missing model_config metadata: " + ckpt);
  d3desk::pipe::ModelConfig mc = d3desk::pipe::model_config_from_json(it->second);
  d3desk::pipe::Models m = d3desk::pipe::make_models(mc, seed);
  d3desk::pipe::load_models(ckpt, m);
  return m;
}

const std::vector<std::string>& split_ids(const d3desk::data::Dataset& ds,
                                          const std::string& split) {
  if (split == "train") return ds.split.train;
  if (split == "val") return ds.split.val;
  if (split == "extra") return ds.split.extra;
  throw std::invalid_argument("unknown split '" + split + "' (train|val|extra)");
}

}  // namespace

extern "C" {

d3d_session* d3d_session_new(void) { return new d3d_session(); }

void d3d_session_free(d3d_session* s) { delete s; }

const char* d3d_last_error(const d3d_session* s) {
  return s ? s->last_error.c_str() : "null session";
}

const char* d3d_version(void) { return "0.1.0"; }

d3d_status d3d_synth(d3d_session* s, const char* config_json, const char* out_dir,
                     int force) {
  return guarded(s, [&] {
    if (!out_dir || !*out_dir) throw std::invalid_argument("out_dir is required");
    const json j = parse_config(config_json);
    const auto cfg = dataset_config_from(j);
    d3desk::data::synthesize_dataset(cfg, out_dir, force != 0, "synth");
  });
}

d3d_status d3d_train(d3d_session* s, int stage, const char* config_json,
                     const char* data_dir, const char* run_dir) {
  return guarded(s, [&] {
    if (!run_dir || !*run_dir) throw std::invalid_argument("run_dir is required");
    if (stage < 1 || stage > 4) throw std::invalid_argument("stage must be 1..4");
    const json j = parse_config(config_json);
    const std::string data = resolve_data_dir(data_dir);
    d3desk::data::Dataset ds = d3desk::data::load_dataset(data);
    auto cfg = train_config_from(j, ds.vocab.size());
    int resume_iter = 0;
    maybe(j, "resume_iter", &resume_iter);

    d3desk::train::Trainer trainer(ds, cfg);
    trainer.run_stage(stage, run_dir, resume_iter);

    json snapshot = j;
    snapshot["stage"] = stage;
    snapshot["extra_ratio"] = cfg.extra_ratio;
    snapshot["alpha"] = cfg.reward.alpha;
    snapshot["beta"] = cfg.reward.beta;
    snapshot["beam"] = cfg.beam;
    snapshot["seed"] = cfg.seed;
    d3desk::data::write_manifest(
        run_dir, "train --stage " + std::to_string(stage), snapshot.dump(), cfg.seed,
        d3desk::data::dataset_content_hash(data),
        {d3desk::train::Trainer::stage_dir(run_dir, stage)});
  });
}

d3d_status d3d_eval(d3d_session* s, const char* task, const char* config_json,
                    const char* data_dir, const char* checkpoint, const char* split,
                    const char* out_dir, char** report_json) {
  return guarded(s, [&] {
    if (!task || !*task) throw std::invalid_argument("task is required");
    if (!checkpoint || !*checkpoint)
      throw std::invalid_argument("checkpoint is required");
    if (!out_dir || !*out_dir) throw std::invalid_argument("out_dir is required");
    const json j = parse_config(config_json);
    const std::string data = resolve_data_dir(data_dir);
    const std::string task_s = task;
    const std::string split_s = split && *split ? split : "val";
    double k = 0.5;
    int beam = 0;
    maybe(j, "k", &k);
    maybe(j, "beam", &beam);

    d3desk::data::Dataset ds = d3desk::data::load_dataset(data);
    const auto& ids = split_ids(ds, split_s);
    d3desk::pipe::Models models = models_from_checkpoint(checkpoint, 1);
    fs::create_directories(out_dir);

    json report;
    std::string table;
    if (task_s == "captioning") {
      auto caps = d3desk::pipe::caption_predictions(models, ds, ids, beam);
      auto scores = d3desk::evals::caption_eval(caps, ds, ids, k);
      auto dets = d3desk::pipe::detection_predictions(models, ds, ids);
      const double map = d3desk::evals::detection_eval(dets, ds, ids, k);
      d3desk::pipe::write_caption_dump((fs::path(out_dir) / "captions.json").string(),
                                       caps, ds.vocab);
      report["task"] = "captioning";
      report["split"] = split_s;
      report["k"] = k;
      report["C"] = scores.cider;
      report["B4"] = scores.bleu4;
      report["R"] = scores.rouge;
      report["mAP"] = map;
      report["objects"] = scores.num_objects;
      report["predicted"] = scores.num_predicted;
      table = d3desk::evals::format_caption_table(scores, map, k);
    } else if (task_s == "grounding") {
      auto preds = d3desk::pipe::grounding_predictions(models, ds, ids);
      std::vector<d3desk::evals::GroundingEntry> entries;
      for (const auto& p : preds) entries.push_back(p.entry);
      auto scores = d3desk::evals::grounding_eval(entries, ds, k);
      d3desk::pipe::write_grounding_dump((fs::path(out_dir) / "grounding.json").string(),
                                         preds);
      report["task"] = "grounding";
      report["split"] = split_s;
      report["k"] = k;
      report["unique"] = scores.unique_acc;
      report["multiple"] = scores.multiple_acc;
      report["overall"] = scores.overall_acc;
      report["unique_n"] = scores.unique_n;
      report["multiple_n"] = scores.multiple_n;
      table = d3desk::evals::format_grounding_table(scores, k);
    } else if (task_s == "detection") {
      auto dets = d3desk::pipe::detection_predictions(models, ds, ids);
      const double map = d3desk::evals::detection_eval(dets, ds, ids, k);
      d3desk::pipe::write_proposal_dump((fs::path(out_dir) / "proposals.json").string(),
                                        dets);
      report["task"] = "detection";
      report["split"] = split_s;
      report["k"] = k;
      report["mAP"] = map;
      char buf[64];
      std::snprintf(buf, sizeof(buf), "mAP@%.2f: %.4f\n", k, map);
      table = buf;
    } else if (task_s == "probe") {
      std::string probe_listener;
      maybe(j, "probe_listener", &probe_listener);
      if (probe_listener.empty())
        throw std::invalid_argument("probe task needs config key 'probe_listener'");
      d3desk::pipe::Models probe = models_from_checkpoint(probe_listener, 2);
      auto captions = d3desk::pipe::probe_captions(models, ds, ids);
      auto scores = d3desk::evals::discriminability_probe(ds, ids, captions,
                                                          *probe.detector,
                                                          *probe.listener, k);
      report["task"] = "probe";
      report["split"] = split_s;
      report["k"] = k;
      report["unique"] = scores.unique_acc;
      report["multiple"] = scores.multiple_acc;
      report["overall"] = scores.overall_acc;
      report["unique_n"] = scores.unique_n;
      report["multiple_n"] = scores.multiple_n;
      table = d3desk::evals::format_grounding_table(scores, k);
    } else {
      throw std::invalid_argument("unknown task '" + task_s +
                                  "' (captioning|grounding|detection|probe)");
    }

    {
      std::ofstream os(fs::path(out_dir) / "report.json");
      os << report.dump(2);
      if (!os) throw std::runtime_error("cannot write report in " + std::string(out_dir));
      std::ofstream ts(fs::path(out_dir) / "table.txt");
      ts << table;
    }
    std::cout << table;
    d3desk::data::write_manifest(out_dir, "eval --task " + task_s, j.dump(), 0,
                                 d3desk::data::dataset_content_hash(data),
                                 {(fs::path(out_dir) / "report.json").string()});
    if (report_json) {
      const std::string text = report.dump();
      *report_json = static_cast<char*>(std::malloc(text.size() + 1));
      std::memcpy(*report_json, text.c_str(), text.size() + 1);
    }
  });
}

void d3d_string_free(char* str) { std::free(str); }

}  // extern "C"
