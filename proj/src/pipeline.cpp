#include "d3desk/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

namespace d3desk::pipe {

using json = nlohmann::ordered_json;

ModelConfig default_model_config(int vocab_size) {
  ModelConfig cfg;
  cfg.speaker.vocab = vocab_size;
  cfg.speaker.proposal_dim = cfg.detector.proposal_dim;
  cfg.listener.vocab = vocab_size;
  cfg.listener.proposal_dim = cfg.detector.proposal_dim;
  cfg.listener.num_classes = cfg.detector.num_classes;
  return cfg;
}

std::string model_config_to_json(const ModelConfig& cfg) {
  json j;
  j["feature_dim"] = cfg.detector.feature_dim;
  j["num_classes"] = cfg.detector.num_classes;
  j["det_hidden"] = cfg.detector.hidden;
  j["proposal_dim"] = cfg.detector.proposal_dim;
  j["voxel_size"] = cfg.detector.voxel_size;
  j["context_voxel"] = cfg.detector.context_voxel;
  j["cluster_radius"] = cfg.detector.cluster_radius;
  j["min_cluster_points"] = cfg.detector.min_cluster_points;
  j["score_threshold"] = cfg.detector.score_threshold;
  j["nms_iou"] = cfg.detector.nms_iou;
  j["vocab"] = cfg.speaker.vocab;
  j["spk_embed"] = cfg.speaker.embed_dim;
  j["spk_hidden"] = cfg.speaker.hidden;
  j["spk_att"] = cfg.speaker.att_hidden;
  j["spk_edge"] = cfg.speaker.edge_hidden;
  j["k_neighbors"] = cfg.speaker.k_neighbors;
  j["t_max"] = cfg.speaker.t_max;
  j["lis_embed"] = cfg.listener.embed_dim;
  j["lis_lang"] = cfg.listener.lang_hidden;
  j["lis_width"] = cfg.listener.width;
  j["lis_heads"] = cfg.listener.heads;
  j["lis_layers"] = cfg.listener.layers;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  const json j = json::parse(text);
  ModelConfig cfg = default_model_config(j.at("vocab").get<int>());
  cfg.detector.feature_dim = j.at("feature_dim").get<int>();
  cfg.detector.num_classes = j.at("num_classes").get<int>();
  cfg.detector.hidden = j.at("det_hidden").get<int>();
  cfg.detector.proposal_dim = j.at("proposal_dim").get<int>();
  cfg.detector.voxel_size = j.at("voxel_size").get<double>();
  cfg.detector.context_voxel = j.at("context_voxel").get<double>();
  cfg.detector.cluster_radius = j.at("cluster_radius").get<double>();
  cfg.detector.min_cluster_points = j.at("min_cluster_points").get<int>();
  cfg.detector.score_threshold = j.at("score_threshold").get<double>();
  cfg.detector.nms_iou = j.at("nms_iou").get<double>();
  cfg.speaker.embed_dim = j.at("spk_embed").get<int>();
  cfg.speaker.hidden = j.at("spk_hidden").get<int>();
  cfg.speaker.att_hidden = j.at("spk_att").get<int>();
  cfg.speaker.edge_hidden = j.at("spk_edge").get<int>();
  cfg.speaker.k_neighbors = j.at("k_neighbors").get<int>();
  cfg.speaker.t_max = j.at("t_max").get<int>();
  cfg.listener.embed_dim = j.at("lis_embed").get<int>();
  cfg.listener.lang_hidden = j.at("lis_lang").get<int>();
  cfg.listener.width = j.at("lis_width").get<int>();
  cfg.listener.heads = j.at("lis_heads").get<int>();
  cfg.listener.layers = j.at("lis_layers").get<int>();
  cfg.speaker.proposal_dim = cfg.detector.proposal_dim;
  cfg.listener.proposal_dim = cfg.detector.proposal_dim;
  cfg.listener.num_classes = cfg.detector.num_classes;
  return cfg;
}

Models make_models(const ModelConfig& cfg, uint64_t seed) {
  Models m;
  Rng det_rng(seed * 3 + 1);
  Rng spk_rng(seed * 3 + 2);
  Rng lis_rng(seed * 3 + 3);
  m.detector = std::make_unique<model::Detector>(cfg.detector, det_rng);
  m.speaker = std::make_unique<model::Speaker>(cfg.speaker, spk_rng);
  m.listener = std::make_unique<model::Listener>(cfg.listener, lis_rng);
  return m;
}

ad::NamedParams all_params(const Models& m) {
  ad::NamedParams out = m.detector->named_params();
  for (auto& p : m.speaker->named_params()) out.push_back(p);
  for (auto& p : m.listener->named_params()) out.push_back(p);
  return out;
}

void save_models(const std::string& path, const Models& m, const ad::NamedParams& extra,
                 const std::map<std::string, std::string>& meta) {
  ad::NamedParams params = all_params(m);
  for (const auto& p : extra) params.push_back(p);
  ad::save_checkpoint(path, params, meta);
}

std::map<std::string, std::string> load_models(const std::string& path, Models& m) {
  ad::NamedParams params = all_params(m);
  std::map<std::string, std::string> meta;
  ad::load_into(path, params, &meta);
  return meta;
}

std::vector<evals::CaptionEntry> caption_predictions(const Models& m,
                                                     const data::Dataset& ds,
                                                     const std::vector<std::string>& ids,
                                                     int beam) {
  ad::NoGradGuard ng;
  std::vector<evals::CaptionEntry> out;
  for (const auto& id : ids) {
    const data::Scene& s = ds.scene(id);
    model::DetectorOutput det = m.detector->detect(s, /*eval_mode=*/false);
    if (det.proposals.empty()) continue;
    model::MessagePassingOut mp = m.speaker->message_passing(det.proposals);
    // Each proposal is assigned to its highest-IoU GT; proposals assigned to
    // the same GT keep only the highest-IoU one.
    std::vector<int> kept(s.gt_objects.size(), -1);
    std::vector<double> kept_iou(s.gt_objects.size(), 0.0);
    for (size_t pi = 0; pi < det.proposals.size(); ++pi) {
      int assigned = -1;
      double best = 0;
      for (size_t oi = 0; oi < s.gt_objects.size(); ++oi) {
        const double v = geom::iou(det.proposals[pi].bbox, s.gt_objects[oi].bbox);
        if (v > best) {
          best = v;
          assigned = static_cast<int>(oi);
        }
      }
      if (assigned >= 0 && best > kept_iou[static_cast<size_t>(assigned)]) {
        kept_iou[static_cast<size_t>(assigned)] = best;
        kept[static_cast<size_t>(assigned)] = static_cast<int>(pi);
      }
    }
    for (size_t oi = 0; oi < s.gt_objects.size(); ++oi) {
      if (kept[oi] < 0) continue;
      model::TokenSeq seq =
          beam > 1 ? m.speaker->decode_beam(mp, kept[oi], m.speaker->config().t_max, beam)[0]
                   : m.speaker->decode_greedy(mp, kept[oi], m.speaker->config().t_max);
      evals::CaptionEntry e;
      e.scene_id = id;
      e.object_index = static_cast<int>(oi);
      e.iou = kept_iou[oi];
      e.bbox = det.proposals[static_cast<size_t>(kept[oi])].bbox;
      e.tokens = seq.tokens;
      out.push_back(std::move(e));
    }
  }
  return out;
}

std::vector<evals::DetectionEntry> detection_predictions(
    const Models& m, const data::Dataset& ds, const std::vector<std::string>& ids) {
  ad::NoGradGuard ng;
  std::vector<evals::DetectionEntry> out;
  for (const auto& id : ids) {
    model::DetectorOutput det = m.detector->detect(ds.scene(id), /*eval_mode=*/true);
    for (const auto& p : det.proposals)
      out.push_back({id, p.bbox, p.score, p.predicted_class});
  }
  return out;
}

std::vector<GroundingPrediction> grounding_predictions(
    const Models& m, const data::Dataset& ds, const std::vector<std::string>& ids) {
  ad::NoGradGuard ng;
  std::vector<GroundingPrediction> out;
  for (const auto& id : ids) {
    const data::Scene& s = ds.scene(id);
    model::DetectorOutput det = m.detector->detect(s, /*eval_mode=*/true);
    ad::Tensor inputs;
    if (!det.proposals.empty()) inputs = m.listener->proposal_inputs(det.proposals);
    for (size_t oi = 0; oi < s.gt_objects.size(); ++oi) {
      for (size_t di = 0; di < s.gt_objects[oi].descriptions.size(); ++di) {
        GroundingPrediction gp;
        gp.entry.scene_id = id;
        gp.entry.object_index = static_cast<int>(oi);
        gp.description_index = static_cast<int>(di);
        if (det.proposals.empty()) {
          gp.entry.failed = true;
        } else {
          model::LanguageEncoding lang =
              m.listener->encode_language(s.gt_objects[oi].descriptions[di]);
          model::FusionOutput fused = m.listener->fuse(lang, inputs);
          const int pick = model::Listener::ground(fused);
          gp.entry.chosen = det.proposals[static_cast<size_t>(pick)].bbox;
          ad::Tensor dist = ad::softmax(fused.matching_logits);
          for (ad::Scalar v : dist.v()) gp.score_distribution.push_back(static_cast<double>(v));
        }
        out.push_back(std::move(gp));
      }
    }
  }
  return out;
}

std::map<std::pair<std::string, int>, std::vector<int>> probe_captions(
    const Models& m, const data::Dataset& ds, const std::vector<std::string>& ids) {
  ad::NoGradGuard ng;
  std::map<std::pair<std::string, int>, std::vector<int>> out;
  for (const auto& id : ids) {
    const data::Scene& s = ds.scene(id);
    auto members = evals::gt_instance_members(s);
    if (members.empty()) continue;
    auto proposals = m.detector->proposals_from_members(s, members);
    model::MessagePassingOut mp = m.speaker->message_passing(proposals);
    for (size_t oi = 0; oi < proposals.size(); ++oi) {
      model::TokenSeq seq =
          m.speaker->decode_greedy(mp, static_cast<int>(oi), m.speaker->config().t_max);
      out[{id, static_cast<int>(oi)}] = seq.tokens;
    }
  }
  return out;
}

namespace {

json aabb_json(const geom::AABB& b) {
  return json{{"min", {b.mn[0], b.mn[1], b.mn[2]}}, {"max", {b.mx[0], b.mx[1], b.mx[2]}}};
}

void dump_to(const std::string& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("dump: cannot open " + path);
  os << j.dump(2);
}

}  // namespace

void write_caption_dump(const std::string& path,
                        const std::vector<evals::CaptionEntry>& entries,
                        const data::Vocabulary& vocab) {
  json j = json::object();
  for (const auto& e : entries) {
    json item;
    item["object_index"] = e.object_index;
    item["iou"] = e.iou;
    item["bbox"] = aabb_json(e.bbox);
    item["tokens"] = e.tokens;
    item["text"] = vocab.decode(e.tokens);
    j[e.scene_id][std::to_string(e.object_index)] = std::move(item);
  }
  dump_to(path, j);
}

void write_proposal_dump(const std::string& path,
                         const std::vector<evals::DetectionEntry>& entries) {
  json j = json::object();
  for (const auto& e : entries) {
    json item;
    item["bbox"] = aabb_json(e.box);
    item["score"] = e.score;
    item["class"] = e.predicted_class;
    j[e.scene_id].push_back(std::move(item));
  }
  dump_to(path, j);
}

void write_grounding_dump(const std::string& path,
                          const std::vector<GroundingPrediction>& entries) {
  json j = json::array();
  for (const auto& e : entries) {
    json item;
    item["scene_id"] = e.entry.scene_id;
    item["object_index"] = e.entry.object_index;
    item["description_index"] = e.description_index;
    item["failed"] = e.entry.failed;
    if (!e.entry.failed) {
      item["chosen_bbox"] = aabb_json(e.entry.chosen);
      item["scores"] = e.score_distribution;
    }
    j.push_back(std::move(item));
  }
  dump_to(path, j);
}

}  // namespace d3desk::pipe
