#include "d3desk/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#include "d3desk/cider.hpp"
#include "d3desk/text_metrics.hpp"

namespace d3desk::evals {

namespace {

std::vector<int> strip_specials(const std::vector<int>& tokens) {
  std::vector<int> out;
  for (int t : tokens)
    if (t != data::Vocabulary::kPad && t != data::Vocabulary::kSos &&
        t != data::Vocabulary::kEos)
      out.push_back(t);
  return out;
}

std::string object_key(const std::string& scene_id, int object_index) {
  return scene_id + "#" + std::to_string(object_index);
}

}  // namespace

std::vector<std::vector<int>> gt_instance_members(const data::Scene& scene) {
  std::vector<std::vector<int>> members(scene.gt_objects.size());
  std::map<int, int> by_instance;
  for (size_t oi = 0; oi < scene.gt_objects.size(); ++oi)
    by_instance[scene.gt_objects[oi].instance_id] = static_cast<int>(oi);
  for (int i = 0; i < scene.num_points(); ++i) {
    const int id = scene.instance_labels[static_cast<size_t>(i)];
    if (id < 0) continue;
    auto it = by_instance.find(id);
    if (it != by_instance.end()) members[static_cast<size_t>(it->second)].push_back(i);
  }
  return members;
}

CaptionScores caption_eval(const std::vector<CaptionEntry>& predictions,
                           const data::Dataset& ds, const std::vector<std::string>& ids,
                           double k) {
  // Reference corpus over every annotated GT object in the split.
  std::map<std::string, std::vector<std::vector<int>>> refs;
  const std::set<std::string> id_set(ids.begin(), ids.end());
  for (const auto& id : ids) {
    const data::Scene& s = ds.scene(id);
    for (size_t oi = 0; oi < s.gt_objects.size(); ++oi) {
      std::vector<std::vector<int>> stripped;
      for (const auto& d : s.gt_objects[oi].descriptions)
        stripped.push_back(strip_specials(d));
      if (!stripped.empty())
        refs[object_key(id, static_cast<int>(oi))] = std::move(stripped);
    }
  }
  if (refs.empty()) throw std::runtime_error("caption_eval: split has no references");
  metrics::CiderCorpus corpus = metrics::CiderCorpus::fit(refs);

  std::map<std::string, const CaptionEntry*> by_key;
  for (const auto& p : predictions) {
    if (!id_set.count(p.scene_id))
      throw std::runtime_error("caption_eval: prediction for unknown scene " + p.scene_id);
    const data::Scene& s = ds.scene(p.scene_id);
    if (p.object_index < 0 || p.object_index >= static_cast<int>(s.gt_objects.size()))
      throw std::runtime_error("caption_eval: prediction for unknown object in " +
                               p.scene_id);
    const std::string key = object_key(p.scene_id, p.object_index);
    if (by_key.count(key))
      throw std::runtime_error("caption_eval: multiple predictions for " + key);
    by_key[key] = &p;
  }

  CaptionScores out;
  for (const auto& [key, reflist] : refs) {
    ++out.num_objects;
    auto it = by_key.find(key);
    if (it == by_key.end()) continue;
    const CaptionEntry& e = *it->second;
    ++out.num_predicted;
    if (e.iou < k) continue;
    const std::vector<int> cand = strip_specials(e.tokens);
    std::vector<std::vector<int>> reference_tokens = reflist;
    out.cider += corpus.score(key, cand);
    out.bleu4 += metrics::bleu4(cand, reference_tokens);
    out.rouge += metrics::rouge_l(cand, reference_tokens);
  }
  if (out.num_objects > 0) {
    out.cider /= out.num_objects;
    out.bleu4 /= out.num_objects;
    out.rouge /= out.num_objects;
  }
  return out;
}

GroundingScores grounding_eval(const std::vector<GroundingEntry>& predictions,
                               const data::Dataset& ds, double k) {
  GroundingScores out;
  int unique_hit = 0, multiple_hit = 0;
  for (const auto& p : predictions) {
    const data::Scene& s = ds.scene(p.scene_id);
    const data::GtObject& target = s.gt_objects.at(static_cast<size_t>(p.object_index));
    int class_count = 0;
    for (const auto& o : s.gt_objects)
      if (o.semantic_class == target.semantic_class) ++class_count;
    const bool correct = !p.failed && geom::iou(p.chosen, target.bbox) >= k;
    if (class_count == 1) {
      ++out.unique_n;
      if (correct) ++unique_hit;
    } else {
      ++out.multiple_n;
      if (correct) ++multiple_hit;
    }
  }
  out.unique_acc = out.unique_n ? static_cast<double>(unique_hit) / out.unique_n : 0.0;
  out.multiple_acc =
      out.multiple_n ? static_cast<double>(multiple_hit) / out.multiple_n : 0.0;
  const int total = out.unique_n + out.multiple_n;
  out.overall_acc =
      total ? static_cast<double>(unique_hit + multiple_hit) / total : 0.0;
  return out;
}

double detection_eval(const std::vector<DetectionEntry>& detections,
                      const data::Dataset& ds, const std::vector<std::string>& ids,
                      double k) {
  // GT boxes per (scene, class).
  std::set<int> classes;
  std::map<std::string, std::vector<const data::GtObject*>> gt;
  int total_gt = 0;
  for (const auto& id : ids) {
    const data::Scene& s = ds.scene(id);
    for (const auto& o : s.gt_objects) {
      classes.insert(o.semantic_class);
      gt[id].push_back(&o);
      ++total_gt;
    }
  }
  if (total_gt == 0) return 0.0;

  double ap_sum = 0;
  for (int cls : classes) {
    std::vector<int> order;
    for (size_t i = 0; i < detections.size(); ++i)
      if (detections[i].predicted_class == cls) order.push_back(static_cast<int>(i));
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return detections[static_cast<size_t>(a)].score >
             detections[static_cast<size_t>(b)].score;
    });
    int class_gt = 0;
    std::map<std::string, std::vector<char>> used;
    for (const auto& [id, objs] : gt) {
      used[id].assign(objs.size(), 0);
      for (const auto* o : objs)
        if (o->semantic_class == cls) ++class_gt;
    }
    std::vector<double> precision, recall;
    int tp = 0, fp = 0;
    for (int di : order) {
      const DetectionEntry& d = detections[static_cast<size_t>(di)];
      auto git = gt.find(d.scene_id);
      int best = -1;
      double best_iou = k;
      if (git != gt.end()) {
        for (size_t g = 0; g < git->second.size(); ++g) {
          if (git->second[g]->semantic_class != cls) continue;
          if (used[d.scene_id][g]) continue;
          const double v = geom::iou(d.box, git->second[g]->bbox);
          if (v >= best_iou) {
            best_iou = v;
            best = static_cast<int>(g);
          }
        }
      }
      if (best >= 0) {
        used[d.scene_id][static_cast<size_t>(best)] = 1;
        ++tp;
      } else {
        ++fp;
      }
      precision.push_back(static_cast<double>(tp) / (tp + fp));
      recall.push_back(static_cast<double>(tp) / class_gt);
    }
    // All-point interpolation: running max of precision from the right.
    double ap = 0;
    double penv = 0;
    std::vector<double> env(precision.size());
    for (int i = static_cast<int>(precision.size()) - 1; i >= 0; --i) {
      penv = std::max(penv, precision[static_cast<size_t>(i)]);
      env[static_cast<size_t>(i)] = penv;
    }
    double prev_r = 0;
    for (size_t i = 0; i < env.size(); ++i) {
      ap += (recall[i] - prev_r) * env[i];
      prev_r = recall[i];
    }
    ap_sum += ap;
  }
  return ap_sum / static_cast<double>(classes.size());
}

GroundingScores discriminability_probe(
    const data::Dataset& ds, const std::vector<std::string>& ids,
    const std::map<std::pair<std::string, int>, std::vector<int>>& captions,
    const model::Detector& detector, const model::Listener& listener, double k) {
  ad::NoGradGuard ng;
  std::vector<GroundingEntry> entries;
  for (const auto& id : ids) {
    const data::Scene& s = ds.scene(id);
    auto members = gt_instance_members(s);
    if (members.empty()) continue;
    auto proposals = detector.proposals_from_members(s, members);
    ad::Tensor inputs = listener.proposal_inputs(proposals);
    for (size_t oi = 0; oi < s.gt_objects.size(); ++oi) {
      auto it = captions.find({id, static_cast<int>(oi)});
      if (it == captions.end()) continue;
      model::LanguageEncoding lang = listener.encode_language(it->second);
      model::FusionOutput fused = listener.fuse(lang, inputs);
      GroundingEntry e;
      e.scene_id = id;
      e.object_index = static_cast<int>(oi);
      e.chosen = proposals[static_cast<size_t>(model::Listener::ground(fused))].bbox;
      entries.push_back(std::move(e));
    }
  }
  return grounding_eval(entries, ds, k);
}

std::string format_caption_table(const CaptionScores& s, double map_at_k, double k) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-12s %10s %12s %10s | %8s\n", "",
                ("C@" + std::to_string(k).substr(0, 4) + "IoU").c_str(),
                ("B-4@" + std::to_string(k).substr(0, 4) + "IoU").c_str(),
                ("R@" + std::to_string(k).substr(0, 4) + "IoU").c_str(), "mAP");
  os << buf;
  std::snprintf(buf, sizeof(buf), "%-12s %10.2f %12.2f %10.2f | %8.2f\n", "ours",
                s.cider, 100.0 * s.bleu4, 100.0 * s.rouge, 100.0 * map_at_k);
  os << buf;
  return os.str();
}

std::string format_grounding_table(const GroundingScores& s, double k) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-12s %10s %10s %10s   (Acc@%.2fIoU)\n", "", "Unique",
                "Multiple", "Overall", k);
  os << buf;
  std::snprintf(buf, sizeof(buf), "%-12s %10.2f %10.2f %10.2f\n", "ours",
                100.0 * s.unique_acc, 100.0 * s.multiple_acc, 100.0 * s.overall_acc);
  os << buf;
  return os.str();
}

}  // namespace d3desk::evals
