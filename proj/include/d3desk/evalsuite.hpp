#pragma once

#include <map>
#include <string>
#include <vector>

#include "d3desk/dataset.hpp"
#include "d3desk/detector.hpp"
#include "d3desk/listener.hpp"

namespace d3desk::evals {

// One kept prediction per GT object (highest-IoU proposal rule applied by the
// caller). Objects without an entry count as misses.
struct CaptionEntry {
  std::string scene_id;
  int object_index = 0;       // index into scene.gt_objects
  double iou = 0;             // IoU of the predicting box against the GT box
  geom::AABB bbox;            // the predicting proposal's box
  std::vector<int> tokens;    // caption including sos/eos
};

struct CaptionScores {
  double cider = 0, bleu4 = 0, rouge = 0;  // m@kIoU averages over GT objects
  int num_objects = 0;
  int num_predicted = 0;
};

CaptionScores caption_eval(const std::vector<CaptionEntry>& predictions,
                           const data::Dataset& ds, const std::vector<std::string>& ids,
                           double k);

struct GroundingEntry {
  std::string scene_id;
  int object_index = 0;   // the described GT object
  geom::AABB chosen;      // predicted box
  bool failed = false;    // no proposals: counted as a miss
};

struct GroundingScores {
  double unique_acc = 0, multiple_acc = 0, overall_acc = 0;
  int unique_n = 0, multiple_n = 0;
};

GroundingScores grounding_eval(const std::vector<GroundingEntry>& predictions,
                               const data::Dataset& ds, double k);

struct DetectionEntry {
  std::string scene_id;
  geom::AABB box;
  double score = 0;
  int predicted_class = 0;
};

// Per-class average precision (all-point interpolation, greedy score-ordered
// matching, one match per GT), averaged over classes present in the GT.
double detection_eval(const std::vector<DetectionEntry>& detections,
                      const data::Dataset& ds, const std::vector<std::string>& ids,
                      double k);

// Reverse-task probe: grounds generated captions among GT-derived proposals
// with a frozen listener. captions keys are (scene_id, object_index).
GroundingScores discriminability_probe(
    const data::Dataset& ds, const std::vector<std::string>& ids,
    const std::map<std::pair<std::string, int>, std::vector<int>>& captions,
    const model::Detector& detector, const model::Listener& listener, double k);

// Plain-text tables for reports.
std::string format_caption_table(const CaptionScores& s, double map_at_k, double k);
std::string format_grounding_table(const GroundingScores& s, double k);

// GT instance member lists in gt_objects order (instance label -> points).
std::vector<std::vector<int>> gt_instance_members(const data::Scene& scene);

}  // namespace d3desk::evals
