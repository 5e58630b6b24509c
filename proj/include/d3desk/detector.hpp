#pragma once

#include <vector>

#include "d3desk/geometry.hpp"
#include "d3desk/ops.hpp"
#include "d3desk/optim.hpp"
#include "d3desk/rng.hpp"
#include "d3desk/scene.hpp"

namespace d3desk::model {

struct DetectorConfig {
  int feature_dim = 6;
  int num_classes = 10;     // object classes; the floor class is num_classes
  int hidden = 96;
  int proposal_dim = 128;
  double voxel_size = 0.05;        // fine context voxels
  double context_voxel = 0.50;     // coarse (object-scale) context voxels
  double column_cell = 0.25;       // xy column context (full z extent)
  double cluster_radius = 0.15;
  int min_cluster_points = 20;
  double score_threshold = 0.09;
  double nms_iou = 0.3;
  double dir_eps = 1e-6;           // skip points this close to their centroid
  double score_ramp_lo = 0.25;     // soft objectness target: IoU ramp
  double score_ramp_hi = 0.75;
};

struct Proposal {
  std::vector<int> point_indices;
  double score = 0;
  ad::Tensor score_logit;   // [1]
  ad::Tensor feature;       // [proposal_dim]
  geom::AABB bbox;
  int predicted_class = -1;
};

struct DetectorOutput {
  ad::Tensor sem_logits;   // [N, C+1]
  ad::Tensor offsets;      // [N, 3]
  ad::Tensor embeddings;   // [N, H]
  std::vector<int> sem_pred;
  // Every scored cluster (pre-filter), for the objectness loss.
  std::vector<Proposal> clusters;
  // Filtered (and, in eval mode, NMS-suppressed) proposals, score-descending.
  std::vector<Proposal> proposals;
};

struct DetectionLoss {
  ad::Tensor total, sem, offset_reg, offset_dir, cluster_score;
  int dir_points = 0;
  int scored_clusters = 0;
};

// Point-wise encoder with voxel-mean context, semantic/offset heads, radius
// clustering on both original and offset-shifted coordinates, and an
// objectness MLP over pooled (mean|max) cluster features.
class Detector {
 public:
  Detector(DetectorConfig cfg, Rng& rng);

  const DetectorConfig& config() const { return cfg_; }
  ad::NamedParams named_params(const std::string& prefix = "detector.") const;

  DetectorOutput detect(const data::Scene& scene, bool eval_mode) const;
  DetectionLoss detection_loss(const DetectorOutput& out, const data::Scene& scene) const;

  // Proposals built from given member index sets (e.g. GT instances),
  // pooled through the same ScoreNet path as detected clusters.
  std::vector<Proposal> proposals_from_members(
      const data::Scene& scene, const std::vector<std::vector<int>>& members) const;

  // Connected components of the radius graph restricted to same-class,
  // non-floor points. Exposed for the clustering oracle tests.
  static std::vector<std::vector<int>> cluster_points(
      const std::vector<geom::Vec3>& coords, const std::vector<int>& point_class,
      int floor_class, double radius, int min_points);

 private:
  DetectorConfig cfg_;
  ad::Tensor w1_, b1_, w2_, b2_, wsem_, bsem_, woff_, boff_;
  ad::Tensor wscore1_, bscore1_, wscore2_, bscore2_;

  ad::Tensor encode(const data::Scene& scene) const;  // [N, H]
  std::vector<Proposal> score_members(const data::Scene& scene,
                                      const ad::Tensor& embeddings,
                                      const std::vector<std::vector<int>>& members) const;
};

}  // namespace d3desk::model
