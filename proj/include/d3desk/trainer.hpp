#pragma once

#include <string>

#include "d3desk/pipeline.hpp"
#include "d3desk/reward.hpp"

namespace d3desk::train {

struct TrainConfig {
  double lr_stage1 = 2e-3;
  double lr_later = 1e-3;
  int batch_scenes = 4;
  int descriptions_per_scene = 8;
  int iters_stage1 = 8000;
  int iters_stage2 = 4000;
  int iters_stage3 = 4000;
  int iters_stage4 = 2000;
  double extra_ratio = 0.0;     // stage 4 unannotated data, 0..1 of |train|
  rl::RewardWeights reward;     // alpha 0.1, beta 1.0
  int beam = 3;
  uint64_t seed = 1;
  bool freeze_detector_stage2 = false;
  bool ori_in_stage2 = true;    // relative-orientation proxy loss in stage 2
  bool stage3_gt_proposals = false;  // train the listener on GT-derived
                                     // proposals (the reverse-task probe
                                     // listener) instead of detections
  int checkpoint_every = 0;     // 0: final checkpoint only
  int log_every = 1;
  double jitter_sigma = 0.005;
  bool full_augment_stage1 = true;  // mirror/rotation only while pretraining
                                    // the detector; descriptions are written
                                    // in the unrotated scene frame
  pipe::ModelConfig model;
};

// Scene copy with jittered (optionally mirrored/rotated) coordinates and
// normals; GT boxes are recomputed from the transformed member points.
data::Scene augment_scene(const data::Scene& scene, Rng& rng, double jitter_sigma,
                          bool full);

// Stage-wise training. Artifacts per stage live under
// run_dir/stage{K}/: metrics.jsonl, {iter}.ckpt checkpoints, final.ckpt and
// (stage 4) rewards.jsonl. Stages 2-4 require the previous stage's final
// checkpoint in the same run_dir.
class Trainer {
 public:
  Trainer(const data::Dataset& ds, TrainConfig cfg);

  void run_stage(int stage, const std::string& run_dir, int resume_iter = 0);

  const pipe::Models& models() const { return models_; }
  pipe::Models& models() { return models_; }

  static std::string stage_dir(const std::string& run_dir, int stage);
  static std::string final_checkpoint(const std::string& run_dir, int stage);

 private:
  const data::Dataset& ds_;
  TrainConfig cfg_;
  pipe::Models models_;

  struct StageIO;
  void stage1(StageIO& io);
  void stage2(StageIO& io);
  void stage3(StageIO& io);
  void stage4(StageIO& io);

  std::vector<std::string> sample_batch(const std::vector<std::string>& pool, Rng& rng) const;
};

}  // namespace d3desk::train
