#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "d3desk/dataset.hpp"
#include "d3desk/detector.hpp"
#include "d3desk/evalsuite.hpp"
#include "d3desk/listener.hpp"
#include "d3desk/speaker.hpp"

namespace d3desk::pipe {

struct ModelConfig {
  model::DetectorConfig detector;
  model::SpeakerConfig speaker;
  model::ListenerConfig listener;
};

ModelConfig default_model_config(int vocab_size);

// Flat JSON round trip of the architecture dimensions, stored in checkpoint
// metadata so evaluation can rebuild matching models.
std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

struct Models {
  std::unique_ptr<model::Detector> detector;
  std::unique_ptr<model::Speaker> speaker;
  std::unique_ptr<model::Listener> listener;
};

// Deterministic seeded initialization of all three modules.
Models make_models(const ModelConfig& cfg, uint64_t seed);

ad::NamedParams all_params(const Models& m);

void save_models(const std::string& path, const Models& m,
                 const ad::NamedParams& extra = {},
                 const std::map<std::string, std::string>& meta = {});
// Loads model parameters by name; extra entries in the file are ignored.
std::map<std::string, std::string> load_models(const std::string& path, Models& m);

// Inference drivers (parameters frozen, no graphs).
//
// Dense captioning (per-GT keep-highest-IoU rule, no NMS): one entry per GT
// object that some proposal overlaps.
std::vector<evals::CaptionEntry> caption_predictions(const Models& m,
                                                     const data::Dataset& ds,
                                                     const std::vector<std::string>& ids,
                                                     int beam = 0);

// Detection (NMS applied): one entry per kept proposal.
std::vector<evals::DetectionEntry> detection_predictions(
    const Models& m, const data::Dataset& ds, const std::vector<std::string>& ids);

struct GroundingPrediction {
  evals::GroundingEntry entry;
  int description_index = 0;
  std::vector<double> score_distribution;  // softmax over proposals
};
std::vector<GroundingPrediction> grounding_predictions(
    const Models& m, const data::Dataset& ds, const std::vector<std::string>& ids);

// Captions decoded from GT-derived proposals, for the reverse-task probe.
std::map<std::pair<std::string, int>, std::vector<int>> probe_captions(
    const Models& m, const data::Dataset& ds, const std::vector<std::string>& ids);

// JSON dump writers (eval-suite interchange formats).
void write_caption_dump(const std::string& path,
                        const std::vector<evals::CaptionEntry>& entries,
                        const data::Vocabulary& vocab);
void write_proposal_dump(const std::string& path,
                         const std::vector<evals::DetectionEntry>& entries);
void write_grounding_dump(const std::string& path,
                          const std::vector<GroundingPrediction>& entries);

}  // namespace d3desk::pipe
