#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "d3desk/language.hpp"
#include "d3desk/scene_gen.hpp"

namespace d3desk::data {

struct DatasetConfig {
  int train_scenes = 500;
  int val_scenes = 100;
  int extra_scenes = 500;  // unannotated re-scans
  uint64_t seed = 0;
  GenConfig gen;
  LangConfig lang;
};

struct SplitLists {
  std::vector<std::string> train, val, extra;
};

struct Dataset {
  std::string root;
  SplitLists split;
  Vocabulary vocab;
  std::map<std::string, Scene> scenes;

  const Scene& scene(const std::string& id) const;
  // (scene_id, object index) pairs for every annotated description target.
  std::vector<std::pair<std::string, int>> annotated_pairs(
      const std::vector<std::string>& ids) const;
};

// Writes scenes/, vocab.json and manifest.json under out_dir. Refuses to
// write into a non-empty directory unless force is set.
void synthesize_dataset(const DatasetConfig& cfg, const std::string& out_dir, bool force,
                        const std::string& command_line = "");

Dataset load_dataset(const std::string& root);

// floor(ratio * annotated_count) ids sampled with replacement from the extra
// pool. ratio 0 yields an empty list; a nonzero ratio over an empty pool is a
// configuration error.
std::vector<std::string> sample_extra(const std::vector<std::string>& extra_ids,
                                      double ratio, size_t annotated_count, Rng& rng);

// FNV-1a over the dataset's scene files and vocabulary, stable across runs.
std::string dataset_content_hash(const std::string& root);

// Shared manifest writer: every artifact directory gets exactly one.
void write_manifest(const std::string& dir, const std::string& command,
                    const std::string& config_json, uint64_t seed,
                    const std::string& dataset_hash,
                    const std::vector<std::string>& outputs);

}  // namespace d3desk::data
