#pragma once

#include <string>
#include <vector>

#include "d3desk/geometry.hpp"

namespace d3desk::data {

struct GtObject {
  int instance_id = 0;
  int semantic_class = 0;  // object classes only; never the floor class
  geom::AABB bbox;         // min/max of the object's member points
  std::vector<std::vector<int>> descriptions;  // token ids incl. sos/eos; empty if unannotated
};

// One synthetic scan: a point cloud with per-point features and labels plus
// ground-truth objects. The floor carries instance label -1 and the semantic
// class num_classes (one past the object classes).
struct Scene {
  std::string scene_id;
  std::vector<geom::Vec3> points;
  std::vector<std::vector<double>> features;  // N x F, default F=6 (color + normal)
  std::vector<int> semantic_labels;
  std::vector<int> instance_labels;
  std::vector<GtObject> gt_objects;
  bool annotated = false;

  int num_points() const { return static_cast<int>(points.size()); }
  int feature_dim() const { return features.empty() ? 0 : static_cast<int>(features[0].size()); }
  const GtObject* object_by_instance(int instance_id) const;
};

// JSON round trip. Ids and labels are exact; coordinates survive to full
// double precision. Schema violations throw with a JSON-pointer-style path.
void save_scene(const Scene& scene, const std::string& path);
Scene load_scene(const std::string& path);

std::string scene_to_json_string(const Scene& scene);
Scene scene_from_json_string(const std::string& text);

}  // namespace d3desk::data
