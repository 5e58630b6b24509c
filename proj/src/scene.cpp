#include "d3desk/scene.hpp"

#include <fstream>
#include <json.hpp>
#include <stdexcept>

namespace d3desk::data {

using json = nlohmann::ordered_json;

namespace {

[[noreturn]] void parse_error(const std::string& pointer, const std::string& what) {
  throw std::runtime_error("scene parse error at " + pointer + ": " + what);
}

const json& require(const json& j, const char* key, const std::string& parent) {
  auto it = j.find(key);
  if (it == j.end()) parse_error(parent + "/" + key, "missing field");
  return *it;
}

json aabb_to_json(const geom::AABB& b) {
  return json{{"min", {b.mn[0], b.mn[1], b.mn[2]}}, {"max", {b.mx[0], b.mx[1], b.mx[2]}}};
}

geom::AABB aabb_from_json(const json& j, const std::string& path) {
  const json& mn = require(j, "min", path);
  const json& mx = require(j, "max", path);
  if (!mn.is_array() || mn.size() != 3) parse_error(path + "/min", "expected 3 numbers");
  if (!mx.is_array() || mx.size() != 3) parse_error(path + "/max", "expected 3 numbers");
  geom::AABB b;
  for (int d = 0; d < 3; ++d) {
    b.mn[d] = mn[static_cast<size_t>(d)].get<double>();
    b.mx[d] = mx[static_cast<size_t>(d)].get<double>();
  }
  return b;
}

}  // namespace

const GtObject* Scene::object_by_instance(int instance_id) const {
  for (const auto& o : gt_objects)
    if (o.instance_id == instance_id) return &o;
  return nullptr;
}

std::string scene_to_json_string(const Scene& scene) {
  json j;
  j["scene_id"] = scene.scene_id;
  j["annotated"] = scene.annotated;
  json pts = json::array();
  for (const auto& p : scene.points) pts.push_back({p[0], p[1], p[2]});
  j["points"] = std::move(pts);
  j["features"] = scene.features;
  j["semantic_labels"] = scene.semantic_labels;
  j["instance_labels"] = scene.instance_labels;
  json objs = json::array();
  for (const auto& o : scene.gt_objects) {
    json jo;
    jo["instance_id"] = o.instance_id;
    jo["semantic_class"] = o.semantic_class;
    jo["bbox"] = aabb_to_json(o.bbox);
    if (scene.annotated) jo["descriptions"] = o.descriptions;
    objs.push_back(std::move(jo));
  }
  j["gt_objects"] = std::move(objs);
  return j.dump();
}

Scene scene_from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    parse_error("/", e.what());
  }
  Scene s;
  s.scene_id = require(j, "scene_id", "").get<std::string>();
  s.annotated = require(j, "annotated", "").get<bool>();
  const json& pts = require(j, "points", "");
  if (!pts.is_array()) parse_error("/points", "expected array");
  s.points.reserve(pts.size());
  for (size_t i = 0; i < pts.size(); ++i) {
    const json& p = pts[i];
    if (!p.is_array() || p.size() != 3)
      parse_error("/points/" + std::to_string(i), "expected 3 numbers");
    s.points.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
  }
  s.features = require(j, "features", "").get<std::vector<std::vector<double>>>();
  s.semantic_labels = require(j, "semantic_labels", "").get<std::vector<int>>();
  s.instance_labels = require(j, "instance_labels", "").get<std::vector<int>>();
  if (s.features.size() != s.points.size())
    parse_error("/features", "row count does not match /points");
  if (s.semantic_labels.size() != s.points.size())
    parse_error("/semantic_labels", "length does not match /points");
  if (s.instance_labels.size() != s.points.size())
    parse_error("/instance_labels", "length does not match /points");
  const json& objs = require(j, "gt_objects", "");
  for (size_t i = 0; i < objs.size(); ++i) {
    const std::string path = "/gt_objects/" + std::to_string(i);
    const json& jo = objs[i];
    GtObject o;
    o.instance_id = require(jo, "instance_id", path).get<int>();
    o.semantic_class = require(jo, "semantic_class", path).get<int>();
    o.bbox = aabb_from_json(require(jo, "bbox", path), path + "/bbox");
    if (s.annotated)
      o.descriptions =
          require(jo, "descriptions", path).get<std::vector<std::vector<int>>>();
    s.gt_objects.push_back(std::move(o));
  }
  return s;
}

void save_scene(const Scene& scene, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_scene: cannot open " + path);
  os << scene_to_json_string(scene);
  if (!os) throw std::runtime_error("save_scene: write failed for " + path);
}

Scene load_scene(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_scene: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return scene_from_json_string(text);
}

}  // namespace d3desk::data
