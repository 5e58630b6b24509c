#include "d3desk/dataset.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

namespace d3desk::data {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

const Scene& Dataset::scene(const std::string& id) const {
  auto it = scenes.find(id);
  if (it == scenes.end()) throw std::runtime_error("dataset: unknown scene " + id);
  return it->second;
}

std::vector<std::pair<std::string, int>> Dataset::annotated_pairs(
    const std::vector<std::string>& ids) const {
  std::vector<std::pair<std::string, int>> out;
  for (const auto& id : ids) {
    const Scene& s = scene(id);
    if (!s.annotated) continue;
    for (size_t oi = 0; oi < s.gt_objects.size(); ++oi)
      if (!s.gt_objects[oi].descriptions.empty())
        out.emplace_back(id, static_cast<int>(oi));
  }
  return out;
}

namespace {

uint64_t scene_seed(uint64_t base, int split_tag, int index) {
  // Stable per-scene seed; split tags keep train/val/extra streams disjoint.
  return base * 1000003ull + static_cast<uint64_t>(split_tag) * 10000019ull +
         static_cast<uint64_t>(index);
}

std::string now_iso8601() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof(buf), "%FT%TZ", std::gmtime(&t));
  return buf;
}

}  // namespace

void synthesize_dataset(const DatasetConfig& cfg, const std::string& out_dir, bool force,
                        const std::string& command_line) {
  const fs::path root(out_dir);
  if (fs::exists(root) && !fs::is_empty(root) && !force)
    throw std::runtime_error("synthesize_dataset: " + out_dir +
                             " is not empty (use force to overwrite)");
  fs::create_directories(root / "scenes");

  SplitLists split;
  auto make_split = [&](int count, int tag, bool annotated,
                        std::vector<std::string>& ids) {
    for (int i = 0; i < count; ++i) {
      const uint64_t seed = scene_seed(cfg.seed, tag, i);
      Scene scene = generate_scene(seed, cfg.gen);
      if (annotated) {
        Rng lang_rng(seed ^ 0xa5a5a5a5a5a5a5a5ull);
        generate_descriptions(scene, cfg.lang, lang_rng);
      }
      save_scene(scene, (root / "scenes" / (scene.scene_id + ".json")).string());
      ids.push_back(scene.scene_id);
    }
  };
  make_split(cfg.train_scenes, 1, true, split.train);
  make_split(cfg.val_scenes, 2, true, split.val);
  make_split(cfg.extra_scenes, 3, false, split.extra);

  Vocabulary::standard().save((root / "vocab.json").string());

  json manifest;
  manifest["command"] = command_line.empty() ? "synth" : command_line;
  manifest["created"] = now_iso8601();
  manifest["seed"] = cfg.seed;
  json jc;
  jc["train_scenes"] = cfg.train_scenes;
  jc["val_scenes"] = cfg.val_scenes;
  jc["extra_scenes"] = cfg.extra_scenes;
  jc["min_objects"] = cfg.gen.min_objects;
  jc["max_objects"] = cfg.gen.max_objects;
  jc["num_classes"] = cfg.gen.num_classes;
  jc["room_extent"] = cfg.gen.room_extent;
  jc["min_points_per_object"] = cfg.gen.min_points_per_object;
  jc["max_points_per_object"] = cfg.gen.max_points_per_object;
  jc["floor_points"] = cfg.gen.floor_points;
  jc["point_cap"] = cfg.gen.point_cap;
  jc["max_descriptions"] = cfg.lang.max_descriptions;
  manifest["config"] = std::move(jc);
  manifest["train"] = split.train;
  manifest["val"] = split.val;
  manifest["extra"] = split.extra;
  manifest["content_hash"] = dataset_content_hash(out_dir);
  std::ofstream os(root / "manifest.json");
  os << manifest.dump(2);
  if (!os) throw std::runtime_error("synthesize_dataset: cannot write manifest");
}

Dataset load_dataset(const std::string& root) {
  const fs::path base(root);
  std::ifstream is(base / "manifest.json");
  if (!is)
    throw std::runtime_error("load_dataset: missing manifest.json under " + root);
  json manifest = json::parse(is);
  Dataset ds;
  ds.root = root;
  ds.split.train = manifest.at("train").get<std::vector<std::string>>();
  ds.split.val = manifest.at("val").get<std::vector<std::string>>();
  ds.split.extra = manifest.at("extra").get<std::vector<std::string>>();
  ds.vocab = Vocabulary::load((base / "vocab.json").string());
  for (const auto* list : {&ds.split.train, &ds.split.val, &ds.split.extra})
    for (const auto& id : *list)
      ds.scenes.emplace(id, load_scene((base / "scenes" / (id + ".json")).string()));
  return ds;
}

std::vector<std::string> sample_extra(const std::vector<std::string>& extra_ids,
                                      double ratio, size_t annotated_count, Rng& rng) {
  if (ratio < 0)
    throw std::invalid_argument("sample_extra: ratio must be nonnegative");
  const size_t want = static_cast<size_t>(std::floor(ratio * annotated_count));
  if (want == 0) return {};
  if (extra_ids.empty())
    throw std::runtime_error("sample_extra: extra pool is empty but ratio > 0");
  std::vector<std::string> out;
  out.reserve(want);
  for (size_t i = 0; i < want; ++i)
    out.push_back(extra_ids[static_cast<size_t>(rng.pick(static_cast<int>(extra_ids.size())))]);
  return out;
}

std::string dataset_content_hash(const std::string& root) {
  const fs::path base(root);
  std::vector<fs::path> files;
  if (fs::exists(base / "scenes"))
    for (const auto& e : fs::directory_iterator(base / "scenes"))
      if (e.is_regular_file()) files.push_back(e.path());
  if (fs::exists(base / "vocab.json")) files.push_back(base / "vocab.json");
  std::sort(files.begin(), files.end());
  uint64_t h = 1469598103934665603ull;  // FNV-1a
  auto mix = [&h](const char* data, size_t n) {
    for (size_t i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(data[i]);
      h *= 1099511628211ull;
    }
  };
  for (const auto& f : files) {
    const std::string name = f.filename().string();
    mix(name.data(), name.size());
    std::ifstream is(f, std::ios::binary);
    char buf[1 << 16];
    while (is) {
      is.read(buf, sizeof(buf));
      mix(buf, static_cast<size_t>(is.gcount()));
    }
  }
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
  return out;
}

void write_manifest(const std::string& dir, const std::string& command,
                    const std::string& config_json, uint64_t seed,
                    const std::string& dataset_hash,
                    const std::vector<std::string>& outputs) {
  fs::create_directories(dir);
  json manifest;
  manifest["command"] = command;
  manifest["created"] = now_iso8601();
  manifest["seed"] = seed;
  manifest["config"] = config_json.empty() ? json::object() : json::parse(config_json);
  manifest["dataset_hash"] = dataset_hash;
  manifest["outputs"] = outputs;
  std::ofstream os(fs::path(dir) / "manifest.json");
  os << manifest.dump(2);
  if (!os) throw std::runtime_error("write_manifest: cannot write to " + dir);
}

}  // namespace d3desk::data
