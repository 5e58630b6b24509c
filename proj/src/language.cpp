#include "d3desk/language.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>
#include <stdexcept>

namespace d3desk::data {

using json = nlohmann::ordered_json;

namespace {

const std::vector<std::string>& word_list() {
  static const std::vector<std::string> words = {
      // function / relation words
      "the", "other", "of", "to", "in", "and", "near", "next", "beside", "left",
      "right", "front", "behind", "between", "middle", "corner", "room",
      // size attributes
      "big", "large", "small", "little", "tall", "short",
      // colors
      "red", "green", "blue", "yellow", "white", "black", "brown", "gray",
      "orange", "purple", "pink", "teal",
      // classes
      "chair", "table", "lamp", "sofa", "bed", "shelf", "cabinet", "monitor",
      "plant", "bin"};
  return words;
}

}  // namespace

const std::vector<ClassSpec>& class_table() {
  static const std::vector<ClassSpec> table = {
      {"chair", 0.45, 0.45, 0.85}, {"table", 0.90, 0.60, 0.70},
      {"lamp", 0.25, 0.25, 1.20},  {"sofa", 1.20, 0.80, 0.75},
      {"bed", 1.40, 1.00, 0.50},   {"shelf", 0.80, 0.30, 1.10},
      {"cabinet", 0.60, 0.45, 0.90}, {"monitor", 0.50, 0.12, 0.40},
      {"plant", 0.30, 0.30, 0.60}, {"bin", 0.30, 0.30, 0.40}};
  return table;
}

const std::vector<ColorSpec>& color_table() {
  static const std::vector<ColorSpec> table = {
      {"red", 0.85, 0.15, 0.15},    {"green", 0.15, 0.70, 0.20},
      {"blue", 0.15, 0.25, 0.80},   {"yellow", 0.90, 0.85, 0.20},
      {"white", 0.95, 0.95, 0.95},  {"black", 0.08, 0.08, 0.08},
      {"brown", 0.55, 0.35, 0.20},  {"gray", 0.50, 0.50, 0.55},
      {"orange", 0.95, 0.55, 0.10}, {"purple", 0.60, 0.20, 0.70},
      {"pink", 0.95, 0.60, 0.70},   {"teal", 0.10, 0.60, 0.60}};
  return table;
}

Vocabulary Vocabulary::standard() {
  Vocabulary v;
  v.tokens_ = {"<pad>", "<sos>", "<eos>", "<unk>"};
  for (const auto& w : word_list()) v.tokens_.push_back(w);
  v.index();
  return v;
}

void Vocabulary::index() {
  ids_.clear();
  for (size_t i = 0; i < tokens_.size(); ++i) ids_[tokens_[i]] = static_cast<int>(i);
}

int Vocabulary::id(const std::string& word) const {
  auto it = ids_.find(word);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || id >= size()) return tokens_[kUnk];
  return tokens_[static_cast<size_t>(id)];
}

std::vector<int> Vocabulary::encode(const std::string& sentence) const {
  std::vector<int> out = {kSos};
  std::istringstream is(sentence);
  std::string w;
  while (is >> w) out.push_back(id(w));
  out.push_back(kEos);
  return out;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int i : ids) {
    if (i == kPad || i == kSos || i == kEos) continue;
    if (!out.empty()) out += ' ';
    out += word(i);
  }
  return out;
}

void Vocabulary::save(const std::string& path) const {
  json j;
  j["tokens"] = tokens_;
  std::ofstream os(path);
  if (!os) throw std::runtime_error("vocabulary: cannot open " + path);
  os << j.dump(2);
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("vocabulary: cannot open " + path);
  json j = json::parse(is);
  Vocabulary v;
  v.tokens_ = j.at("tokens").get<std::vector<std::string>>();
  v.index();
  return v;
}

std::string dominant_relation(const geom::Vec3& anchor, const geom::Vec3& target) {
  const double dx = target[0] - anchor[0];
  const double dy = target[1] - anchor[1];
  if (std::abs(dx) >= std::abs(dy)) return dx < 0 ? "left" : "right";
  return dy < 0 ? "front" : "behind";
}

namespace {

double dist_xy(const geom::Vec3& a, const geom::Vec3& b) {
  return std::hypot(a[0] - b[0], a[1] - b[1]);
}

std::string relation_phrase(const std::string& rel) {
  if (rel == "left") return "left of";
  if (rel == "right") return "right of";
  if (rel == "front") return "in front of";
  return "behind";
}

// "the other chair" when anchor shares the subject's class, else "the table".
std::string anchor_phrase(int subject_class, int anchor_class) {
  const auto& classes = class_table();
  if (subject_class == anchor_class)
    return std::string("the other ") + classes[static_cast<size_t>(anchor_class)].name;
  return std::string("the ") + classes[static_cast<size_t>(anchor_class)].name;
}

std::string color_word_of(const Scene& scene, const GtObject& o) {
  double r = 0, g = 0, b = 0;
  int n = 0;
  for (int i = 0; i < scene.num_points(); ++i) {
    if (scene.instance_labels[static_cast<size_t>(i)] != o.instance_id) continue;
    const auto& f = scene.features[static_cast<size_t>(i)];
    if (f.size() < 3) continue;
    r += f[0];
    g += f[1];
    b += f[2];
    ++n;
  }
  if (n == 0) return "gray";
  r /= n;
  g /= n;
  b /= n;
  const auto& palette = color_table();
  size_t best = 0;
  double best_d = 1e18;
  for (size_t c = 0; c < palette.size(); ++c) {
    const double d = (r - palette[c].r) * (r - palette[c].r) +
                     (g - palette[c].g) * (g - palette[c].g) +
                     (b - palette[c].b) * (b - palette[c].b);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return palette[best].name;
}

}  // namespace

void generate_descriptions(Scene& scene, const LangConfig& cfg, Rng& rng) {
  if (scene.gt_objects.empty())
    throw std::invalid_argument("generate_descriptions: scene has no objects");
  const auto& classes = class_table();
  const size_t n = scene.gt_objects.size();

  std::vector<geom::Vec3> centers(n);
  std::vector<std::string> colors(n);
  for (size_t i = 0; i < n; ++i) {
    centers[i] = scene.gt_objects[i].bbox.center();
    colors[i] = color_word_of(scene, scene.gt_objects[i]);
  }

  // Scene frame: room center/corners from the full point cloud footprint.
  geom::AABB room = geom::bbox_from_points(scene.points);
  const geom::Vec3 room_center = room.center();
  const std::array<std::array<double, 2>, 4> corners = {{{room.mn[0], room.mn[1]},
                                                         {room.mn[0], room.mx[1]},
                                                         {room.mx[0], room.mn[1]},
                                                         {room.mx[0], room.mx[1]}}};

  // Which object is closest to the room center / to any corner.
  size_t center_obj = 0, corner_obj = 0;
  double best_center = 1e18, best_corner = 1e18;
  for (size_t i = 0; i < n; ++i) {
    const double dc = dist_xy(centers[i], room_center);
    if (dc < best_center) {
      best_center = dc;
      center_obj = i;
    }
    for (const auto& c : corners) {
      const double d = std::hypot(centers[i][0] - c[0], centers[i][1] - c[1]);
      if (d < best_corner) {
        best_corner = d;
        corner_obj = i;
      }
    }
  }

  const Vocabulary vocab = Vocabulary::standard();
  for (size_t i = 0; i < n; ++i) {
    GtObject& obj = scene.gt_objects[i];
    const ClassSpec& spec = classes[static_cast<size_t>(obj.semantic_class)];
    const geom::Vec3 ext = obj.bbox.size();
    std::vector<std::string> descs;
    auto push_unique = [&](const std::string& s) {
      if (std::find(descs.begin(), descs.end(), s) == descs.end()) descs.push_back(s);
    };

    // Attribute description; synonym choice keeps references varied.
    std::string size_word;
    if (rng.uniform() < 0.5) {
      const bool big = ext[0] * ext[1] > spec.w * spec.d;
      size_word = big ? (rng.uniform() < 0.5 ? "big" : "large")
                      : (rng.uniform() < 0.5 ? "small" : "little");
    } else {
      size_word = ext[2] > spec.h ? "tall" : "short";
    }
    push_unique("the " + size_word + " " + colors[i] + " " + spec.name);

    // Discriminative relations against every same-class sibling.
    for (size_t j = 0; j < n; ++j) {
      if (j == i || scene.gt_objects[j].semantic_class != obj.semantic_class) continue;
      const std::string rel = dominant_relation(centers[j], centers[i]);
      push_unique("the " + colors[i] + " " + spec.name + " " + relation_phrase(rel) +
                  " " + anchor_phrase(obj.semantic_class, obj.semantic_class));
    }

    // Optional extras, drawn in random order up to the configured count.
    const size_t want = std::max<size_t>(
        descs.size(), static_cast<size_t>(rng.uniform_int(1, cfg.max_descriptions)));
    std::vector<std::string> extras;

    if (n > 1) {
      size_t nearest = i == 0 ? 1 : 0;
      for (size_t j = 0; j < n; ++j)
        if (j != i && dist_xy(centers[i], centers[j]) < dist_xy(centers[i], centers[nearest]))
          nearest = j;
      const double d = dist_xy(centers[i], centers[nearest]);
      std::string phrase;
      if (d <= cfg.near_threshold) {
        const int pickv = rng.uniform_int(0, 2);
        phrase = pickv == 0 ? "near" : (pickv == 1 ? "next to" : "beside");
      } else {
        phrase = relation_phrase(dominant_relation(centers[nearest], centers[i]));
      }
      extras.push_back(std::string("the ") + spec.name + " " + phrase + " " +
                       anchor_phrase(obj.semantic_class,
                                     scene.gt_objects[nearest].semantic_class));
    }

    if (n > 2) {
      // Best collinear pair for a "between" phrasing.
      double best_ratio = 1e18;
      size_t bj = 0, bk = 0;
      for (size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        for (size_t k = j + 1; k < n; ++k) {
          if (k == i) continue;
          const double djk = dist_xy(centers[j], centers[k]);
          if (djk < 1e-9) continue;
          const double ratio =
              (dist_xy(centers[i], centers[j]) + dist_xy(centers[i], centers[k])) / djk;
          if (ratio < best_ratio) {
            best_ratio = ratio;
            bj = j;
            bk = k;
          }
        }
      }
      if (best_ratio <= cfg.between_slack)
        extras.push_back("the " + colors[i] + " " + spec.name + " between " +
                         anchor_phrase(obj.semantic_class,
                                       scene.gt_objects[bj].semantic_class) +
                         " and " +
                         anchor_phrase(obj.semantic_class,
                                       scene.gt_objects[bk].semantic_class));
    }

    if (i == center_obj)
      extras.push_back("the " + colors[i] + " " + spec.name + " in the middle of the room");
    if (i == corner_obj)
      extras.push_back(std::string("the ") + spec.name + " in the corner of the room");

    rng.shuffle(extras);
    for (const auto& e : extras) {
      if (descs.size() >= want) break;
      push_unique(e);
    }

    obj.descriptions.clear();
    for (const auto& d : descs) obj.descriptions.push_back(vocab.encode(d));
  }
  scene.annotated = true;
}

}  // namespace d3desk::data
