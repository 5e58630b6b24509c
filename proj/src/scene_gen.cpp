#include "d3desk/scene_gen.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace d3desk::data {

namespace {

struct PlacedBox {
  int cls;
  double cx, cy;      // footprint center
  double w, d, h;     // extents
  double r, g, b;     // base color
};

bool footprints_clear(const PlacedBox& a, const PlacedBox& b, double gap) {
  const double dx = std::abs(a.cx - b.cx) - (a.w + b.w) / 2;
  const double dy = std::abs(a.cy - b.cy) - (a.d + b.d) / 2;
  return dx > gap || dy > gap;
}

}  // namespace

Scene generate_scene(uint64_t seed, const GenConfig& cfg) {
  if (cfg.num_classes < 1 ||
      cfg.num_classes > static_cast<int>(class_table().size()))
    throw std::invalid_argument("generate_scene: num_classes out of range");
  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  Scene scene;
  {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene_%010llu",
                  static_cast<unsigned long long>(seed));
    scene.scene_id = buf;
  }

  const int n_objects = rng.uniform_int(cfg.min_objects, cfg.max_objects);
  const auto& classes = class_table();
  const auto& palette = color_table();

  std::vector<PlacedBox> boxes;
  for (int i = 0; i < n_objects; ++i) {
    PlacedBox box;
    auto resample = [&] {
      box.cls = rng.pick(cfg.num_classes);
      const ClassSpec& spec = classes[static_cast<size_t>(box.cls)];
      const double sxy = rng.uniform(0.8, 1.25);
      const double sz = rng.uniform(0.8, 1.25);
      box.w = spec.w * sxy;
      box.d = spec.d * sxy;
      box.h = spec.h * sz;
      // Class-typed colors: each class draws one of its two palette slots, so
      // appearance carries class information. The {c, c+5 mod 12} map covers
      // the whole palette and no two classes share both slots.
      const int slot = rng.pick(2) == 0
                           ? box.cls
                           : (box.cls + 5) % static_cast<int>(palette.size());
      const ColorSpec& col = palette[static_cast<size_t>(slot)];
      box.r = col.r;
      box.g = col.g;
      box.b = col.b;
    };
    resample();

    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_place_retries; ++attempt) {
      // A crowded room may have no slot for this footprint; redraw the
      // object every so often instead of giving up on the scene.
      if (attempt > 0 && attempt % 50 == 0) resample();
      box.cx = rng.uniform(box.w / 2 + 0.05, cfg.room_extent - box.w / 2 - 0.05);
      box.cy = rng.uniform(box.d / 2 + 0.05, cfg.room_extent - box.d / 2 - 0.05);
      bool clear = true;
      for (const auto& other : boxes)
        if (!footprints_clear(box, other, cfg.min_gap)) {
          clear = false;
          break;
        }
      if (clear) {
        placed = true;
        break;
      }
    }
    if (!placed)
      throw std::runtime_error("generate_scene: could not place object " +
                               std::to_string(i) + " after " +
                               std::to_string(cfg.max_place_retries) + " retries");
    boxes.push_back(box);
  }

  // Respect the point cap by scaling down per-object budgets if needed.
  std::vector<int> budgets(boxes.size());
  int total = cfg.floor_points;
  for (auto& b : budgets) {
    b = rng.uniform_int(cfg.min_points_per_object, cfg.max_points_per_object);
    total += b;
  }
  if (total > cfg.point_cap) {
    const double scale_down = static_cast<double>(cfg.point_cap - cfg.floor_points) /
                              static_cast<double>(total - cfg.floor_points);
    for (auto& b : budgets) b = std::max(8, static_cast<int>(b * scale_down));
  }

  auto add_point = [&](double x, double y, double z, double nx, double ny, double nz,
                       double r, double g, double b, int cls, int inst) {
    scene.points.push_back({x + rng.normal(0, cfg.coord_noise),
                            y + rng.normal(0, cfg.coord_noise),
                            z + rng.normal(0, cfg.coord_noise)});
    auto ch = [&](double c) {
      return std::clamp(c + rng.normal(0, cfg.color_noise), 0.0, 1.0);
    };
    scene.features.push_back({ch(r), ch(g), ch(b), nx, ny, nz});
    scene.semantic_labels.push_back(cls);
    scene.instance_labels.push_back(inst);
  };

  for (size_t oi = 0; oi < boxes.size(); ++oi) {
    const PlacedBox& b = boxes[oi];
    // Area-weighted sampling over the top face and the four sides.
    const double a_top = b.w * b.d;
    const double a_x = b.d * b.h;  // two faces normal to x
    const double a_y = b.w * b.h;  // two faces normal to y
    const double a_sum = a_top + 2 * a_x + 2 * a_y;
    const size_t first_point = scene.points.size();
    for (int k = 0; k < budgets[oi]; ++k) {
      const double u = rng.uniform() * a_sum;
      const double px = rng.uniform(-b.w / 2, b.w / 2);
      const double py = rng.uniform(-b.d / 2, b.d / 2);
      const double pz = rng.uniform(0, b.h);
      if (u < a_top) {
        add_point(b.cx + px, b.cy + py, b.h, 0, 0, 1, b.r, b.g, b.b, b.cls,
                  static_cast<int>(oi));
      } else if (u < a_top + a_x) {
        add_point(b.cx - b.w / 2, b.cy + py, pz, -1, 0, 0, b.r, b.g, b.b, b.cls,
                  static_cast<int>(oi));
      } else if (u < a_top + 2 * a_x) {
        add_point(b.cx + b.w / 2, b.cy + py, pz, 1, 0, 0, b.r, b.g, b.b, b.cls,
                  static_cast<int>(oi));
      } else if (u < a_top + 2 * a_x + a_y) {
        add_point(b.cx + px, b.cy - b.d / 2, pz, 0, -1, 0, b.r, b.g, b.b, b.cls,
                  static_cast<int>(oi));
      } else {
        add_point(b.cx + px, b.cy + b.d / 2, pz, 0, 1, 0, b.r, b.g, b.b, b.cls,
                  static_cast<int>(oi));
      }
    }
    GtObject obj;
    obj.instance_id = static_cast<int>(oi);
    obj.semantic_class = b.cls;
    std::vector<int> members(static_cast<size_t>(budgets[oi]));
    for (size_t k = 0; k < members.size(); ++k)
      members[k] = static_cast<int>(first_point + k);
    obj.bbox = geom::bbox_from_points(scene.points, members);
    scene.gt_objects.push_back(std::move(obj));
  }

  for (int k = 0; k < cfg.floor_points; ++k)
    add_point(rng.uniform(0, cfg.room_extent), rng.uniform(0, cfg.room_extent), 0.0,
              0, 0, 1, 0.42, 0.40, 0.38, cfg.num_classes, -1);

  scene.annotated = false;
  return scene;
}

}  // namespace d3desk::data
