#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <vector>

namespace d3desk::geom {

using Vec3 = std::array<double, 3>;

struct AABB {
  Vec3 mn{0, 0, 0};
  Vec3 mx{0, 0, 0};

  Vec3 center() const {
    return {(mn[0] + mx[0]) / 2, (mn[1] + mx[1]) / 2, (mn[2] + mx[2]) / 2};
  }
  Vec3 size() const { return {mx[0] - mn[0], mx[1] - mn[1], mx[2] - mn[2]}; }
  double volume() const {
    const Vec3 s = size();
    return s[0] * s[1] * s[2];
  }
};

// Componentwise min/max over the selected points. Throws on an empty subset.
AABB bbox_from_points(const std::vector<Vec3>& points, const std::vector<int>& subset);
AABB bbox_from_points(const std::vector<Vec3>& points);

// Intersection volume over union volume. Degenerate (zero-volume) boxes give 0.
double iou(const AABB& a, const AABB& b);

// Greedy non-maximum suppression, descending score, ties broken by lower
// index. Returns kept indices in suppression order.
std::vector<int> nms(const std::vector<AABB>& boxes, const std::vector<double>& scores,
                     double iou_threshold);

// Discretizes the angle between the horizontal projection of (b-a) and the +x
// axis, folded into [0°,180°), into six 30° bins. Zero horizontal displacement
// maps to class 0.
int orientation_class(const Vec3& a, const Vec3& b);

struct VoxelGrid {
  double voxel_size = 0;
  // Voxel index -> member point indices; keyed by integer cell coordinates.
  std::map<std::array<int64_t, 3>, std::vector<int>> cells;
  // Per-voxel mean feature, aligned with iteration order of `cells`.
  std::vector<std::vector<double>> mean_features;
};

// Floor-division binning; boundary points fall into the lower cell. The mean
// feature of voxel k averages features of the member points.
VoxelGrid voxelize(const std::vector<Vec3>& points,
                   const std::vector<std::vector<double>>& features, double voxel_size);

// Per-point lookup: index into VoxelGrid::mean_features for each input point.
std::vector<int> voxel_of_points(const VoxelGrid& grid, const std::vector<Vec3>& points);

}  // namespace d3desk::geom
