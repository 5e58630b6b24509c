#include "d3desk/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace d3desk::geom {

AABB bbox_from_points(const std::vector<Vec3>& points, const std::vector<int>& subset) {
  if (subset.empty()) throw std::invalid_argument("bbox_from_points: empty subset");
  AABB box;
  box.mn = box.mx = points[static_cast<size_t>(subset[0])];
  for (int i : subset) {
    const Vec3& p = points[static_cast<size_t>(i)];
    for (int d = 0; d < 3; ++d) {
      box.mn[d] = std::min(box.mn[d], p[d]);
      box.mx[d] = std::max(box.mx[d], p[d]);
    }
  }
  return box;
}

AABB bbox_from_points(const std::vector<Vec3>& points) {
  std::vector<int> all(points.size());
  std::iota(all.begin(), all.end(), 0);
  return bbox_from_points(points, all);
}

double iou(const AABB& a, const AABB& b) {
  const double va = a.volume();
  const double vb = b.volume();
  if (va <= 0 || vb <= 0) return 0.0;
  double inter = 1.0;
  for (int d = 0; d < 3; ++d) {
    const double lo = std::max(a.mn[d], b.mn[d]);
    const double hi = std::min(a.mx[d], b.mx[d]);
    if (hi <= lo) return 0.0;
    inter *= hi - lo;
  }
  return inter / (va + vb - inter);
}

std::vector<int> nms(const std::vector<AABB>& boxes, const std::vector<double>& scores,
                     double iou_threshold) {
  if (boxes.size() != scores.size())
    throw std::invalid_argument("nms: boxes/scores size mismatch");
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int l, int r) {
    if (scores[static_cast<size_t>(l)] != scores[static_cast<size_t>(r)])
      return scores[static_cast<size_t>(l)] > scores[static_cast<size_t>(r)];
    return l < r;
  });
  std::vector<int> kept;
  std::vector<char> suppressed(boxes.size(), 0);
  for (int i : order) {
    if (suppressed[static_cast<size_t>(i)]) continue;
    kept.push_back(i);
    for (int j : order) {
      if (j == i || suppressed[static_cast<size_t>(j)]) continue;
      if (iou(boxes[static_cast<size_t>(i)], boxes[static_cast<size_t>(j)]) >
          iou_threshold)
        suppressed[static_cast<size_t>(j)] = 1;
    }
  }
  return kept;
}

int orientation_class(const Vec3& a, const Vec3& b) {
  const double dx = b[0] - a[0];
  const double dy = b[1] - a[1];
  if (dx == 0.0 && dy == 0.0) return 0;
  double deg = std::atan2(dy, dx) * 180.0 / M_PI;  // (-180, 180]
  if (deg < 0.0) deg += 180.0;                     // fold to [0, 180]
  if (deg >= 180.0) deg -= 180.0;                  // half-open
  int cls = static_cast<int>(deg / 30.0);
  return std::min(cls, 5);
}

VoxelGrid voxelize(const std::vector<Vec3>& points,
                   const std::vector<std::vector<double>>& features, double voxel_size) {
  if (voxel_size <= 0) throw std::invalid_argument("voxelize: voxel_size must be > 0");
  VoxelGrid grid;
  grid.voxel_size = voxel_size;
  for (size_t i = 0; i < points.size(); ++i) {
    std::array<int64_t, 3> cell;
    for (int d = 0; d < 3; ++d)
      cell[d] = static_cast<int64_t>(std::floor(points[i][d] / voxel_size));
    grid.cells[cell].push_back(static_cast<int>(i));
  }
  if (!features.empty()) {
    const size_t f = features[0].size();
    grid.mean_features.reserve(grid.cells.size());
    for (const auto& [cell, members] : grid.cells) {
      std::vector<double> acc(f, 0.0);
      for (int i : members)
        for (size_t j = 0; j < f; ++j) acc[j] += features[static_cast<size_t>(i)][j];
      for (auto& x : acc) x /= static_cast<double>(members.size());
      grid.mean_features.push_back(std::move(acc));
    }
  }
  return grid;
}

std::vector<int> voxel_of_points(const VoxelGrid& grid, const std::vector<Vec3>& points) {
  std::vector<int> out(points.size(), -1);
  // Map cell key -> dense index in iteration order.
  std::map<std::array<int64_t, 3>, int> dense;
  int k = 0;
  for (const auto& [cell, members] : grid.cells) dense[cell] = k++;
  for (size_t i = 0; i < points.size(); ++i) {
    std::array<int64_t, 3> cell;
    for (int d = 0; d < 3; ++d)
      cell[d] = static_cast<int64_t>(std::floor(points[i][d] / grid.voxel_size));
    auto it = dense.find(cell);
    if (it != dense.end()) out[i] = it->second;
  }
  return out;
}

}  // namespace d3desk::geom
