#include "d3desk/detector.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace d3desk::model {

using ad::Tensor;

namespace {

Tensor xavier(Rng& rng, int in, int out) {
  const double s = std::sqrt(6.0 / (in + out));
  std::vector<ad::Scalar> vals(static_cast<size_t>(in) * out);
  for (auto& v : vals) v = static_cast<ad::Scalar>(rng.uniform(-s, s));
  return Tensor::from({in, out}, std::move(vals), true);
}

Tensor zeros_param(int n) { return Tensor::zeros({n}, true); }

}  // namespace

Detector::Detector(DetectorConfig cfg, Rng& rng) : cfg_(cfg) {
  // point + fine/coarse voxel means + xy-column stats (mean, zmin, zmax, density)
  const int in = 4 * (3 + cfg.feature_dim) + 3;
  w1_ = xavier(rng, in, cfg.hidden);
  b1_ = zeros_param(cfg.hidden);
  w2_ = xavier(rng, cfg.hidden, cfg.hidden);
  b2_ = zeros_param(cfg.hidden);
  wsem_ = xavier(rng, cfg.hidden, cfg.num_classes + 1);
  bsem_ = zeros_param(cfg.num_classes + 1);
  woff_ = xavier(rng, cfg.hidden, 3);
  boff_ = zeros_param(3);
  wscore1_ = xavier(rng, 2 * cfg.hidden, cfg.proposal_dim);
  bscore1_ = zeros_param(cfg.proposal_dim);
  wscore2_ = xavier(rng, cfg.proposal_dim, 1);
  bscore2_ = zeros_param(1);
}

ad::NamedParams Detector::named_params(const std::string& prefix) const {
  return {{prefix + "w1", w1_},          {prefix + "b1", b1_},
          {prefix + "w2", w2_},          {prefix + "b2", b2_},
          {prefix + "wsem", wsem_},      {prefix + "bsem", bsem_},
          {prefix + "woff", woff_},      {prefix + "boff", boff_},
          {prefix + "wscore1", wscore1_},{prefix + "bscore1", bscore1_},
          {prefix + "wscore2", wscore2_},{prefix + "bscore2", bscore2_}};
}

Tensor Detector::encode(const data::Scene& scene) const {
  const int n = scene.num_points();
  const int f = cfg_.feature_dim;
  if (n < 1) throw std::invalid_argument("detector: empty scene");

  // Raw per-point vector [coords | features] and its voxel-mean contexts.
  std::vector<std::vector<double>> raw(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto& row = raw[static_cast<size_t>(i)];
    row.reserve(static_cast<size_t>(3 + f));
    for (int d = 0; d < 3; ++d) row.push_back(scene.points[static_cast<size_t>(i)][d]);
    for (int d = 0; d < f; ++d) row.push_back(scene.features[static_cast<size_t>(i)][static_cast<size_t>(d)]);
  }
  geom::VoxelGrid fine = geom::voxelize(scene.points, raw, cfg_.voxel_size);
  geom::VoxelGrid coarse = geom::voxelize(scene.points, raw, cfg_.context_voxel);
  const std::vector<int> fine_ix = geom::voxel_of_points(fine, scene.points);
  const std::vector<int> coarse_ix = geom::voxel_of_points(coarse, scene.points);

  // xy-column stats over the full height: mean vector, z extent, occupancy.
  struct Column {
    std::vector<double> mean;
    double zmin = 1e18, zmax = -1e18;
    int count = 0;
  };
  std::map<std::pair<int64_t, int64_t>, Column> columns;
  for (int i = 0; i < n; ++i) {
    const auto& p = scene.points[static_cast<size_t>(i)];
    auto& col = columns[{static_cast<int64_t>(std::floor(p[0] / cfg_.column_cell)),
                         static_cast<int64_t>(std::floor(p[1] / cfg_.column_cell))}];
    if (col.mean.empty()) col.mean.assign(static_cast<size_t>(3 + f), 0.0);
    for (int d = 0; d < 3 + f; ++d) col.mean[static_cast<size_t>(d)] += raw[static_cast<size_t>(i)][static_cast<size_t>(d)];
    col.zmin = std::min(col.zmin, p[2]);
    col.zmax = std::max(col.zmax, p[2]);
    ++col.count;
  }
  for (auto& [key, col] : columns)
    for (auto& v : col.mean) v /= col.count;

  const int width = 4 * (3 + f) + 3;
  std::vector<ad::Scalar> input;
  input.reserve(static_cast<size_t>(n) * width);
  for (int i = 0; i < n; ++i) {
    for (double x : raw[static_cast<size_t>(i)]) input.push_back(static_cast<ad::Scalar>(x));
    for (double x : fine.mean_features[static_cast<size_t>(fine_ix[static_cast<size_t>(i)])])
      input.push_back(static_cast<ad::Scalar>(x));
    for (double x : coarse.mean_features[static_cast<size_t>(coarse_ix[static_cast<size_t>(i)])])
      input.push_back(static_cast<ad::Scalar>(x));
    const auto& p = scene.points[static_cast<size_t>(i)];
    const Column& col =
        columns.at({static_cast<int64_t>(std::floor(p[0] / cfg_.column_cell)),
                    static_cast<int64_t>(std::floor(p[1] / cfg_.column_cell))});
    for (double x : col.mean) input.push_back(static_cast<ad::Scalar>(x));
    input.push_back(static_cast<ad::Scalar>(col.zmin));
    input.push_back(static_cast<ad::Scalar>(col.zmax));
    input.push_back(static_cast<ad::Scalar>(col.count / 64.0));
  }
  Tensor x = Tensor::from({n, width}, std::move(input));
  Tensor h1 = ad::relu(ad::add(ad::matmul(x, w1_), b1_));
  return ad::relu(ad::add(ad::matmul(h1, w2_), b2_));
}

std::vector<std::vector<int>> Detector::cluster_points(
    const std::vector<geom::Vec3>& coords, const std::vector<int>& point_class,
    int floor_class, double radius, int min_points) {
  const int n = static_cast<int>(coords.size());
  // Grid hash with cell size = radius; neighbors live in the 27 cells around.
  std::map<std::array<int64_t, 3>, std::vector<int>> grid;
  for (int i = 0; i < n; ++i) {
    if (point_class[static_cast<size_t>(i)] == floor_class) continue;
    std::array<int64_t, 3> cell;
    for (int d = 0; d < 3; ++d)
      cell[d] = static_cast<int64_t>(std::floor(coords[static_cast<size_t>(i)][d] / radius));
    grid[cell].push_back(i);
  }
  const double r2 = radius * radius;
  std::vector<char> visited(static_cast<size_t>(n), 0);
  std::vector<std::vector<int>> clusters;
  for (int seed = 0; seed < n; ++seed) {
    if (visited[static_cast<size_t>(seed)] ||
        point_class[static_cast<size_t>(seed)] == floor_class)
      continue;
    std::vector<int> members;
    std::vector<int> queue = {seed};
    visited[static_cast<size_t>(seed)] = 1;
    while (!queue.empty()) {
      const int cur = queue.back();
      queue.pop_back();
      members.push_back(cur);
      std::array<int64_t, 3> cell;
      for (int d = 0; d < 3; ++d)
        cell[d] = static_cast<int64_t>(std::floor(coords[static_cast<size_t>(cur)][d] / radius));
      for (int64_t dx = -1; dx <= 1; ++dx)
        for (int64_t dy = -1; dy <= 1; ++dy)
          for (int64_t dz = -1; dz <= 1; ++dz) {
            auto it = grid.find({cell[0] + dx, cell[1] + dy, cell[2] + dz});
            if (it == grid.end()) continue;
            for (int j : it->second) {
              if (visited[static_cast<size_t>(j)]) continue;
              if (point_class[static_cast<size_t>(j)] != point_class[static_cast<size_t>(cur)])
                continue;
              double d2 = 0;
              for (int d = 0; d < 3; ++d) {
                const double diff =
                    coords[static_cast<size_t>(cur)][d] - coords[static_cast<size_t>(j)][d];
                d2 += diff * diff;
              }
              if (d2 <= r2) {
                visited[static_cast<size_t>(j)] = 1;
                queue.push_back(j);
              }
            }
          }
    }
    if (static_cast<int>(members.size()) >= min_points) {
      std::sort(members.begin(), members.end());
      clusters.push_back(std::move(members));
    }
  }
  return clusters;
}

std::vector<Proposal> Detector::score_members(
    const data::Scene& scene, const Tensor& embeddings,
    const std::vector<std::vector<int>>& members) const {
  std::vector<Proposal> out;
  out.reserve(members.size());
  for (const auto& m : members) {
    Proposal p;
    p.point_indices = m;
    Tensor rows = ad::gather_rows(embeddings, m);
    Tensor pooled = ad::concat({ad::mean_dim0(rows), ad::max_dim0(rows)}, 0);
    p.feature = ad::relu(ad::add(ad::matmul(pooled, wscore1_), bscore1_));
    p.score_logit = ad::add(ad::matmul(p.feature, wscore2_), bscore2_);
    p.score = 1.0 / (1.0 + std::exp(-static_cast<double>(p.score_logit.item())));
    p.bbox = geom::bbox_from_points(scene.points, m);
    // Majority vote over member semantic labels fills predicted_class later;
    // callers that know the labels set it themselves.
    out.push_back(std::move(p));
  }
  return out;
}

DetectorOutput Detector::detect(const data::Scene& scene, bool eval_mode) const {
  DetectorOutput out;
  out.embeddings = encode(scene);
  out.sem_logits = ad::add(ad::matmul(out.embeddings, wsem_), bsem_);
  out.offsets = ad::add(ad::matmul(out.embeddings, woff_), boff_);

  const int n = scene.num_points();
  const int c = cfg_.num_classes + 1;
  out.sem_pred.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto& v = out.sem_logits.v();
    int best = 0;
    for (int k = 1; k < c; ++k)
      if (v[static_cast<size_t>(i) * c + k] > v[static_cast<size_t>(i) * c + best]) best = k;
    out.sem_pred[static_cast<size_t>(i)] = best;
  }

  std::vector<geom::Vec3> shifted(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < 3; ++d)
      shifted[static_cast<size_t>(i)][d] =
          scene.points[static_cast<size_t>(i)][d] +
          static_cast<double>(out.offsets.v()[static_cast<size_t>(i) * 3 + d]);

  auto clusters = cluster_points(scene.points, out.sem_pred, cfg_.num_classes,
                                 cfg_.cluster_radius, cfg_.min_cluster_points);
  auto shifted_clusters = cluster_points(shifted, out.sem_pred, cfg_.num_classes,
                                         cfg_.cluster_radius, cfg_.min_cluster_points);
  clusters.insert(clusters.end(), shifted_clusters.begin(), shifted_clusters.end());

  out.clusters = score_members(scene, out.embeddings, clusters);
  for (auto& p : out.clusters) {
    std::vector<int> votes(static_cast<size_t>(c), 0);
    for (int i : p.point_indices) ++votes[static_cast<size_t>(out.sem_pred[static_cast<size_t>(i)])];
    p.predicted_class =
        static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
  }

  std::vector<int> order;
  for (size_t i = 0; i < out.clusters.size(); ++i) {
    const Proposal& p = out.clusters[i];
    if (p.score < cfg_.score_threshold) continue;
    if (static_cast<int>(p.point_indices.size()) < cfg_.min_cluster_points) continue;
    order.push_back(static_cast<int>(i));
  }
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return out.clusters[static_cast<size_t>(a)].score >
           out.clusters[static_cast<size_t>(b)].score;
  });
  std::vector<Proposal> kept;
  for (int i : order) kept.push_back(out.clusters[static_cast<size_t>(i)]);

  if (eval_mode && !kept.empty()) {
    std::vector<geom::AABB> boxes;
    std::vector<double> scores;
    for (const auto& p : kept) {
      boxes.push_back(p.bbox);
      scores.push_back(p.score);
    }
    std::vector<Proposal> suppressed;
    for (int i : geom::nms(boxes, scores, cfg_.nms_iou))
      suppressed.push_back(kept[static_cast<size_t>(i)]);
    kept = std::move(suppressed);
  }
  out.proposals = std::move(kept);
  return out;
}

std::vector<Proposal> Detector::proposals_from_members(
    const data::Scene& scene, const std::vector<std::vector<int>>& members) const {
  Tensor embeddings = encode(scene);
  auto props = score_members(scene, embeddings, members);
  for (auto& p : props) {
    std::vector<int> votes(static_cast<size_t>(cfg_.num_classes + 1), 0);
    for (int i : p.point_indices)
      ++votes[static_cast<size_t>(scene.semantic_labels[static_cast<size_t>(i)])];
    p.predicted_class =
        static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
  }
  return props;
}

DetectionLoss Detector::detection_loss(const DetectorOutput& out,
                                       const data::Scene& scene) const {
  const int n = scene.num_points();
  if (scene.instance_labels.empty() || static_cast<int>(scene.instance_labels.size()) != n)
    throw std::invalid_argument("detection_loss: scene lacks instance labels");

  DetectionLoss loss;
  loss.sem = ad::cross_entropy(out.sem_logits, scene.semantic_labels);

  // Instance centroids from the labelled points.
  std::map<int, std::array<double, 4>> acc;  // id -> (sx, sy, sz, count)
  for (int i = 0; i < n; ++i) {
    const int id = scene.instance_labels[static_cast<size_t>(i)];
    if (id < 0) continue;
    auto& a = acc[id];
    for (int d = 0; d < 3; ++d) a[static_cast<size_t>(d)] += scene.points[static_cast<size_t>(i)][d];
    a[3] += 1;
  }
  std::vector<int> inst_ix;
  std::vector<ad::Scalar> gt_offsets;
  std::vector<int> dir_ix;
  std::vector<ad::Scalar> dir_targets;
  for (int i = 0; i < n; ++i) {
    const int id = scene.instance_labels[static_cast<size_t>(i)];
    if (id < 0) continue;
    const auto& a = acc[id];
    double g[3];
    double norm2 = 0;
    for (int d = 0; d < 3; ++d) {
      g[d] = a[static_cast<size_t>(d)] / a[3] - scene.points[static_cast<size_t>(i)][d];
      norm2 += g[d] * g[d];
    }
    inst_ix.push_back(i);
    for (int d = 0; d < 3; ++d) gt_offsets.push_back(static_cast<ad::Scalar>(g[d]));
    if (std::sqrt(norm2) > cfg_.dir_eps) {
      dir_ix.push_back(i);
      for (int d = 0; d < 3; ++d) dir_targets.push_back(static_cast<ad::Scalar>(g[d]));
    }
  }

  if (!inst_ix.empty()) {
    Tensor pred = ad::gather_rows(out.offsets, inst_ix);
    Tensor gt = Tensor::from({static_cast<int>(inst_ix.size()), 3}, std::move(gt_offsets));
    loss.offset_reg = ad::scale(ad::l1_norm(ad::sub(pred, gt)),
                                ad::Scalar(1) / static_cast<ad::Scalar>(inst_ix.size()));
  } else {
    loss.offset_reg = Tensor::scalar(0);
  }

  loss.dir_points = static_cast<int>(dir_ix.size());
  if (!dir_ix.empty()) {
    Tensor pred = ad::gather_rows(out.offsets, dir_ix);
    Tensor gt = Tensor::from({static_cast<int>(dir_ix.size()), 3}, std::move(dir_targets));
    loss.offset_dir = ad::neg(ad::mean(ad::cosine_rows(pred, gt)));
  } else {
    loss.offset_dir = Tensor::scalar(0);
  }

  loss.scored_clusters = static_cast<int>(out.clusters.size());
  if (!out.clusters.empty()) {
    std::vector<Tensor> logits;
    std::vector<ad::Scalar> targets;
    for (const auto& p : out.clusters) {
      logits.push_back(p.score_logit);
      double best = 0;
      for (const auto& o : scene.gt_objects) best = std::max(best, geom::iou(p.bbox, o.bbox));
      const double t = std::clamp((best - cfg_.score_ramp_lo) /
                                      (cfg_.score_ramp_hi - cfg_.score_ramp_lo),
                                  0.0, 1.0);
      targets.push_back(static_cast<ad::Scalar>(t));
    }
    loss.cluster_score = ad::bce_with_logits(ad::concat(logits, 0), targets);
  } else {
    loss.cluster_score = Tensor::scalar(0);
  }

  loss.total = ad::add(ad::add(loss.sem, loss.offset_reg),
                       ad::add(loss.offset_dir, loss.cluster_score));
  return loss;
}

}  // namespace d3desk::model
