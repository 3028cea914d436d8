#include "geoadapt/correspondence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "geoadapt/error.hpp"
#include "geoadapt/spatial_index.hpp"

namespace geoadapt {

namespace {

SpatialIndex index_columns(const Eigen::MatrixXf& m) {
  std::vector<float> data(m.data(), m.data() + m.size());
  return SpatialIndex(std::move(data), static_cast<std::size_t>(m.rows()));
}

std::vector<Neighbor> nearest_of_each(const SpatialIndex& index, const Eigen::MatrixXf& queries) {
  std::vector<Neighbor> out(static_cast<std::size_t>(queries.cols()));
  const auto d = static_cast<std::size_t>(queries.rows());
  for (Eigen::Index i = 0; i < queries.cols(); ++i)
    out[static_cast<std::size_t>(i)] = index.nearest({queries.col(i).data(), d});
  return out;
}

CorrespondenceSet mutual_matches(const Eigen::MatrixXf& a, const Eigen::MatrixXf& b, bool mutual) {
  CorrespondenceSet set;
  if (a.cols() == 0 || b.cols() == 0) return set;
  const std::vector<Neighbor> ab = nearest_of_each(index_columns(b), a);
  std::vector<Neighbor> ba;
  if (mutual) ba = nearest_of_each(index_columns(a), b);
  for (std::size_t i = 0; i < ab.size(); ++i) {
    const std::size_t j = ab[i].index;
    if (mutual && ba[j].index != i) continue;
    set.items.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j),
                         static_cast<float>(ab[i].distance)});
  }
  return set;
}

Eigen::MatrixXf world_matrix(const PointCloud& cloud, const Pose& pose) {
  const PointCloud w = apply_pose(pose, cloud);
  Eigen::MatrixXf m(3, static_cast<Eigen::Index>(w.size()));
  for (std::size_t i = 0; i < w.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = w.points[i];
  return m;
}

}  // namespace

CorrespondenceSet gt_correspondences(const PointCloud& cloud_a, const PointCloud& cloud_b, const Pose& pose_a,
                                     const Pose& pose_b, double max_dist) {
  if (cloud_a.empty() || cloud_b.empty()) throw ValidationError("ground-truth correspondences need non-empty clouds");
  if (max_dist < 0) throw ValidationError("max_dist must be non-negative");
  CorrespondenceSet set = mutual_matches(world_matrix(cloud_a, pose_a), world_matrix(cloud_b, pose_b), true);
  std::erase_if(set.items, [&](const Correspondence& c) { return c.feature_distance > max_dist; });
  set.source = CorrespondenceSource::ground_truth;
  return set;
}

CorrespondenceSet propose_correspondences(const Eigen::MatrixXf& features_a, const Eigen::MatrixXf& features_b,
                                          const ProposalConfig& cfg) {
  if (features_a.rows() != features_b.rows()) throw ValidationError("feature dimensions differ");
  if (cfg.cap == 0) throw ValidationError("correspondence cap must be positive");
  CorrespondenceSet set;
  const Eigen::Index na = features_a.cols(), nb = features_b.cols();
  if (na > 0 && nb > 0) {
    // Dense exact distances: a 16-d tree prunes poorly, one matrix serves both directions.
    const Eigen::MatrixXd a = features_a.cast<double>(), b = features_b.cast<double>();
    Eigen::MatrixXd d2(nb, na);
    for (Eigen::Index i = 0; i < na; ++i) d2.col(i) = (b.colwise() - a.col(i)).colwise().squaredNorm().transpose();
    std::vector<Eigen::Index> best_b(static_cast<std::size_t>(na)), best_a(static_cast<std::size_t>(nb), 0);
    Eigen::VectorXd best_a_d2 = Eigen::VectorXd::Constant(nb, std::numeric_limits<double>::infinity());
    for (Eigen::Index i = 0; i < na; ++i) {
      // minCoeff returns the first (lowest) index among ties.
      Eigen::Index j = 0;
      d2.col(i).minCoeff(&j);
      best_b[static_cast<std::size_t>(i)] = j;
      for (Eigen::Index k = 0; k < nb; ++k) {
        if (d2(k, i) < best_a_d2(k)) {
          best_a_d2(k) = d2(k, i);
          best_a[static_cast<std::size_t>(k)] = i;
        }
      }
    }
    for (Eigen::Index i = 0; i < na; ++i) {
      const Eigen::Index j = best_b[static_cast<std::size_t>(i)];
      if (cfg.mutual && best_a[static_cast<std::size_t>(j)] != i) continue;
      set.items.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j),
                           static_cast<float>(std::sqrt(d2(j, i)))});
    }
  }
  std::stable_sort(set.items.begin(), set.items.end(), [](const Correspondence& x, const Correspondence& y) {
    return x.feature_distance < y.feature_distance;
  });
  if (set.items.size() > cfg.cap) set.items.resize(cfg.cap);
  set.source = CorrespondenceSource::proposed;
  return set;
}

}  // namespace geoadapt
