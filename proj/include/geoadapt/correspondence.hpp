#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "geoadapt/geom.hpp"

namespace geoadapt {

struct Correspondence {
  std::uint32_t index_a = 0;
  std::uint32_t index_b = 0;
  float feature_distance = 0.0f;  // metric distance for ground-truth sets

  friend bool operator==(const Correspondence&, const Correspondence&) = default;
};

enum class CorrespondenceSource { ground_truth, proposed };

struct CorrespondenceSet {
  std::vector<Correspondence> items;
  CorrespondenceSource source = CorrespondenceSource::proposed;

  std::size_t size() const { return items.size(); }
  bool empty() const { return items.empty(); }
  /// Fewer than three correspondences carry no usable geometric evidence.
  bool degenerate() const { return items.size() < 3; }
};

/// Mutual nearest neighbours between the two clouds in world frame, kept when
/// within `max_dist`. Ordered by index_a. Empty means no overlap.
CorrespondenceSet gt_correspondences(const PointCloud& cloud_a, const PointCloud& cloud_b, const Pose& pose_a,
                                     const Pose& pose_b, double max_dist);

struct ProposalConfig {
  std::size_t cap = 256;  // N_c
  bool mutual = true;     // false: plain a -> b nearest neighbour
};

/// Nearest neighbours in local-feature space (features are d x n, one column
/// per point). Sorted by (feature_distance, index_a), truncated to `cap`.
CorrespondenceSet propose_correspondences(const Eigen::MatrixXf& features_a, const Eigen::MatrixXf& features_b,
                                          const ProposalConfig& cfg);

}  // namespace geoadapt
