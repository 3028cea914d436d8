#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <optional>
#include <vector>

namespace geoadapt {

using Point3 = Eigen::Vector3f;

/// Ordered 3D points in sensor frame. Index i names the same point across calls.
struct PointCloud {
  std::vector<Point3> points;
  /// Per-point intensity in [0,1]; either empty or the same length as `points`.
  std::vector<float> intensity;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_intensity() const { return !intensity.empty(); }
  float intensity_at(std::size_t i) const { return intensity.empty() ? 0.0f : intensity[i]; }
};

/// Rigid transform x -> R x + t.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static Pose identity() { return {}; }
  static Pose from_yaw(double yaw, const Eigen::Vector3d& t);

  Pose inverse() const;
  Pose operator*(const Pose& rhs) const;
  bool operator==(const Pose& rhs) const = default;

  /// Throws ValidationError unless R is orthonormal with det +1 within `tol`.
  void validate(double tol = 1e-6) const;
};

PointCloud apply_pose(const Pose& pose, const PointCloud& cloud);

/// Translation-only Euclidean distance; rotation is ignored.
double pose_distance(const Pose& a, const Pose& b);

/// One centroid per occupied voxel, emitted in order of first occupancy.
PointCloud voxel_downsample(const PointCloud& cloud, float voxel);

bool all_finite(const PointCloud& cloud);

}  // namespace geoadapt
