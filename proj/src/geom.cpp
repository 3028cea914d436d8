#include "geoadapt/geom.hpp"

#include <cmath>
#include <sstream>
#include <unordered_map>

#include <Eigen/Geometry>

#include "geoadapt/error.hpp"

namespace geoadapt {

Pose Pose::from_yaw(double yaw, const Eigen::Vector3d& t) {
  Pose p;
  p.rotation = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  p.translation = t;
  return p;
}

Pose Pose::inverse() const {
  Pose p;
  p.rotation = rotation.transpose();
  p.translation = -(p.rotation * translation);
  return p;
}

Pose Pose::operator*(const Pose& rhs) const {
  Pose p;
  p.rotation = rotation * rhs.rotation;
  p.translation = rotation * rhs.translation + translation;
  return p;
}

void Pose::validate(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) {
    throw ValidationError("pose contains non-finite values");
  }
  const double ortho = (rotation * rotation.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  const double det = rotation.determinant();
  if (ortho > tol || std::abs(det - 1.0) > tol) {
    std::ostringstream os;
    os << "rotation is not a proper rotation (|R R^T - I|_max = " << ortho << ", det = " << det << ")";
    throw ValidationError(os.str());
  }
}

PointCloud apply_pose(const Pose& pose, const PointCloud& cloud) {
  pose.validate();
  PointCloud out;
  out.intensity = cloud.intensity;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) {
    // Accumulate in double so large translations do not lose the local offset.
    const Eigen::Vector3d q = pose.rotation * p.cast<double>() + pose.translation;
    out.points.emplace_back(q.cast<float>());
  }
  return out;
}

double pose_distance(const Pose& a, const Pose& b) { return (a.translation - b.translation).norm(); }

namespace {

struct CellKey {
  std::int64_t x, y, z;
  bool operator==(const CellKey&) const = default;
};

struct CellHash {
  std::size_t operator()(const CellKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 73856093ULL;
    h ^= static_cast<std::uint64_t>(k.y) * 19349663ULL;
    h ^= static_cast<std::uint64_t>(k.z) * 83492791ULL;
    return static_cast<std::size_t>(h);
  }
};

}  // namespace

PointCloud voxel_downsample(const PointCloud& cloud, float voxel) {
  if (!(voxel > 0.0f)) throw ValidationError("voxel size must be positive");
  struct Acc {
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    double intensity = 0.0;
    std::size_t count = 0;
  };
  std::unordered_map<CellKey, std::size_t, CellHash> slot;
  std::vector<Acc> cells;
  slot.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    const CellKey key{static_cast<std::int64_t>(std::floor(p.x() / voxel)),
                      static_cast<std::int64_t>(std::floor(p.y() / voxel)),
                      static_cast<std::int64_t>(std::floor(p.z() / voxel))};
    auto [it, inserted] = slot.try_emplace(key, cells.size());
    if (inserted) cells.emplace_back();
    Acc& a = cells[it->second];
    a.sum += p.cast<double>();
    a.intensity += cloud.intensity_at(i);
    ++a.count;
  }
  PointCloud out;
  out.points.reserve(cells.size());
  if (cloud.has_intensity()) out.intensity.reserve(cells.size());
  for (const auto& a : cells) {
    const double n = static_cast<double>(a.count);
    out.points.emplace_back((a.sum / n).cast<float>());
    if (cloud.has_intensity()) out.intensity.push_back(static_cast<float>(a.intensity / n));
  }
  return out;
}

bool all_finite(const PointCloud& cloud) {
  for (const auto& p : cloud.points) {
    if (!p.allFinite()) return false;
  }
  for (float v : cloud.intensity) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace geoadapt
