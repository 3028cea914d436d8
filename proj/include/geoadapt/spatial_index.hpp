#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "geoadapt/geom.hpp"

namespace geoadapt {

struct Neighbor {
  std::size_t index;
  double distance;
  bool operator==(const Neighbor&) const = default;
};

/// Immutable k-d tree over n points of dimension d.
///
/// Every query returns exactly what a linear scan would: distances are exact
/// Euclidean (squared terms accumulated in double, dimension by dimension) and
/// results are ordered by (distance, index), so equal distances resolve to the
/// lowest original index. Safe for concurrent queries once built.
class SpatialIndex {
 public:
  SpatialIndex() = default;
  /// `data` is row-major n x dim.
  SpatialIndex(std::vector<float> data, std::size_t dim);

  static SpatialIndex from_points(const std::vector<Point3>& points);

  std::size_t size() const { return dim_ == 0 ? 0 : data_.size() / dim_; }
  std::size_t dim() const { return dim_; }
  std::span<const float> point(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }

  /// k nearest, ascending. k larger than size() returns every point.
  std::vector<Neighbor> knn(std::span<const float> query, std::size_t k) const;
  /// Single nearest neighbour; size() must be non-zero.
  Neighbor nearest(std::span<const float> query) const;
  /// All points with distance <= r, ascending by (distance, index).
  std::vector<Neighbor> radius_query(std::span<const float> query, double r) const;
  /// Indices only, unordered; used by hot loops that do not need distances.
  void radius_indices(std::span<const float> query, double r, std::vector<std::uint32_t>& out) const;

 private:
  struct Node {
    // Leaf when `left` == 0: points are order_[begin, end).
    std::uint32_t begin = 0, end = 0;
    std::uint32_t left = 0, right = 0;
    std::uint32_t axis = 0;
    float split = 0.0f;
  };

  std::uint32_t build(std::uint32_t begin, std::uint32_t end);
  double sq_dist(std::span<const float> q, std::size_t i) const;

  std::vector<float> data_;
  std::size_t dim_ = 0;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

/// Squared Euclidean distance with the same accumulation order the index uses.
double squared_distance(std::span<const float> a, std::span<const float> b);

std::vector<Neighbor> knn(const SpatialIndex& idx, std::span<const float> query, std::size_t k);
std::vector<Neighbor> radius_query(const SpatialIndex& idx, std::span<const float> query, double r);

inline std::span<const float> as_span(const Point3& p) { return {p.data(), 3}; }

}  // namespace geoadapt
