#include "geoadapt/spatial_index.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "geoadapt/error.hpp"

namespace geoadapt {

namespace {

constexpr std::uint32_t kLeafSize = 12;

bool closer(const Neighbor& a, const Neighbor& b) {
  return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
}

// Max-heap keyed by (squared distance, index): front() is the current worst.
struct Candidate {
  double d2;
  std::uint32_t index;
  bool operator<(const Candidate& o) const { return d2 < o.d2 || (d2 == o.d2 && index < o.index); }
};

}  // namespace

double squared_distance(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = static_cast<double>(a[k]) - static_cast<double>(b[k]);
    s += d * d;
  }
  return s;
}

SpatialIndex::SpatialIndex(std::vector<float> data, std::size_t dim) : data_(std::move(data)), dim_(dim) {
  if (dim_ == 0) throw ValidationError("spatial index dimension must be positive");
  if (data_.size() % dim_ != 0) throw ValidationError("spatial index data is not a multiple of its dimension");
  order_.resize(size());
  std::iota(order_.begin(), order_.end(), 0u);
  if (!order_.empty()) {
    nodes_.reserve(2 * order_.size() / kLeafSize + 2);
    build(0, static_cast<std::uint32_t>(order_.size()));
  }
}

SpatialIndex SpatialIndex::from_points(const std::vector<Point3>& points) {
  std::vector<float> flat;
  flat.reserve(points.size() * 3);
  for (const auto& p : points) flat.insert(flat.end(), {p.x(), p.y(), p.z()});
  return SpatialIndex(std::move(flat), 3);
}

std::uint32_t SpatialIndex::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::uint32_t>(nodes_.size());
  nodes_.push_back(Node{begin, end, 0, 0, 0, 0.0f});
  if (end - begin <= kLeafSize) return id;

  std::uint32_t axis = 0;
  float best_spread = -1.0f;
  for (std::uint32_t a = 0; a < dim_; ++a) {
    float lo = data_[order_[begin] * dim_ + a], hi = lo;
    for (std::uint32_t i = begin + 1; i < end; ++i) {
      const float v = data_[order_[i] * dim_ + a];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (hi - lo > best_spread) {
      best_spread = hi - lo;
      axis = a;
    }
  }
  if (best_spread <= 0.0f) return id;  // all coincident: keep as a leaf

  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) { return data_[a * dim_ + axis] < data_[b * dim_ + axis]; });
  const float split = data_[order_[mid] * dim_ + axis];

  const std::uint32_t left = build(begin, mid);
  const std::uint32_t right = build(mid, end);
  Node& n = nodes_[id];
  n.left = left;
  n.right = right;
  n.axis = axis;
  n.split = split;
  return id;
}

double SpatialIndex::sq_dist(std::span<const float> q, std::size_t i) const {
  return squared_distance(q, point(i));
}

std::vector<Neighbor> SpatialIndex::knn(std::span<const float> query, std::size_t k) const {
  if (query.size() != dim_) throw ValidationError("query dimension does not match index");
  if (k == 0) throw ValidationError("k must be at least 1");
  k = std::min(k, size());
  std::vector<Candidate> heap;
  heap.reserve(k + 1);
  if (k == 0) return {};

  // Iterative descent with an explicit stack of (node, lower bound on d2).
  struct Item {
    std::uint32_t node;
    double bound;
  };
  std::vector<Item> stack;
  stack.push_back({0, 0.0});
  while (!stack.empty()) {
    const Item it = stack.back();
    stack.pop_back();
    if (heap.size() == k && it.bound > heap.front().d2) continue;
    const Node& n = nodes_[it.node];
    if (n.left == 0) {
      for (std::uint32_t p = n.begin; p < n.end; ++p) {
        const std::uint32_t idx = order_[p];
        const Candidate c{sq_dist(query, idx), idx};
        if (heap.size() < k) {
          heap.push_back(c);
          std::push_heap(heap.begin(), heap.end());
        } else if (c < heap.front()) {
          std::pop_heap(heap.begin(), heap.end());
          heap.back() = c;
          std::push_heap(heap.begin(), heap.end());
        }
      }
      continue;
    }
    const double diff = static_cast<double>(query[n.axis]) - static_cast<double>(n.split);
    const double plane = diff * diff;
    const std::uint32_t near = diff < 0 ? n.left : n.right;
    const std::uint32_t far = diff < 0 ? n.right : n.left;
    // Push far first so the near side is explored first.
    stack.push_back({far, std::max(it.bound, plane)});
    stack.push_back({near, it.bound});
  }
  std::sort_heap(heap.begin(), heap.end());
  std::vector<Neighbor> out;
  out.reserve(heap.size());
  for (const auto& c : heap) out.push_back({c.index, std::sqrt(c.d2)});
  return out;
}

Neighbor SpatialIndex::nearest(std::span<const float> query) const {
  if (size() == 0) throw ValidationError("nearest() on an empty index");
  return knn(query, 1).front();
}

void SpatialIndex::radius_indices(std::span<const float> query, double r, std::vector<std::uint32_t>& out) const {
  out.clear();
  if (nodes_.empty()) return;
  // Membership is decided on the distance itself so that r = sqrt(d^2) always
  // includes the point; pruning gets a little slack for the same reason.
  const double r2 = r * r * (1.0 + 1e-12);
  std::uint32_t stack[128];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& n = nodes_[stack[--top]];
    if (n.left == 0) {
      for (std::uint32_t p = n.begin; p < n.end; ++p) {
        const double d2 = sq_dist(query, order_[p]);
        if (d2 <= r2 && std::sqrt(d2) <= r) out.push_back(order_[p]);
      }
      continue;
    }
    const double diff = static_cast<double>(query[n.axis]) - static_cast<double>(n.split);
    if (diff <= 0 || diff * diff <= r2) stack[top++] = n.left;
    if (diff >= 0 || diff * diff <= r2) stack[top++] = n.right;
  }
}

std::vector<Neighbor> SpatialIndex::radius_query(std::span<const float> query, double r) const {
  if (query.size() != dim_) throw ValidationError("query dimension does not match index");
  if (!(r >= 0.0)) throw ValidationError("radius must be non-negative");
  std::vector<std::uint32_t> idx;
  radius_indices(query, r, idx);
  std::vector<Neighbor> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back({i, std::sqrt(sq_dist(query, i))});
  std::sort(out.begin(), out.end(), closer);
  return out;
}

std::vector<Neighbor> knn(const SpatialIndex& idx, std::span<const float> query, std::size_t k) {
  return idx.knn(query, k);
}

std::vector<Neighbor> radius_query(const SpatialIndex& idx, std::span<const float> query, double r) {
  return idx.radius_query(query, r);
}

}  // namespace geoadapt
