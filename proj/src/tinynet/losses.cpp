#include "geoadapt/tinynet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "geoadapt/error.hpp"

namespace geoadapt::tinynet {

TripletResult triplet_loss(const Eigen::VectorXf& anchor, const Eigen::VectorXf& positive,
                           const Eigen::VectorXf& negative, const TripletConfig& cfg) {
  if (anchor.size() != positive.size() || anchor.size() != negative.size()) {
    throw ValidationError("triplet inputs differ in length");
  }
  TripletResult r;
  r.grad_anchor = Eigen::VectorXf::Zero(anchor.size());
  r.grad_positive = Eigen::VectorXf::Zero(anchor.size());
  r.grad_negative = Eigen::VectorXf::Zero(anchor.size());

  const Eigen::VectorXf dp = anchor - positive;
  const Eigen::VectorXf dn = anchor - negative;
  const float np = dp.norm();
  const float nn = dn.norm();
  const float value = np - nn + cfg.margin;
  if (value <= 0.0f) return r;
  r.loss = value;
  // d|v|/dv = v/|v|; at v = 0 the zero subgradient is used.
  if (np > 0.0f) {
    r.grad_anchor += dp / np;
    r.grad_positive -= dp / np;
  }
  if (nn > 0.0f) {
    r.grad_anchor -= dn / nn;
    r.grad_negative += dn / nn;
  }
  return r;
}

std::vector<std::uint32_t> sample_mining_subset(std::size_t n, std::size_t count, std::mt19937_64& rng) {
  std::vector<std::uint32_t> all(n);
  std::iota(all.begin(), all.end(), 0u);
  if (n <= count) return all;
  // Partial Fisher-Yates; the draw only depends on rng state.
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(all[i], all[pick(rng)]);
  }
  all.resize(count);
  std::sort(all.begin(), all.end());
  return all;
}

namespace {

struct Hardest {
  std::uint32_t index = 0;
  float d2 = std::numeric_limits<float>::infinity();
  bool found = false;
};

// Closest column of `pool` (restricted to `mining`) to `query`, skipping `skip` and `extra`.
Hardest hardest_in(const Eigen::MatrixXf& pool, const Eigen::VectorXf& query, std::span<const std::uint32_t> mining,
                   std::uint32_t skip, const std::vector<std::uint32_t>* extra) {
  Hardest h;
  for (std::uint32_t k : mining) {
    if (k == skip) continue;
    if (extra && std::binary_search(extra->begin(), extra->end(), k)) continue;
    const float d2 = (pool.col(k) - query).squaredNorm();
    if (d2 < h.d2) {
      h = {k, d2, true};
    }
  }
  return h;
}

}  // namespace

ContrastiveResult hardest_contrastive_loss(const Eigen::MatrixXf& features_a, const Eigen::MatrixXf& features_b,
                                           std::span<const IndexPair> correspondences,
                                           std::span<const std::uint32_t> mining_a,
                                           std::span<const std::uint32_t> mining_b, const ContrastiveConfig& cfg,
                                           const std::vector<std::vector<std::uint32_t>>* exclude_a,
                                           const std::vector<std::vector<std::uint32_t>>* exclude_b) {
  if (correspondences.empty()) throw ValidationError("hardest contrastive loss needs at least one correspondence");
  if (features_a.rows() != features_b.rows()) throw ValidationError("local feature dimensions differ");
  ContrastiveResult r;
  r.grad_a = Eigen::MatrixXf::Zero(features_a.rows(), features_a.cols());
  r.grad_b = Eigen::MatrixXf::Zero(features_b.rows(), features_b.cols());
  const float inv_n = 1.0f / static_cast<float>(correspondences.size());
  r.negatives_skipped = mining_a.empty() || mining_b.empty();

  for (std::size_t i = 0; i < correspondences.size(); ++i) {
    const auto [ia, ib] = correspondences[i];
    const Eigen::VectorXf la = features_a.col(ia);
    const Eigen::VectorXf lb = features_b.col(ib);

    const Eigen::VectorXf diff = la - lb;
    const float pos = diff.squaredNorm() - cfg.positive_margin;
    if (pos > 0.0f) {
      r.positive_term += pos * inv_n;
      r.grad_a.col(ia) += 2.0f * diff * inv_n;
      r.grad_b.col(ib) -= 2.0f * diff * inv_n;
    }
    if (r.negatives_skipped) continue;

    // l_a^i against the hardest feature of b.
    const Hardest hb = hardest_in(features_b, la, mining_b, ib, exclude_b ? &(*exclude_b)[i] : nullptr);
    if (hb.found && cfg.negative_margin - hb.d2 > 0.0f) {
      r.negative_term += cfg.negative_weight * (cfg.negative_margin - hb.d2) * inv_n;
      const Eigen::VectorXf d = la - features_b.col(hb.index);
      r.grad_a.col(ia) -= cfg.negative_weight * 2.0f * d * inv_n;
      r.grad_b.col(hb.index) += cfg.negative_weight * 2.0f * d * inv_n;
    }
    // l_b^i against the hardest feature of a.
    const Hardest ha = hardest_in(features_a, lb, mining_a, ia, exclude_a ? &(*exclude_a)[i] : nullptr);
    if (ha.found && cfg.negative_margin - ha.d2 > 0.0f) {
      r.negative_term += cfg.negative_weight * (cfg.negative_margin - ha.d2) * inv_n;
      const Eigen::VectorXf d = lb - features_a.col(ha.index);
      r.grad_b.col(ib) -= cfg.negative_weight * 2.0f * d * inv_n;
      r.grad_a.col(ha.index) += cfg.negative_weight * 2.0f * d * inv_n;
    }
  }
  r.loss = r.positive_term + r.negative_term;
  return r;
}

BceResult bce_loss(float beta, int label) {
  const float b = std::clamp(beta, kProbabilityFloor, 1.0f - kProbabilityFloor);
  const float y = label ? 1.0f : 0.0f;
  BceResult r;
  r.loss = -(y * std::log(b) + (1.0f - y) * std::log(1.0f - b));
  r.grad = -y / b + (1.0f - y) / (1.0f - b);
  return r;
}

Eigen::VectorXf gem_pool(const Eigen::MatrixXf& features, float p) {
  if (features.cols() == 0) throw ValidationError("GeM pooling over an empty feature set");
  if (!(p >= 1.0f)) throw ValidationError("GeM exponent must be >= 1");
  if (features.minCoeff() < 0.0f) throw ValidationError("GeM pooling requires non-negative features");
  const Eigen::VectorXf mean = features.array().pow(p).rowwise().mean();
  return mean.array().pow(1.0f / p);
}

Eigen::MatrixXf gem_pool_backward(const Eigen::MatrixXf& features, const Eigen::VectorXf& pooled, float p,
                                  const Eigen::VectorXf& upstream) {
  const float n = static_cast<float>(features.cols());
  Eigen::MatrixXf grad(features.rows(), features.cols());
  for (Eigen::Index j = 0; j < features.rows(); ++j) {
    const float g = pooled(j);
    if (g <= 0.0f) {
      grad.row(j).setZero();
      continue;
    }
    // d out_j / d x_ji = x_ji^(p-1) * out_j^(1-p) / n
    const float scale = upstream(j) * std::pow(g, 1.0f - p) / n;
    grad.row(j) = features.row(j).array().pow(p - 1.0f) * scale;
  }
  return grad;
}

}  // namespace geoadapt::tinynet
