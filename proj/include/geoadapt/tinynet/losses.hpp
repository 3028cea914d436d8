#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace geoadapt::tinynet {

struct TripletConfig {
  float margin = 0.2f;
};

struct TripletResult {
  float loss = 0.0f;
  Eigen::VectorXf grad_anchor, grad_positive, grad_negative;
};

/// [ |a - p| - |a - n| + margin ]_+ and its subgradient (zero when inactive).
TripletResult triplet_loss(const Eigen::VectorXf& anchor, const Eigen::VectorXf& positive,
                           const Eigen::VectorXf& negative, const TripletConfig& cfg);

struct ContrastiveConfig {
  float positive_margin = 0.1f;   // m_p
  float negative_margin = 1.4f;   // m_n
  float negative_weight = 1.0f;   // lambda_n
  std::size_t mining_subset_size = 256;
};

/// Matched point pair (index into cloud a, index into cloud b).
struct IndexPair {
  std::uint32_t a;
  std::uint32_t b;
};

struct ContrastiveResult {
  float loss = 0.0f;
  float positive_term = 0.0f;
  float negative_term = 0.0f;
  Eigen::MatrixXf grad_a;  // same shape as features_a
  Eigen::MatrixXf grad_b;
  bool negatives_skipped = false;
};

/// Hardest-contrastive loss over correspondences. Features are d x n, one
/// point per column. The negative for l_a^i is the closest l_b^k, k in
/// `mining_b`, other than its correspondent; symmetrically for l_b^i with
/// `mining_a`. `exclude_a` / `exclude_b` optionally list, per correspondence,
/// further sorted mining indices to skip.
ContrastiveResult hardest_contrastive_loss(const Eigen::MatrixXf& features_a, const Eigen::MatrixXf& features_b,
                                           std::span<const IndexPair> correspondences,
                                           std::span<const std::uint32_t> mining_a,
                                           std::span<const std::uint32_t> mining_b, const ContrastiveConfig& cfg,
                                           const std::vector<std::vector<std::uint32_t>>* exclude_a = nullptr,
                                           const std::vector<std::vector<std::uint32_t>>* exclude_b = nullptr);

/// `count` distinct indices from [0, n) (all of them when n <= count), sorted.
std::vector<std::uint32_t> sample_mining_subset(std::size_t n, std::size_t count, std::mt19937_64& rng);

struct BceResult {
  float loss = 0.0f;
  float grad = 0.0f;  // d loss / d beta
};

constexpr float kProbabilityFloor = 1e-7f;

/// -(y log b + (1-y) log(1-b)) with b clamped to [1e-7, 1-1e-7].
BceResult bce_loss(float beta, int label);

/// Generalized mean over columns: out_j = (mean_i x_ji^p)^(1/p). Entries must be >= 0.
Eigen::VectorXf gem_pool(const Eigen::MatrixXf& features, float p);
/// Gradient of <gem_pool(features), upstream> with respect to features.
Eigen::MatrixXf gem_pool_backward(const Eigen::MatrixXf& features, const Eigen::VectorXf& pooled, float p,
                                  const Eigen::VectorXf& upstream);

}  // namespace geoadapt::tinynet
