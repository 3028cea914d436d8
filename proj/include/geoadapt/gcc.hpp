#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "geoadapt/correspondence.hpp"
#include "geoadapt/geom.hpp"
#include "geoadapt/tinynet/mlp.hpp"
#include "geoadapt/tinynet/optim.hpp"

namespace geoadapt {

struct ConsistencyConfig {
  double d_thr = 0.5;               // m
  std::size_t input_length = 256;   // L
  double tolerance = 1e-6;
  std::size_t max_iterations = 200;
  bool sort = true;                 // ablation switches for normalize_confidence
  bool scale = true;

  void validate() const;
};

/// m_ij = max(0, 1 - d_ij^2 / d_thr^2), d_ij the difference of the pair's
/// intra-cloud lengths. Unit diagonal.
Eigen::MatrixXd consistency_matrix(const CorrespondenceSet& corr, const PointCloud& cloud_a,
                                   const PointCloud& cloud_b, const ConsistencyConfig& cfg);

struct EigenResult {
  Eigen::VectorXd vector;  // unit L2, non-negative entry sum
  double eigenvalue = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Power iteration from the all-ones vector.
EigenResult leading_eigenvector(const Eigen::MatrixXd& m, const ConsistencyConfig& cfg);

/// abs, sort descending, divide by the max, then truncate or zero-pad to L.
/// `sort` / `scale` switch off the corresponding step.
Eigen::VectorXf normalize_confidence(const Eigen::VectorXd& e, const ConsistencyConfig& cfg);

/// Scorer MLP: L -> 64 -> 32 -> 1, relu hidden, sigmoid output. Zero-initialized.
tinynet::Mlp make_scorer(std::size_t input_length);

/// Everything about a pair that does not depend on normalization or scorer.
struct PairEvidence {
  Eigen::VectorXd eigenvector;  // raw leading eigenvector; empty when degenerate
  std::size_t correspondences = 0;
  bool degenerate = false;
  bool converged = true;
};

/// Proposal -> consistency matrix -> leading eigenvector, entries in anchor point order.
PairEvidence pair_evidence(const Eigen::MatrixXf& local_a, const Eigen::MatrixXf& local_b, const PointCloud& cloud_a,
                           const PointCloud& cloud_b, const ProposalConfig& proposal, const ConsistencyConfig& cfg);

struct PairScore {
  float beta = 0.0f;
  bool degenerate = false;
};

/// Degenerate evidence scores 0 without consulting the scorer.
PairScore score_pair(const tinynet::Mlp& scorer, const PairEvidence& evidence, const ConsistencyConfig& cfg);
PairScore score_pair(const tinynet::Mlp& scorer, const Eigen::VectorXf& confidence);

struct LabeledEvidence {
  Eigen::VectorXf confidence;
  int label = 0;
};

struct GccTrainConfig {
  tinynet::OptimConfig optim;
  std::size_t batch_size = 8;
  std::uint64_t seed = 1;
};

/// SGD with momentum 0.9, lr 0.01, 5 epochs, cosine decay to zero over all steps.
GccTrainConfig default_gcc_train_config(std::size_t pairs);

struct GccTrainReport {
  std::vector<double> epoch_loss;
  std::size_t steps = 0;
};

/// Mini-batch BCE training of the scorer. Throws ValidationError when every
/// label is the same.
GccTrainReport train_gcc(tinynet::Mlp& scorer, const std::vector<LabeledEvidence>& pairs, const GccTrainConfig& cfg);

/// One diagnostic line: "anchor candidate beta converged degenerate n_corr e_1 ... e_L"
/// with the normalized confidence (no values for degenerate pairs).
void write_evidence_record(std::ostream& os, const std::string& anchor, const std::string& candidate,
                           const PairEvidence& evidence, const PairScore& score, const ConsistencyConfig& cfg);

}  // namespace geoadapt
