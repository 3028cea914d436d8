#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "geoadapt/datasets.hpp"
#include "geoadapt/features.hpp"
#include "geoadapt/gcc.hpp"
#include "geoadapt/spatial_index.hpp"

namespace geoadapt {

struct PseudoLabelConfig {
  float alpha_pos = 0.95f;
  float alpha_neg = 0.2f;
  std::size_t k = 50;
  std::size_t temporal_exclusion_window = 50;  // 0 disables

  void validate() const;
};

enum class Decision { positive, negative, neither };
const char* to_string(Decision d);
Decision parse_decision(const std::string& s);

struct PseudoLabel {
  std::size_t anchor = 0;
  std::size_t candidate = 0;
  double l2_distance = 0.0;
  float beta = 0.0f;
  bool degenerate = false;
  Decision decision = Decision::neither;
};

struct TrainingTuple {
  std::size_t anchor = 0;
  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;

  friend bool operator==(const TrainingTuple&, const TrainingTuple&) = default;
};

/// Exactly K nearest database entries by L2, skipping `anchor_index` and every
/// index within the temporal window of it. Ties go to the lowest index.
/// Throws ValidationError when fewer than K entries are eligible.
std::vector<Neighbor> retrieve_candidates(std::size_t anchor_index, const Eigen::VectorXf& anchor,
                                          const std::vector<Eigen::VectorXf>& database, const PseudoLabelConfig& cfg);

/// Positive iff beta >= alpha_pos, Negative iff beta <= alpha_neg.
Decision label_pair(float beta, const PseudoLabelConfig& cfg);

/// One tuple per anchor with at least one Positive and one Negative, in order
/// of first appearance. Throws StarvationError when no tuple survives.
std::vector<TrainingTuple> build_tuples(const std::vector<PseudoLabel>& labels);

/// Features of every scan in a set, index-aligned.
struct FeatureBank {
  std::vector<PointCloud> clouds;
  std::vector<Extraction> features;

  std::size_t size() const { return clouds.size(); }
  std::vector<Eigen::VectorXf> globals() const;
};

FeatureBank extract_bank(const FeatureExtractor& extractor, const std::vector<PointCloud>& clouds);
std::vector<PointCloud> load_clouds(const UnlabeledManifest& manifest);

/// Retrieval and geometric evidence for every (anchor, candidate) pair. This is
/// the costly half of pseudo-labelling and does not depend on the scorer,
/// thresholds or confidence normalization.
struct CandidateEvidence {
  std::size_t anchor = 0;
  std::size_t candidate = 0;
  double l2_distance = 0.0;
  PairEvidence evidence;
};

std::vector<CandidateEvidence> gather_candidate_evidence(const FeatureBank& bank, const PseudoLabelConfig& cfg,
                                                         const ProposalConfig& proposal,
                                                         const ConsistencyConfig& consistency);

/// Scores and labels gathered evidence; order is preserved.
std::vector<PseudoLabel> label_candidates(const std::vector<CandidateEvidence>& evidence, const tinynet::Mlp& scorer,
                                          const PseudoLabelConfig& cfg, const ConsistencyConfig& consistency);

struct PseudoLabelResult {
  std::vector<TrainingTuple> tuples;
  std::vector<PseudoLabel> audit;
};

/// Full stage: extract, retrieve, propose, score, label, assemble. Reads no poses.
PseudoLabelResult pseudo_label_dataset(const FeatureExtractor& extractor, const tinynet::Mlp& scorer,
                                       const UnlabeledManifest& target, const PseudoLabelConfig& cfg,
                                       const ProposalConfig& proposal, const ConsistencyConfig& consistency);

/// Audit lines: "anchor_id, candidate_id, l2_distance, beta, decision".
void write_audit(const std::filesystem::path& path, const std::vector<PseudoLabel>& audit,
                 const std::vector<std::string>& ids);
/// Tuple lines: "anchor_id | pos_id pos_id ... | neg_id ...".
void write_tuples(const std::filesystem::path& path, const std::vector<TrainingTuple>& tuples,
                  const std::vector<std::string>& ids);
std::vector<TrainingTuple> read_tuples(const std::filesystem::path& path, const std::vector<std::string>& ids);

}  // namespace geoadapt
