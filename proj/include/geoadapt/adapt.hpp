#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "geoadapt/correspondence.hpp"
#include "geoadapt/datasets.hpp"
#include "geoadapt/features.hpp"
#include "geoadapt/gcc.hpp"
#include "geoadapt/pseudolabel.hpp"
#include "geoadapt/tinynet/losses.hpp"
#include "geoadapt/tinynet/optim.hpp"

namespace geoadapt {

struct LabelingConfig {
  double t_pos = 3.0;   // m, inclusive
  double t_neg = 20.0;  // m, inclusive
  void validate() const;
};

enum class AssociationLabel { positive, negative, neither };
const char* to_string(AssociationLabel l);

AssociationLabel source_label(const Pose& a, const Pose& b, const LabelingConfig& cfg);

struct StageReport {
  std::string stage;
  std::size_t epochs = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double wall_seconds = 0.0;
  std::string checkpoint;
  std::vector<double> epoch_loss;
};

/// Appends one line per report: "stage=... epochs=... initial_loss=... ...".
void append_run_log(const std::filesystem::path& path, const StageReport& report);

/// Clouds with their raw descriptors computed once. Holds no poses.
struct ScanSet {
  std::vector<std::string> ids;
  std::vector<PointCloud> clouds;
  std::vector<Eigen::MatrixXf> raw;

  std::size_t size() const { return clouds.size(); }
};

ScanSet make_scan_set(std::vector<std::string> ids, std::vector<PointCloud> clouds, float radius);
ScanSet make_scan_set(const UnlabeledManifest& manifest, float radius);

/// Global descriptors of every scan in the set.
std::vector<Eigen::VectorXf> global_descriptors(const FeatureExtractor& extractor, const ScanSet& scans);
/// Global and local features of every scan.
FeatureBank feature_bank(const FeatureExtractor& extractor, const ScanSet& scans);

// ---- stage A: source pre-training ----

struct PretrainConfig {
  tinynet::OptimConfig optim;
  tinynet::TripletConfig triplet;
  tinynet::ContrastiveConfig contrastive;
  LabelingConfig labeling;
  float local_weight = 1.0f;
  std::size_t batch_size = 8;
  std::size_t negatives_per_anchor = 8;
  double correspondence_max_dist = 0.15;     // m, ground-truth matching radius
  std::size_t correspondences_per_pair = 256;
  bool augment = false;                      // point jitter; descriptors are z-rotation invariant
  float jitter = 0.01f;
  std::uint64_t seed = 1;
};

/// Adam, lr 1e-3 divided by 10 at 3/8 and 3/4 of the run.
tinynet::OptimConfig pretrain_schedule(std::size_t epochs, std::size_t steps_per_epoch);

/// Pose-labelled triplets (one positive, hardest of the sampled negatives under the
/// current model) plus hardest-contrastive loss on ground-truth correspondences.
StageReport pretrain_source(FeatureExtractor& extractor, const ScanSet& source, const std::vector<Pose>& poses,
                            const PretrainConfig& cfg);

// ---- stage B: classifier training ----

struct GccStageConfig {
  GccTrainConfig train;  // epochs / lr; the cosine horizon is set from the pair count
  LabelingConfig labeling;
  ProposalConfig proposal;
  ConsistencyConfig consistency;
  std::size_t pairs_per_class = 600;
  double hard_negative_fraction = 0.5;  // negatives taken from descriptor-nearest neighbours
  // Each cloud of a pair keeps a U[subsample_min, 1] fraction of its points
  // before matching, so the scorer sees sparse scans too. 1 disables.
  double subsample_min = 0.5;
  std::size_t holdout_every = 5;  // every n-th pair is held out and never subsampled
  std::uint64_t seed = 1;
};

struct LabeledPair {
  std::size_t a = 0, b = 0;
  int label = 0;
  bool held_out = false;
  PairEvidence evidence;
};

/// Samples balanced pairs from the source and computes their evidence with the
/// frozen extractor (features are recomputed for subsampled clouds). Held-out
/// pairs keep their full clouds: augmentation is for training only.
std::vector<LabeledPair> gather_source_pairs(const FeatureExtractor& extractor, const FeatureBank& bank, const std::vector<Pose>& poses,
                                             const GccStageConfig& cfg);

/// Trains the scorer on normalized evidence. Degenerate pairs are skipped.
StageReport train_gcc_stage(tinynet::Mlp& scorer, const std::vector<LabeledPair>& pairs, const GccStageConfig& cfg);

// ---- stage D: target re-training ----

struct RetrainConfig {
  tinynet::OptimConfig optim;
  tinynet::TripletConfig triplet;
  std::size_t batch_size = 8;
  std::uint64_t seed = 1;
};

/// Adam, lr 1e-4 divided by 10 at 5/8 of the run.
tinynet::OptimConfig retrain_schedule(std::size_t epochs, std::size_t steps_per_epoch);

/// Triplet loss over pseudo-label tuples; updates encoder and global head only.
/// Negatives are the hardest of each tuple's list under descriptors refreshed
/// at the start of every epoch.
StageReport retrain_target(FeatureExtractor& extractor, const std::vector<TrainingTuple>& tuples,
                           const ScanSet& target, const RetrainConfig& cfg);

}  // namespace geoadapt
