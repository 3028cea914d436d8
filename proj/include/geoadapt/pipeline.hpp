#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "geoadapt/adapt.hpp"
#include "geoadapt/config.hpp"
#include "geoadapt/evalbench.hpp"
#include "geoadapt/pseudolabel.hpp"

namespace geoadapt {

/// Scans of one split with raw descriptors; poses are returned separately and
/// only when the manifest carries them.
ScanSet load_split(const DatasetManifest& manifest, Split split, float radius, std::vector<Pose>* poses = nullptr);

/// Query and database descriptors with poses, ready for recall / PR metrics.
struct EvalSets {
  ScanSet query, database;
  std::vector<Pose> query_poses, database_poses;
};
EvalSets load_eval_sets(const DatasetManifest& manifest, float radius);

struct Evaluation {
  RecallReport recall;
  PrCurve pr;
  Separability separability;
};

Evaluation evaluate(const FeatureExtractor& extractor, const EvalSets& sets, const RunConfig& cfg);

/// Every fifth source pair is held out from classifier training.
struct StageBResult {
  tinynet::Mlp scorer;
  StageReport report;
  double holdout_accuracy = 0.0;
  double holdout_auc = 0.0;
};
StageBResult run_stage_b(const std::vector<LabeledPair>& pairs, const RunConfig& cfg);

/// Pose-threshold decisions on retrieved candidates from poses (the supervised reference).
std::vector<PseudoLabel> ground_truth_labels(const std::vector<CandidateEvidence>& evidence,
                                             const std::vector<Pose>& poses, const LabelingConfig& cfg);

std::string checkpoint_metadata(const RunConfig& cfg, const std::string& stage);
void write_extractor(const std::filesystem::path& path, const FeatureExtractor& fx, const std::string& metadata);
FeatureExtractor read_extractor(const std::filesystem::path& path, const ExtractorConfig& cfg);
void write_scorer(const std::filesystem::path& path, const tinynet::Mlp& scorer, const std::string& metadata);
tinynet::Mlp read_scorer(const std::filesystem::path& path);

struct PipelineResult {
  std::filesystem::path final_checkpoint;
  std::vector<StageReport> reports;
  std::vector<std::string> target_ids;
  std::vector<TrainingTuple> tuples;
  std::vector<PseudoLabel> audit;
};

/// Stages A-D with an artifact after each:
///   stage_a_extractor.ckpt, stage_b_scorer.ckpt, stage_c_tuples.txt +
///   stage_c_audit.txt, stage_d_extractor.ckpt, and run.log.
/// A stage whose artifact exists and was written under the same resolved
/// configuration is loaded instead of recomputed. Stages C and D see the
/// target only through UnlabeledManifest.
PipelineResult run_pipeline(const DatasetManifest& source, const DatasetManifest& target, const RunConfig& cfg,
                            const std::filesystem::path& out_dir);

// ---- ablation harness ----

enum class AblationAxis { sort, scale, alpha_pos, alpha_neg };
AblationAxis parse_ablation_axis(const std::string& s);
const char* to_string(AblationAxis a);

/// Inputs shared by every cell: the frozen source model, its labelled source
/// pairs and the target candidate evidence (both independent of the swept axes).
struct AblationContext {
  FeatureExtractor source_model;
  std::vector<LabeledPair> source_pairs;
  std::vector<CandidateEvidence> target_evidence;
  ScanSet target_train;
  EvalSets target_eval;
  /// Target training poses, used only to score pseudo-label quality and AUC.
  std::vector<Pose> target_train_poses;
};

AblationContext make_ablation_context(const FeatureExtractor& source_model, const DatasetManifest& source,
                                      const DatasetManifest& target, const RunConfig& cfg);

struct AblationRow {
  std::string axis, value;
  double holdout_auc = 0.0;     // held-out source pairs
  double candidate_auc = 0.0;   // target candidates, pose-labelled
  double pseudo_precision = 0.0;
  std::size_t tuples = 0;
  double recall_1 = 0.0, recall_5 = 0.0, recall_1pct = 0.0;
  double pr_auc = 0.0;
  std::string status = "ok";
};

/// Re-runs stages B-D for each grid value applied on top of `fixed`.
/// A failing cell is recorded in `status` and the sweep continues.
std::vector<AblationRow> ablation_sweep(const AblationContext& ctx, AblationAxis axis,
                                        const std::vector<std::string>& grid, const RunConfig& fixed);
void write_ablation_table(const std::filesystem::path& path, const std::vector<AblationRow>& rows,
                          const std::string& header = "");

}  // namespace geoadapt
