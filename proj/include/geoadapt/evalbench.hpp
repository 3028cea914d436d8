#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "geoadapt/geom.hpp"
#include "geoadapt/pseudolabel.hpp"

namespace geoadapt {

/// One entry of recall_ns: an absolute N, or a percentage of the database
/// (N = ceil(pct / 100 * database size)).
struct RecallN {
  double value = 1;
  bool percent = false;

  std::size_t resolve(std::size_t database_size) const;
  std::string label() const;  // "1", "5", "1%"
  static RecallN parse(const std::string& s);
};

struct EvalConfig {
  double revisit_threshold = 3.0;  // m; 5.0 for ALITA-style sets
  std::vector<RecallN> recall_ns = {{1, false}, {5, false}, {1, true}};
};

/// Descriptors and poses of a query or database set.
struct DescriptorSet {
  std::vector<std::string> ids;
  std::vector<Eigen::VectorXf> descriptors;
  std::vector<Pose> poses;

  std::size_t size() const { return descriptors.size(); }
};

struct RetrievalResult {
  std::size_t query = 0;
  std::vector<std::size_t> ranked;   // database indices, best first
  std::vector<double> distances;     // non-decreasing
  std::optional<std::size_t> success_rank;  // 1-based rank of the first true revisit
  bool has_revisit = false;
};

/// Ranks up to `depth` database entries per query (ties to the lowest index).
std::vector<RetrievalResult> retrieve(const DescriptorSet& queries, const DescriptorSet& database, std::size_t depth,
                                      double revisit_threshold);

struct RecallReport {
  std::vector<std::pair<std::string, double>> recall;  // label -> percentage, in recall_ns order
  std::size_t evaluated = 0;
  std::size_t excluded = 0;  // queries without any true revisit
  double at(const std::string& label) const;
};

RecallReport recall_at_n(const DescriptorSet& queries, const DescriptorSet& database, const EvalConfig& cfg);

struct PrPoint {
  double threshold = 0.0;
  double precision = 1.0;
  double recall = 0.0;
};

struct PrCurve {
  std::vector<PrPoint> points;  // thresholds ascending
  double auc = 0.0;
};

/// Sweeps a threshold over top-1 distances. Accepted top-1 within the revisit
/// threshold is a true positive, otherwise a false positive. Recall divides
/// by the queries that have a true revisit.
PrCurve pr_curve(const DescriptorSet& queries, const DescriptorSet& database, const EvalConfig& cfg);

struct Histogram {
  double lo = 0.0, hi = 0.0;
  std::vector<double> counts;
  double total() const;
};

struct Separability {
  Histogram positive, negative;
  double overlap = 0.0;  // sum of min over normalized bins
};

/// 50-bin histograms of descriptor L2 distances over [0, max distance].
Separability separability_histogram(const std::vector<double>& positive_distances,
                                    const std::vector<double>& negative_distances, std::size_t bins = 50);

/// Descriptor distances of pose-labelled pairs (T_pos / T_neg) within one set.
void labelled_pair_distances(const DescriptorSet& set, double t_pos, double t_neg, std::vector<double>& positive,
                             std::vector<double>& negative, std::size_t min_index_gap = 0);

struct PositiveDistanceReport {
  Histogram histogram;
  double fraction_beyond = 0.0;  // share of anchor-positive pairs farther than t_pos
  std::size_t pairs = 0;
};

PositiveDistanceReport positive_distance_histogram(const std::vector<TrainingTuple>& tuples,
                                                   const std::vector<Pose>& poses, double t_pos,
                                                   double bin_width = 1.0);

/// Precision of pseudo-positives against pose ground truth (distance <= t_pos).
double pseudo_positive_precision(const std::vector<PseudoLabel>& audit, const std::vector<Pose>& poses, double t_pos);

/// Area under an ROC curve (Mann-Whitney, ties counted half).
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// ---- text dumps ----
void write_recall_table(const std::filesystem::path& path, const RecallReport& r);
void write_pr_curve(const std::filesystem::path& path, const PrCurve& c);
void write_histogram(const std::filesystem::path& path, const std::string& name, const Histogram& h);

}  // namespace geoadapt
