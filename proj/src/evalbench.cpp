#include "geoadapt/evalbench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "geoadapt/error.hpp"
#include "geoadapt/parallel.hpp"

namespace geoadapt {

std::size_t RecallN::resolve(std::size_t database_size) const {
  if (!percent) return static_cast<std::size_t>(value);
  const double n = std::ceil(value / 100.0 * static_cast<double>(database_size) - 1e-9);
  return std::max<std::size_t>(1, static_cast<std::size_t>(n));
}

std::string RecallN::label() const {
  std::ostringstream os;
  os << value << (percent ? "%" : "");
  return os.str();
}

RecallN RecallN::parse(const std::string& s) {
  RecallN r;
  std::string body = s;
  if (!body.empty() && body.back() == '%') {
    r.percent = true;
    body.pop_back();
  }
  try {
    std::size_t used = 0;
    r.value = std::stod(body, &used);
    if (used != body.size()) throw std::invalid_argument(s);
  } catch (const std::exception&) {
    throw ConfigError("bad recall N '" + s + "'");
  }
  if (!(r.value > 0) || (!r.percent && r.value != std::floor(r.value)))
    throw ConfigError("recall N must be a positive integer or percentage: '" + s + "'");
  return r;
}

double RecallReport::at(const std::string& label) const {
  for (const auto& [l, v] : recall)
    if (l == label) return v;
  throw ValidationError("no recall entry '" + label + "'");
}

std::vector<RetrievalResult> retrieve(const DescriptorSet& queries, const DescriptorSet& database, std::size_t depth,
                                      double revisit_threshold) {
  if (queries.poses.size() != queries.size() || database.poses.size() != database.size())
    throw ValidationError("evaluation needs a pose for every query and database entry");
  std::vector<RetrievalResult> out(queries.size());
  parallel_for(queries.size(), [&](std::size_t q) {
    RetrievalResult& r = out[q];
    r.query = q;
    std::vector<std::pair<double, std::size_t>> d(database.size());
    for (std::size_t j = 0; j < database.size(); ++j) {
      double s = 0.0;
      for (Eigen::Index t = 0; t < queries.descriptors[q].size(); ++t) {
        const double diff = static_cast<double>(queries.descriptors[q](t)) - database.descriptors[j](t);
        s += diff * diff;
      }
      d[j] = {s, j};
      if (pose_distance(queries.poses[q], database.poses[j]) <= revisit_threshold) r.has_revisit = true;
    }
    const std::size_t keep = std::min(depth, d.size());
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(keep), d.end());
    for (std::size_t k = 0; k < keep; ++k) {
      r.ranked.push_back(d[k].second);
      r.distances.push_back(std::sqrt(d[k].first));
      if (!r.success_rank && pose_distance(queries.poses[q], database.poses[d[k].second]) <= revisit_threshold)
        r.success_rank = k + 1;
    }
  });
  return out;
}

RecallReport recall_at_n(const DescriptorSet& queries, const DescriptorSet& database, const EvalConfig& cfg) {
  if (database.size() == 0) throw ValidationError("empty database");
  std::size_t depth = 1;
  for (const auto& n : cfg.recall_ns) depth = std::max(depth, n.resolve(database.size()));
  const auto results = retrieve(queries, database, depth, cfg.revisit_threshold);
  RecallReport rep;
  std::vector<std::size_t> hits(cfg.recall_ns.size(), 0);
  for (const auto& r : results) {
    if (!r.has_revisit) {
      ++rep.excluded;
      continue;
    }
    ++rep.evaluated;
    for (std::size_t k = 0; k < cfg.recall_ns.size(); ++k)
      if (r.success_rank && *r.success_rank <= cfg.recall_ns[k].resolve(database.size())) ++hits[k];
  }
  for (std::size_t k = 0; k < cfg.recall_ns.size(); ++k) {
    const double pct = rep.evaluated ? 100.0 * static_cast<double>(hits[k]) / static_cast<double>(rep.evaluated) : 0.0;
    rep.recall.emplace_back(cfg.recall_ns[k].label(), pct);
  }
  return rep;
}

PrCurve pr_curve(const DescriptorSet& queries, const DescriptorSet& database, const EvalConfig& cfg) {
  const auto results = retrieve(queries, database, 1, cfg.revisit_threshold);
  struct Top {
    double distance;
    bool correct;
  };
  std::vector<Top> tops;
  std::size_t with_revisit = 0;
  for (const auto& r : results) {
    with_revisit += r.has_revisit;
    if (!r.ranked.empty()) tops.push_back({r.distances[0], r.success_rank.has_value()});
  }
  std::sort(tops.begin(), tops.end(), [](const Top& a, const Top& b) { return a.distance < b.distance; });
  PrCurve c;
  std::size_t tp = 0, fp = 0;
  for (std::size_t k = 0; k < tops.size(); ++k) {
    (tops[k].correct ? tp : fp) += 1;
    // Emit one point per distinct threshold.
    if (k + 1 < tops.size() && tops[k + 1].distance == tops[k].distance) continue;
    PrPoint p;
    p.threshold = tops[k].distance;
    p.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    p.recall = with_revisit ? static_cast<double>(tp) / static_cast<double>(with_revisit) : 0.0;
    c.points.push_back(p);
  }
  // Step-wise area, starting from recall 0 at the first point's precision.
  double prev_recall = 0.0;
  for (const auto& p : c.points) {
    c.auc += (p.recall - prev_recall) * p.precision;
    prev_recall = p.recall;
  }
  return c;
}

double Histogram::total() const { return std::accumulate(counts.begin(), counts.end(), 0.0); }

namespace {

Histogram make_histogram(const std::vector<double>& values, double lo, double hi, std::size_t bins) {
  Histogram h;
  h.lo = lo;
  h.hi = hi;
  h.counts.assign(bins, 0.0);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (double v : values) {
    std::size_t b = width > 0 ? static_cast<std::size_t>((v - lo) / width) : 0;
    h.counts[std::min(b, bins - 1)] += 1.0;
  }
  return h;
}

}  // namespace

Separability separability_histogram(const std::vector<double>& positive, const std::vector<double>& negative,
                                    std::size_t bins) {
  if (bins == 0) throw ValidationError("histogram needs at least one bin");
  double hi = 0.0;
  for (double v : positive) hi = std::max(hi, v);
  for (double v : negative) hi = std::max(hi, v);
  Separability s;
  s.positive = make_histogram(positive, 0.0, hi, bins);
  s.negative = make_histogram(negative, 0.0, hi, bins);
  const double tp = s.positive.total(), tn = s.negative.total();
  if (tp > 0 && tn > 0)
    for (std::size_t b = 0; b < bins; ++b) s.overlap += std::min(s.positive.counts[b] / tp, s.negative.counts[b] / tn);
  return s;
}

void labelled_pair_distances(const DescriptorSet& set, double t_pos, double t_neg, std::vector<double>& positive,
                             std::vector<double>& negative, std::size_t min_index_gap) {
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (std::size_t j = i + 1 + min_index_gap; j < set.size(); ++j) {
      const double d = pose_distance(set.poses[i], set.poses[j]);
      if (d > t_pos && d < t_neg) continue;
      const double e = (set.descriptors[i] - set.descriptors[j]).norm();
      (d <= t_pos ? positive : negative).push_back(e);
    }
  }
}

PositiveDistanceReport positive_distance_histogram(const std::vector<TrainingTuple>& tuples,
                                                   const std::vector<Pose>& poses, double t_pos, double bin_width) {
  std::vector<double> d;
  for (const auto& t : tuples)
    for (auto p : t.positives) d.push_back(pose_distance(poses.at(t.anchor), poses.at(p)));
  PositiveDistanceReport r;
  r.pairs = d.size();
  if (d.empty()) return r;
  const double hi = std::max(t_pos, *std::max_element(d.begin(), d.end()));
  const auto bins = static_cast<std::size_t>(std::ceil(hi / bin_width)) + 1;
  r.histogram = make_histogram(d, 0.0, bin_width * static_cast<double>(bins), bins);
  r.fraction_beyond = static_cast<double>(std::count_if(d.begin(), d.end(), [&](double v) { return v > t_pos; })) /
                      static_cast<double>(d.size());
  return r;
}

double pseudo_positive_precision(const std::vector<PseudoLabel>& audit, const std::vector<Pose>& poses, double t_pos) {
  std::size_t total = 0, correct = 0;
  for (const auto& l : audit) {
    if (l.decision != Decision::positive) continue;
    ++total;
    correct += pose_distance(poses.at(l.anchor), poses.at(l.candidate)) <= t_pos;
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw ValidationError("scores and labels differ in length");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Average ranks over ties.
  std::vector<double> rank(scores.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
    i = j + 1;
  }
  double pos = 0, neg = 0, sum = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i]) {
      ++pos;
      sum += rank[i];
    } else {
      ++neg;
    }
  }
  if (pos == 0 || neg == 0) throw ValidationError("AUC needs both classes");
  return (sum - pos * (pos + 1) / 2) / (pos * neg);
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << std::setprecision(9);
  return os;
}

}  // namespace

void write_recall_table(const std::filesystem::path& path, const RecallReport& r) {
  auto os = open_out(path);
  os << "metric,value\n";
  for (const auto& [label, v] : r.recall) os << "recall@" << label << ',' << v << '\n';
  os << "evaluated_queries," << r.evaluated << "\nexcluded_queries," << r.excluded << '\n';
}

void write_pr_curve(const std::filesystem::path& path, const PrCurve& c) {
  auto os = open_out(path);
  os << "threshold,precision,recall\n";
  for (const auto& p : c.points) os << p.threshold << ',' << p.precision << ',' << p.recall << '\n';
  os << "# auc " << c.auc << '\n';
}

void write_histogram(const std::filesystem::path& path, const std::string& name, const Histogram& h) {
  auto os = open_out(path);
  const double width = h.counts.empty() ? 0.0 : (h.hi - h.lo) / static_cast<double>(h.counts.size());
  for (std::size_t b = 0; b < h.counts.size(); ++b)
    os << name << ' ' << h.lo + width * static_cast<double>(b) << ' ' << h.lo + width * static_cast<double>(b + 1)
       << ' ' << h.counts[b] << '\n';
}

}  // namespace geoadapt
