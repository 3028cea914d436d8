#include "geoadapt/gcc.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>

#include "geoadapt/error.hpp"
#include "geoadapt/parallel.hpp"
#include "geoadapt/tinynet/losses.hpp"

namespace geoadapt {

void ConsistencyConfig::validate() const {
  if (!(d_thr > 0)) throw ConfigError("d_thr must be positive");
  if (input_length == 0) throw ConfigError("classifier input length must be positive");
  if (max_iterations == 0) throw ConfigError("power iteration needs at least one iteration");
  if (!(tolerance > 0)) throw ConfigError("power iteration tolerance must be positive");
}

Eigen::MatrixXd consistency_matrix(const CorrespondenceSet& corr, const PointCloud& cloud_a,
                                   const PointCloud& cloud_b, const ConsistencyConfig& cfg) {
  const auto n = static_cast<Eigen::Index>(corr.size());
  std::vector<Eigen::Vector3d> pa(corr.size()), pb(corr.size());
  for (std::size_t i = 0; i < corr.size(); ++i) {
    const auto& c = corr.items[i];
    if (c.index_a >= cloud_a.size() || c.index_b >= cloud_b.size())
      throw ValidationError("correspondence index out of range");
    pa[i] = cloud_a.points[c.index_a].cast<double>();
    pb[i] = cloud_b.points[c.index_b].cast<double>();
  }
  const double inv = 1.0 / (cfg.d_thr * cfg.d_thr);
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const auto ui = static_cast<std::size_t>(i), uj = static_cast<std::size_t>(j);
      const double d = (pa[ui] - pa[uj]).norm() - (pb[ui] - pb[uj]).norm();
      const double v = std::max(0.0, 1.0 - d * d * inv);
      m(i, j) = v;
      m(j, i) = v;
    }
  }
  return m;
}

EigenResult leading_eigenvector(const Eigen::MatrixXd& m, const ConsistencyConfig& cfg) {
  if (m.rows() != m.cols() || m.rows() == 0) throw ValidationError("leading eigenvector needs a non-empty square matrix");
  const Eigen::Index n = m.rows();
  EigenResult r;
  Eigen::VectorXd v = Eigen::VectorXd::Constant(n, 1.0 / std::sqrt(static_cast<double>(n)));
  for (std::size_t it = 1; it <= cfg.max_iterations; ++it) {
    Eigen::VectorXd w = m * v;
    const double norm = w.norm();
    if (norm == 0.0) {
      // Zero matrix: every vector is an eigenvector.
      r.iterations = it;
      r.converged = true;
      break;
    }
    w /= norm;
    if (w.sum() < 0) w = -w;
    const double delta = (w - v).norm();
    v = std::move(w);
    r.iterations = it;
    if (delta < cfg.tolerance) {
      r.converged = true;
      break;
    }
  }
  r.vector = std::move(v);
  r.eigenvalue = r.vector.dot(m * r.vector);
  return r;
}

Eigen::VectorXf normalize_confidence(const Eigen::VectorXd& e, const ConsistencyConfig& cfg) {
  if (e.size() == 0) throw ValidationError("cannot normalize an empty confidence vector");
  std::vector<double> v(static_cast<std::size_t>(e.size()));
  for (Eigen::Index i = 0; i < e.size(); ++i) v[static_cast<std::size_t>(i)] = std::abs(e(i));
  if (cfg.sort) std::sort(v.begin(), v.end(), std::greater<>());
  if (cfg.scale) {
    const double top = *std::max_element(v.begin(), v.end());
    if (top > 0)
      for (double& x : v) x /= top;
  }
  Eigen::VectorXf out = Eigen::VectorXf::Zero(static_cast<Eigen::Index>(cfg.input_length));
  const std::size_t keep = std::min(v.size(), cfg.input_length);
  for (std::size_t i = 0; i < keep; ++i) out(static_cast<Eigen::Index>(i)) = static_cast<float>(v[i]);
  return out;
}

tinynet::Mlp make_scorer(std::size_t input_length) {
  return tinynet::Mlp({input_length, 64, 32, 1}, tinynet::Activation::relu, tinynet::Activation::sigmoid);
}

PairEvidence pair_evidence(const Eigen::MatrixXf& local_a, const Eigen::MatrixXf& local_b, const PointCloud& cloud_a,
                           const PointCloud& cloud_b, const ProposalConfig& proposal, const ConsistencyConfig& cfg) {
  CorrespondenceSet corr = propose_correspondences(local_a, local_b, proposal);
  // Entries follow the anchor cloud's point order, so an unsorted confidence
  // vector carries no ranking from the proposal step.
  std::sort(corr.items.begin(), corr.items.end(),
            [](const Correspondence& x, const Correspondence& y) { return x.index_a < y.index_a; });
  PairEvidence ev;
  ev.correspondences = corr.size();
  if (corr.degenerate()) {
    ev.degenerate = true;
    return ev;
  }
  const EigenResult er = leading_eigenvector(consistency_matrix(corr, cloud_a, cloud_b, cfg), cfg);
  ev.converged = er.converged;
  ev.eigenvector = er.vector;
  return ev;
}

PairScore score_pair(const tinynet::Mlp& scorer, const Eigen::VectorXf& confidence) {
  if (static_cast<std::size_t>(confidence.size()) != scorer.input_dim())
    throw ValidationError("confidence length does not match the scorer input");
  const Eigen::MatrixXf out = scorer.forward(confidence);
  return {out(0, 0), false};
}

PairScore score_pair(const tinynet::Mlp& scorer, const PairEvidence& evidence, const ConsistencyConfig& cfg) {
  if (evidence.degenerate) return {0.0f, true};
  return score_pair(scorer, normalize_confidence(evidence.eigenvector, cfg));
}

GccTrainConfig default_gcc_train_config(std::size_t pairs) {
  GccTrainConfig cfg;
  cfg.optim.learning_rate = 0.01f;
  cfg.optim.epochs = 5;
  cfg.optim.kind = tinynet::OptimizerKind::sgd;
  cfg.optim.momentum = 0.9f;
  const std::size_t per_epoch = (pairs + cfg.batch_size - 1) / cfg.batch_size;
  cfg.optim.schedule = tinynet::LrSchedule::cosine(std::max<std::size_t>(1, per_epoch * cfg.optim.epochs - 1));
  return cfg;
}

GccTrainReport train_gcc(tinynet::Mlp& scorer, const std::vector<LabeledEvidence>& pairs, const GccTrainConfig& cfg) {
  if (pairs.empty()) throw ValidationError("no labelled pairs for classifier training");
  const bool has_pos = std::any_of(pairs.begin(), pairs.end(), [](const auto& p) { return p.label == 1; });
  const bool has_neg = std::any_of(pairs.begin(), pairs.end(), [](const auto& p) { return p.label == 0; });
  if (!has_pos || !has_neg) throw ValidationError("classifier training stream holds a single class");
  if (cfg.batch_size == 0) throw ConfigError("batch size must be positive");
  const auto len = static_cast<Eigen::Index>(scorer.input_dim());
  for (const auto& p : pairs)
    if (p.confidence.size() != len) throw ValidationError("confidence length does not match the scorer input");

  tinynet::Optimizer opt(cfg.optim, scorer.parameters());
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(pairs.size());
  GccTrainReport report;
  for (std::size_t epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const auto count = static_cast<Eigen::Index>(end - start);
      Eigen::MatrixXf input(len, count);
      for (Eigen::Index k = 0; k < count; ++k)
        input.col(k) = pairs[order[start + static_cast<std::size_t>(k)]].confidence;
      tinynet::Tape tape;
      const Eigen::MatrixXf beta = scorer.forward(input, &tape);
      Eigen::MatrixXf upstream(1, count);
      for (Eigen::Index k = 0; k < count; ++k) {
        const auto bce = tinynet::bce_loss(beta(0, k), pairs[order[start + static_cast<std::size_t>(k)]].label);
        total += bce.loss;
        upstream(0, k) = bce.grad / static_cast<float>(count);
      }
      scorer.backward(tape, upstream);
      opt.step(report.steps++);
    }
    report.epoch_loss.push_back(total / static_cast<double>(pairs.size()));
  }
  return report;
}

void write_evidence_record(std::ostream& os, const std::string& anchor, const std::string& candidate,
                           const PairEvidence& evidence, const PairScore& score, const ConsistencyConfig& cfg) {
  os << anchor << ' ' << candidate << ' ' << std::setprecision(9) << score.beta << ' ' << (evidence.converged ? 1 : 0)
     << ' ' << (evidence.degenerate ? 1 : 0) << ' ' << evidence.correspondences;
  if (!evidence.degenerate) {
    const Eigen::VectorXf c = normalize_confidence(evidence.eigenvector, cfg);
    for (Eigen::Index i = 0; i < c.size(); ++i) os << ' ' << c(i);
  }
  os << '\n';
}

}  // namespace geoadapt
