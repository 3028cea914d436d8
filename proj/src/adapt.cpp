#include "geoadapt/adapt.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "geoadapt/error.hpp"
#include "geoadapt/parallel.hpp"

namespace geoadapt {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

/// `count` distinct elements of `pool` (all when smaller), in draw order.
std::vector<std::size_t> sample_from(const std::vector<std::size_t>& pool, std::size_t count, std::mt19937_64& rng) {
  std::vector<std::size_t> p = pool;
  const std::size_t m = std::min(count, p.size());
  for (std::size_t i = 0; i < m; ++i) std::swap(p[i], p[i + uniform_index(rng, p.size() - i)]);
  p.resize(m);
  return p;
}

double squared_l2(const Eigen::VectorXf& a, const Eigen::VectorXf& b) { return (a - b).squaredNorm(); }

void check_finite(double loss, const std::string& stage) {
  if (!std::isfinite(loss)) throw NumericError(stage + ": loss became non-finite");
}

/// Forward passes (with traces) for a list of scans, then a backward pass for
/// those with gradients, reduced in list order.
struct BatchPass {
  std::vector<FeatureExtractor::Trace> traces;
  std::vector<Eigen::VectorXf> d_global;
  std::vector<Eigen::MatrixXf> d_local;

  void forward(const FeatureExtractor& fx, const ScanSet& scans, const std::vector<std::size_t>& members,
               bool with_local, const std::vector<Eigen::MatrixXf>* raw_override = nullptr) {
    traces.assign(members.size(), {});
    d_global.assign(members.size(), {});
    d_local.assign(members.size(), {});
    parallel_for(members.size(), [&](std::size_t m) {
      const Eigen::MatrixXf& raw = raw_override ? (*raw_override)[m] : scans.raw[members[m]];
      fx.forward(raw, traces[m], with_local);
      d_global[m] = Eigen::VectorXf::Zero(static_cast<Eigen::Index>(kGlobalDescriptorDim));
      if (with_local) d_local[m] = Eigen::MatrixXf::Zero(traces[m].out.local.rows(), traces[m].out.local.cols());
    });
  }

  ExtractorGradients backward(const FeatureExtractor& fx, bool with_local, float scale) {
    std::vector<ExtractorGradients> grads(traces.size());
    std::vector<char> used(traces.size(), 0);
    parallel_for(traces.size(), [&](std::size_t m) {
      const bool has_global = !d_global[m].isZero(0.0f);
      const bool has_local = with_local && !d_local[m].isZero(0.0f);
      if (!has_global && !has_local) return;
      grads[m] = fx.make_gradients();
      d_global[m] *= scale;
      if (has_local) d_local[m] *= scale;
      fx.backward(traces[m], has_local ? &d_local[m] : nullptr, has_global ? &d_global[m] : nullptr, grads[m]);
      used[m] = 1;
    });
    ExtractorGradients total = fx.make_gradients();
    for (std::size_t m = 0; m < grads.size(); ++m)
      if (used[m]) total += grads[m];
    return total;
  }
};

struct MemberList {
  std::vector<std::size_t> members;
  std::map<std::size_t, std::size_t> slot;
  std::size_t add(std::size_t scan) {
    auto [it, fresh] = slot.try_emplace(scan, members.size());
    if (fresh) members.push_back(scan);
    return it->second;
  }
};

}  // namespace

void LabelingConfig::validate() const {
  if (!(t_pos > 0 && t_pos < t_neg)) throw ConfigError("labelling thresholds need 0 < T_pos < T_neg");
}

const char* to_string(AssociationLabel l) {
  switch (l) {
    case AssociationLabel::positive: return "positive";
    case AssociationLabel::negative: return "negative";
    case AssociationLabel::neither: return "neither";
  }
  return "neither";
}

AssociationLabel source_label(const Pose& a, const Pose& b, const LabelingConfig& cfg) {
  const double d = pose_distance(a, b);
  if (d <= cfg.t_pos) return AssociationLabel::positive;
  if (d >= cfg.t_neg) return AssociationLabel::negative;
  return AssociationLabel::neither;
}

void append_run_log(const std::filesystem::path& path, const StageReport& r) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::app);
  if (!os) throw DataError("cannot append to run log " + path.string());
  os << std::setprecision(9) << "stage=" << r.stage << " epochs=" << r.epochs << " initial_loss=" << r.initial_loss
     << " final_loss=" << r.final_loss << " wall_seconds=" << std::setprecision(4) << r.wall_seconds
     << " checkpoint=" << (r.checkpoint.empty() ? "-" : r.checkpoint) << '\n';
}

ScanSet make_scan_set(std::vector<std::string> ids, std::vector<PointCloud> clouds, float radius) {
  if (ids.size() != clouds.size()) throw ValidationError("scan ids and clouds differ in count");
  ScanSet s;
  s.ids = std::move(ids);
  s.clouds = std::move(clouds);
  s.raw.resize(s.clouds.size());
  parallel_for(s.clouds.size(), [&](std::size_t i) {
    if (s.clouds[i].empty()) throw DataError("scan '" + s.ids[i] + "' is empty");
    s.raw[i] = raw_descriptors(s.clouds[i], radius);
  });
  return s;
}

ScanSet make_scan_set(const UnlabeledManifest& manifest, float radius) {
  std::vector<std::string> ids(manifest.size());
  for (std::size_t i = 0; i < manifest.size(); ++i) ids[i] = manifest.scan_id(i);
  return make_scan_set(std::move(ids), load_clouds(manifest), radius);
}

std::vector<Eigen::VectorXf> global_descriptors(const FeatureExtractor& extractor, const ScanSet& scans) {
  std::vector<Eigen::VectorXf> g(scans.size());
  parallel_for(scans.size(), [&](std::size_t i) { g[i] = extractor.global_from_raw(scans.raw[i]); });
  return g;
}

FeatureBank feature_bank(const FeatureExtractor& extractor, const ScanSet& scans) {
  FeatureBank bank;
  bank.clouds = scans.clouds;
  bank.features.resize(scans.size());
  parallel_for(scans.size(), [&](std::size_t i) { bank.features[i] = extractor.extract_from_raw(scans.raw[i]); });
  return bank;
}

// ---------------------------------------------------------------- stage A

tinynet::OptimConfig pretrain_schedule(std::size_t epochs, std::size_t steps_per_epoch) {
  tinynet::OptimConfig o;
  o.kind = tinynet::OptimizerKind::adam;
  o.learning_rate = 1e-3f;
  o.epochs = epochs;
  // 80 epochs with drops at 30 and 60, rescaled to the run length.
  const auto at = [&](double frac) {
    return static_cast<std::size_t>(std::llround(frac * static_cast<double>(epochs))) * steps_per_epoch;
  };
  o.schedule = tinynet::LrSchedule::step({at(30.0 / 80.0), at(60.0 / 80.0)}, 10.0f);
  return o;
}

StageReport pretrain_source(FeatureExtractor& fx, const ScanSet& source, const std::vector<Pose>& poses,
                            const PretrainConfig& cfg) {
  const auto t0 = Clock::now();
  if (poses.size() != source.size()) throw ValidationError("pre-training needs one pose per source scan");
  cfg.labeling.validate();
  if (cfg.batch_size == 0) throw ConfigError("batch size must be positive");
  const std::size_t n = source.size();

  std::vector<std::vector<std::size_t>> pos(n), neg(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const auto l = source_label(poses[i], poses[j], cfg.labeling);
      if (l == AssociationLabel::positive) pos[i].push_back(j);
      if (l == AssociationLabel::negative) neg[i].push_back(j);
    }
  }
  std::vector<std::size_t> anchors;
  for (std::size_t i = 0; i < n; ++i)
    if (!pos[i].empty() && !neg[i].empty()) anchors.push_back(i);
  if (anchors.empty()) {
    std::ostringstream msg;
    msg << "no valid triplets: no source scan has both a positive within T_pos = " << cfg.labeling.t_pos
        << " m and a negative beyond T_neg = " << cfg.labeling.t_neg << " m";
    throw ConfigError(msg.str());
  }

  std::map<std::pair<std::size_t, std::size_t>, std::vector<tinynet::IndexPair>> corr_cache;
  auto correspondences = [&](std::size_t a, std::size_t b) -> const std::vector<tinynet::IndexPair>& {
    auto it = corr_cache.find({a, b});
    if (it != corr_cache.end()) return it->second;
    const auto set = gt_correspondences(source.clouds[a], source.clouds[b], poses[a], poses[b],
                                        cfg.correspondence_max_dist);
    std::vector<tinynet::IndexPair> v;
    v.reserve(set.size());
    for (const auto& c : set.items) v.push_back({c.index_a, c.index_b});
    return corr_cache.emplace(std::make_pair(a, b), std::move(v)).first->second;
  };

  std::vector<tinynet::ParamTensor*> params;
  for (auto* net : {&fx.encoder, &fx.local_head, &fx.global_head})
    for (auto* p : net->parameters()) params.push_back(p);
  for (auto* p : params) p->zero_grad();
  tinynet::Optimizer opt(cfg.optim, params);
  std::mt19937_64 rng(cfg.seed);
  const bool with_local = cfg.local_weight != 0.0f;

  StageReport report;
  report.stage = "pretrain";
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
    std::shuffle(anchors.begin(), anchors.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < anchors.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(anchors.size(), start + cfg.batch_size);
      struct Item {
        std::size_t anchor, positive;
        std::vector<std::size_t> negatives;
      };
      std::vector<Item> items;
      MemberList ml;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t a = anchors[k];
        Item it{a, pos[a][uniform_index(rng, pos[a].size())], sample_from(neg[a], cfg.negatives_per_anchor, rng)};
        ml.add(it.anchor);
        ml.add(it.positive);
        for (auto j : it.negatives) ml.add(j);
        items.push_back(std::move(it));
      }
      std::vector<Eigen::MatrixXf> jittered;
      if (cfg.augment) {
        jittered.resize(ml.members.size());
        std::vector<std::uint64_t> seeds(ml.members.size());
        for (auto& s : seeds) s = rng();
        parallel_for(ml.members.size(), [&](std::size_t m) {
          std::mt19937_64 local_rng(seeds[m]);
          std::normal_distribution<float> noise(0.0f, cfg.jitter);
          PointCloud c = source.clouds[ml.members[m]];
          for (auto& p : c.points)
            for (int d = 0; d < 3; ++d) p(d) += noise(local_rng);
          jittered[m] = raw_descriptors(c, fx.config().neighborhood_radius);
        });
      }
      BatchPass pass;
      pass.forward(fx, source, ml.members, with_local, cfg.augment ? &jittered : nullptr);

      double batch_loss = 0.0;
      for (const auto& it : items) {
        const std::size_t sa = ml.slot.at(it.anchor), sp = ml.slot.at(it.positive);
        const auto& ga = pass.traces[sa].out.global;
        // Hardest negative among this anchor's samples and every batch member that is a negative for it.
        std::size_t best = SIZE_MAX;
        double best_d = 0.0;
        for (std::size_t m = 0; m < ml.members.size(); ++m) {
          const std::size_t j = ml.members[m];
          if (source_label(poses[it.anchor], poses[j], cfg.labeling) != AssociationLabel::negative) continue;
          const double d = squared_l2(ga, pass.traces[m].out.global);
          if (best == SIZE_MAX || d < best_d) {
            best = m;
            best_d = d;
          }
        }
        const auto tr = tinynet::triplet_loss(ga, pass.traces[sp].out.global, pass.traces[best].out.global, cfg.triplet);
        batch_loss += tr.loss;
        pass.d_global[sa] += tr.grad_anchor;
        pass.d_global[sp] += tr.grad_positive;
        pass.d_global[best] += tr.grad_negative;

        if (!with_local) continue;
        const auto& all_corr = correspondences(it.anchor, it.positive);
        if (all_corr.empty()) continue;
        std::vector<tinynet::IndexPair> corr;
        if (all_corr.size() <= cfg.correspondences_per_pair) {
          corr = all_corr;
        } else {
          for (auto k : tinynet::sample_mining_subset(all_corr.size(), cfg.correspondences_per_pair, rng))
            corr.push_back(all_corr[k]);
        }
        const auto& la = pass.traces[sa].out.local;
        const auto& lp = pass.traces[sp].out.local;
        const auto mine_a = tinynet::sample_mining_subset(static_cast<std::size_t>(la.cols()),
                                                          cfg.contrastive.mining_subset_size, rng);
        const auto mine_p = tinynet::sample_mining_subset(static_cast<std::size_t>(lp.cols()),
                                                          cfg.contrastive.mining_subset_size, rng);
        const auto hc = tinynet::hardest_contrastive_loss(la, lp, corr, mine_a, mine_p, cfg.contrastive);
        batch_loss += cfg.local_weight * hc.loss;
        pass.d_local[sa] += cfg.local_weight * hc.grad_a;
        pass.d_local[sp] += cfg.local_weight * hc.grad_b;
      }
      check_finite(batch_loss, "pretrain");
      epoch_loss += batch_loss;
      const float scale = 1.0f / static_cast<float>(items.size());
      const ExtractorGradients g = pass.backward(fx, with_local, scale);
      fx.encoder.accumulate(g.encoder);
      fx.local_head.accumulate(g.local_head);
      fx.global_head.accumulate(g.global_head);
      opt.step(step++);
    }
    report.epoch_loss.push_back(epoch_loss / static_cast<double>(anchors.size()));
  }
  report.epochs = cfg.optim.epochs;
  if (!report.epoch_loss.empty()) {
    report.initial_loss = report.epoch_loss.front();
    report.final_loss = report.epoch_loss.back();
  }
  report.wall_seconds = seconds_since(t0);
  return report;
}

// ---------------------------------------------------------------- stage B

namespace {

PointCloud subsample(const PointCloud& c, double keep, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PointCloud out;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (u(rng) >= keep) continue;
    out.points.push_back(c.points[i]);
    if (c.has_intensity()) out.intensity.push_back(c.intensity[i]);
  }
  return out;
}

}  // namespace

std::vector<LabeledPair> gather_source_pairs(const FeatureExtractor& extractor, const FeatureBank& bank, const std::vector<Pose>& poses,
                                             const GccStageConfig& cfg) {
  cfg.labeling.validate();
  cfg.consistency.validate();
  if (!(cfg.subsample_min > 0.0 && cfg.subsample_min <= 1.0)) throw ConfigError("gcc.subsample_min must lie in (0, 1]");
  const std::size_t n = bank.size();
  if (poses.size() != n) throw ValidationError("classifier pairs need one pose per source scan");
  std::vector<std::pair<std::size_t, std::size_t>> positives;
  std::vector<std::vector<std::size_t>> negatives(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const auto l = source_label(poses[i], poses[j], cfg.labeling);
      if (l == AssociationLabel::positive && i < j) positives.emplace_back(i, j);
      if (l == AssociationLabel::negative) negatives[i].push_back(j);
    }
  }
  std::vector<std::size_t> with_neg;
  for (std::size_t i = 0; i < n; ++i)
    if (!negatives[i].empty()) with_neg.push_back(i);
  if (positives.empty() || with_neg.empty())
    throw ConfigError("source pairs hold a single class under T_pos/T_neg; classifier training needs both");

  std::mt19937_64 rng(cfg.seed);
  std::vector<LabeledPair> pairs;
  std::vector<std::size_t> order(positives.size());
  std::iota(order.begin(), order.end(), 0);
  for (auto k : sample_from(order, cfg.pairs_per_class, rng))
    pairs.push_back({positives[k].first, positives[k].second, 1, false, {}});

  const auto globals = bank.globals();
  const auto hard = static_cast<std::size_t>(std::llround(cfg.hard_negative_fraction * static_cast<double>(cfg.pairs_per_class)));
  for (std::size_t k = 0; k < cfg.pairs_per_class; ++k) {
    const std::size_t a = with_neg[uniform_index(rng, with_neg.size())];
    std::size_t b;
    if (k < hard) {
      // One of the ten descriptor-nearest negatives, as top-K retrieval would propose.
      std::vector<std::pair<double, std::size_t>> ranked;
      for (auto j : negatives[a]) ranked.emplace_back(squared_l2(globals[a], globals[j]), j);
      const std::size_t keep = std::min<std::size_t>(10, ranked.size());
      std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(keep), ranked.end());
      b = ranked[uniform_index(rng, keep)].second;
    } else {
      b = negatives[a][uniform_index(rng, negatives[a].size())];
    }
    pairs.push_back({a, b, 0, false, {}});
  }
  if (cfg.holdout_every > 0)
    for (std::size_t k = cfg.holdout_every - 1; k < pairs.size(); k += cfg.holdout_every) pairs[k].held_out = true;
  if (cfg.subsample_min >= 1.0) {
    parallel_for(pairs.size(), [&](std::size_t k) {
      auto& p = pairs[k];
      p.evidence = pair_evidence(bank.features[p.a].local, bank.features[p.b].local, bank.clouds[p.a],
                                 bank.clouds[p.b], cfg.proposal, cfg.consistency);
    });
    return pairs;
  }
  std::vector<std::pair<double, double>> keep(pairs.size());
  std::uniform_real_distribution<double> frac(cfg.subsample_min, 1.0);
  for (auto& k : keep) {
    k.first = frac(rng);
    k.second = frac(rng);
  }
  const std::uint64_t base = rng();
  parallel_for(pairs.size(), [&](std::size_t k) {
    auto& p = pairs[k];
    if (p.held_out) {
      p.evidence = pair_evidence(bank.features[p.a].local, bank.features[p.b].local, bank.clouds[p.a],
                                 bank.clouds[p.b], cfg.proposal, cfg.consistency);
      return;
    }
    const PointCloud ca = subsample(bank.clouds[p.a], keep[k].first, base + 2 * k);
    const PointCloud cb = subsample(bank.clouds[p.b], keep[k].second, base + 2 * k + 1);
    p.evidence = pair_evidence(extractor.extract(ca).local, extractor.extract(cb).local, ca, cb, cfg.proposal,
                               cfg.consistency);
  });
  return pairs;
}

StageReport train_gcc_stage(tinynet::Mlp& scorer, const std::vector<LabeledPair>& pairs, const GccStageConfig& cfg) {
  const auto t0 = Clock::now();
  std::vector<LabeledEvidence> data;
  for (const auto& p : pairs)
    if (!p.evidence.degenerate) data.push_back({normalize_confidence(p.evidence.eigenvector, cfg.consistency), p.label});
  GccTrainConfig train = cfg.train;
  const std::size_t per_epoch = (data.size() + train.batch_size - 1) / std::max<std::size_t>(1, train.batch_size);
  train.optim.schedule = tinynet::LrSchedule::cosine(std::max<std::size_t>(1, per_epoch * train.optim.epochs - 1));
  const GccTrainReport r = train_gcc(scorer, data, train);
  StageReport report;
  report.stage = "train_gcc";
  report.epochs = train.optim.epochs;
  report.epoch_loss = r.epoch_loss;
  if (!r.epoch_loss.empty()) {
    report.initial_loss = r.epoch_loss.front();
    report.final_loss = r.epoch_loss.back();
  }
  report.wall_seconds = seconds_since(t0);
  return report;
}

// ---------------------------------------------------------------- stage D

tinynet::OptimConfig retrain_schedule(std::size_t epochs, std::size_t steps_per_epoch) {
  tinynet::OptimConfig o;
  o.kind = tinynet::OptimizerKind::adam;
  o.learning_rate = 1e-4f;
  o.epochs = epochs;
  const auto at = static_cast<std::size_t>(std::llround(25.0 / 40.0 * static_cast<double>(epochs)));
  o.schedule = tinynet::LrSchedule::step({at * steps_per_epoch}, 10.0f);
  return o;
}

StageReport retrain_target(FeatureExtractor& fx, const std::vector<TrainingTuple>& tuples, const ScanSet& target,
                           const RetrainConfig& cfg) {
  const auto t0 = Clock::now();
  if (tuples.empty()) throw StarvationError("pseudo-label starvation: no training tuples for re-training");
  if (cfg.batch_size == 0) throw ConfigError("batch size must be positive");
  for (const auto& t : tuples) {
    if (t.positives.empty() || t.negatives.empty()) throw ValidationError("tuple lacks a positive or a negative");
    auto in_range = [&](std::size_t i) { return i < target.size(); };
    if (!in_range(t.anchor) || !std::all_of(t.positives.begin(), t.positives.end(), in_range) ||
        !std::all_of(t.negatives.begin(), t.negatives.end(), in_range))
      throw ValidationError("tuple index outside the target set");
  }

  std::vector<tinynet::ParamTensor*> params;
  for (auto* net : {&fx.encoder, &fx.global_head})
    for (auto* p : net->parameters()) params.push_back(p);
  for (auto* p : params) p->zero_grad();
  tinynet::Optimizer opt(cfg.optim, params);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(tuples.size());
  std::iota(order.begin(), order.end(), 0);

  StageReport report;
  report.stage = "retrain";
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
    const auto cache = global_descriptors(fx, target);
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      struct Item {
        std::size_t a, p, n;
      };
      std::vector<Item> items;
      MemberList ml;
      for (std::size_t k = start; k < end; ++k) {
        const auto& t = tuples[order[k]];
        const std::size_t p = t.positives[uniform_index(rng, t.positives.size())];
        std::size_t hardest = t.negatives.front();
        double best = squared_l2(cache[t.anchor], cache[hardest]);
        for (auto j : t.negatives) {
          const double d = squared_l2(cache[t.anchor], cache[j]);
          if (d < best || (d == best && j < hardest)) {
            best = d;
            hardest = j;
          }
        }
        items.push_back({t.anchor, p, hardest});
        ml.add(t.anchor);
        ml.add(p);
        ml.add(hardest);
      }
      BatchPass pass;
      pass.forward(fx, target, ml.members, false);
      double batch_loss = 0.0;
      for (const auto& it : items) {
        const std::size_t sa = ml.slot.at(it.a), sp = ml.slot.at(it.p), sn = ml.slot.at(it.n);
        const auto tr = tinynet::triplet_loss(pass.traces[sa].out.global, pass.traces[sp].out.global,
                                              pass.traces[sn].out.global, cfg.triplet);
        batch_loss += tr.loss;
        pass.d_global[sa] += tr.grad_anchor;
        pass.d_global[sp] += tr.grad_positive;
        pass.d_global[sn] += tr.grad_negative;
      }
      check_finite(batch_loss, "retrain");
      epoch_loss += batch_loss;
      const ExtractorGradients g = pass.backward(fx, false, 1.0f / static_cast<float>(items.size()));
      fx.encoder.accumulate(g.encoder);
      fx.global_head.accumulate(g.global_head);
      opt.step(step++);
    }
    report.epoch_loss.push_back(epoch_loss / static_cast<double>(tuples.size()));
  }
  report.epochs = cfg.optim.epochs;
  if (!report.epoch_loss.empty()) {
    report.initial_loss = report.epoch_loss.front();
    report.final_loss = report.epoch_loss.back();
  }
  report.wall_seconds = seconds_since(t0);
  return report;
}

}  // namespace geoadapt
