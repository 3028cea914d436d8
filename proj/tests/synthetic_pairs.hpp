#pragma once
// Synthetic pair evidence without a trained extractor: positives are a cloud
// and a noisy rigid copy carrying noisy copies of the same features;
// negatives are unrelated clouds with unrelated features.

#include <random>

#include "geoadapt/gcc.hpp"
#include "oracles.hpp"

namespace synth {

struct Pair {
  geoadapt::PointCloud a, b;
  Eigen::MatrixXf fa, fb;
  int label = 0;
};

inline Eigen::MatrixXf features(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<float> g(0.0f, 1.0f);
  Eigen::MatrixXf f(16, static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < f.size(); ++i) f(i) = g(rng);
  return f;
}

inline Pair make_pair(int label, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<float> jitter(0.0f, 0.02f), fnoise(0.0f, 0.35f);
  Pair p;
  p.label = label;
  p.a = oracle::random_cloud(300, rng, 15.0);
  p.fa = features(300, rng);
  if (label) {
    const auto pose = geoadapt::Pose::from_yaw(u(rng) * 6.28, {u(rng) * 4 - 2, u(rng) * 4 - 2, 0});
    const auto moved = geoadapt::apply_pose(pose, p.a);
    std::vector<int> keep;
    const double frac = 0.4 + 0.6 * u(rng);
    for (int i = 0; i < 300; ++i)
      if (u(rng) < frac) keep.push_back(i);
    p.fb.resize(16, static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) {
      p.b.points.push_back(moved.points[keep[k]] + geoadapt::Point3(jitter(rng), jitter(rng), jitter(rng)));
      for (int d = 0; d < 16; ++d) p.fb(d, static_cast<Eigen::Index>(k)) = p.fa(d, keep[k]) + fnoise(rng);
    }
  } else {
    p.b = oracle::random_cloud(300, rng, 15.0);
    p.fb = features(300, rng);
  }
  return p;
}

inline geoadapt::PairEvidence evidence(const Pair& p, const geoadapt::ConsistencyConfig& cfg = {}) {
  return geoadapt::pair_evidence(p.fa, p.fb, p.a, p.b, geoadapt::ProposalConfig{}, cfg);
}

}  // namespace synth
