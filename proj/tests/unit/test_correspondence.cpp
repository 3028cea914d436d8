#include <doctest.h>

#include <numeric>
#include <random>
#include <set>

#include "geoadapt/correspondence.hpp"
#include "../oracles.hpp"

using namespace geoadapt;

namespace {

Eigen::MatrixXf random_features(Eigen::Index d, Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<float> g(0.0f, 1.0f);
  Eigen::MatrixXf m(d, n);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = g(rng);
  return m;
}

}  // namespace

TEST_SUITE("correspondence") {
  TEST_CASE("a shifted copy with a compensating pose matches point for point") {
    std::mt19937_64 rng(1);
    const auto a = oracle::random_cloud(200, rng);
    PointCloud b = a;
    for (auto& p : b.points) p.x() -= 0.05f;
    const Pose pb = Pose::from_yaw(0.0, {0.05, 0, 0});
    const auto c = gt_correspondences(a, b, Pose::identity(), pb, 0.01);
    REQUIRE(c.size() == 200);
    for (std::size_t i = 0; i < c.size(); ++i) {
      CHECK(c.items[i].index_a == i);
      CHECK(c.items[i].index_b == i);
    }
    CHECK(c.source == CorrespondenceSource::ground_truth);
  }

  TEST_CASE("distance gate: zero keeps only coincidences, infinity keeps all mutual pairs") {
    std::mt19937_64 rng(2);
    const auto a = oracle::random_cloud(60, rng);
    auto b = oracle::random_cloud(60, rng);
    b.points[5] = a.points[7];
    const auto none = gt_correspondences(a, b, Pose::identity(), Pose::identity(), 0.0);
    REQUIRE(none.size() == 1);
    CHECK(none.items[0].index_a == 7);
    CHECK(none.items[0].index_b == 5);
    const auto all = gt_correspondences(a, b, Pose::identity(), Pose::identity(), 1e9);
    std::vector<std::vector<float>> pb;
    for (const auto& p : b.points) pb.push_back({p.x(), p.y(), p.z()});
    std::vector<std::vector<float>> pa;
    for (const auto& p : a.points) pa.push_back({p.x(), p.y(), p.z()});
    std::size_t mutual = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const auto j = oracle::scan(pb, pa[i])[0].second;
      mutual += oracle::scan(pa, pb[j])[0].second == i;
    }
    CHECK(all.size() == mutual);
  }

  TEST_CASE("a permutation of distinct features is recovered exactly") {
    std::mt19937_64 rng(3);
    const auto fa = random_features(16, 40, rng);
    std::vector<int> perm(40);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::MatrixXf fb(16, 40);
    for (int i = 0; i < 40; ++i) fb.col(perm[i]) = fa.col(i);
    const auto c = propose_correspondences(fa, fb, ProposalConfig{});
    REQUIRE(c.size() == 40);
    for (const auto& m : c.items) CHECK(perm[m.index_a] == int(m.index_b));
  }

  TEST_CASE("proposals equal the brute-force mutual nearest neighbours") {
    std::mt19937_64 rng(4);
    for (int t = 0; t < 20; ++t) {
      const auto fa = random_features(16, 150, rng), fb = random_features(16, 170, rng);
      for (bool mutual : {true, false}) {
        ProposalConfig cfg;
        cfg.cap = 64;
        cfg.mutual = mutual;
        const auto got = propose_correspondences(fa, fb, cfg);
        const auto want = oracle::mutual_nn(fa, fb, 64, mutual);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < want.size(); ++i) {
          CHECK(int(got.items[i].index_a) == want[i].a);
          CHECK(int(got.items[i].index_b) == want[i].b);
        }
      }
    }
  }

  TEST_CASE("swapping the clouds swaps the pairs") {
    std::mt19937_64 rng(5);
    const auto fa = random_features(16, 90, rng), fb = random_features(16, 80, rng);
    ProposalConfig cfg;
    cfg.cap = 1000;
    const auto ab = propose_correspondences(fa, fb, cfg), ba = propose_correspondences(fb, fa, cfg);
    std::set<std::pair<int, int>> x, y;
    for (const auto& m : ab.items) x.insert({int(m.index_a), int(m.index_b)});
    for (const auto& m : ba.items) y.insert({int(m.index_b), int(m.index_a)});
    CHECK(x == y);
  }

  TEST_CASE("fewer than three pairs is degenerate") {
    CorrespondenceSet s;
    s.items.resize(2);
    CHECK(s.degenerate());
    s.items.resize(3);
    CHECK_FALSE(s.degenerate());
  }
}
