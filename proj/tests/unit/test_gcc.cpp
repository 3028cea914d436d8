#include <doctest.h>

#include <random>
#include <sstream>

#include "geoadapt/error.hpp"
#include "geoadapt/gcc.hpp"
#include "geoadapt/tinynet/optim.hpp"
#include "../synthetic_pairs.hpp"

using namespace geoadapt;

namespace {

CorrespondenceSet identity_pairs(std::size_t n) {
  CorrespondenceSet c;
  for (std::uint32_t i = 0; i < n; ++i) c.items.push_back({i, i, 0.0f});
  return c;
}

std::vector<LabeledEvidence> stream(std::size_t n, std::uint64_t seed, const ConsistencyConfig& cfg = {}) {
  std::mt19937_64 rng(seed);
  std::vector<LabeledEvidence> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = synth::make_pair(static_cast<int>(i % 2), rng);
    out.push_back({normalize_confidence(synth::evidence(p, cfg).eigenvector, cfg), p.label});
  }
  return out;
}

double accuracy(const tinynet::Mlp& scorer, const std::vector<LabeledEvidence>& data) {
  std::size_t ok = 0;
  for (const auto& d : data) ok += (score_pair(scorer, d.confidence).beta >= 0.5f) == (d.label == 1);
  return double(ok) / double(data.size());
}

}  // namespace

TEST_SUITE("gcc") {
  TEST_CASE("length consistency by hand") {
    PointCloud a, b;
    a.points = {{0, 0, 0}, {1, 0, 0}};
    b.points = {{0, 0, 0}, {1.3f, 0, 0}};
    ConsistencyConfig cfg;
    cfg.d_thr = 0.6;
    const auto m = consistency_matrix(identity_pairs(2), a, b, cfg);
    CHECK(m(0, 1) == doctest::Approx(0.75).epsilon(1e-6));
    CHECK(m(0, 0) == 1.0);
    b.points[1].x() = 1.6f;
    CHECK(consistency_matrix(identity_pairs(2), a, b, cfg)(0, 1) == 0.0);
  }

  TEST_CASE("rigid motion gives an all-ones matrix and invariance holds") {
    std::mt19937_64 rng(1);
    const auto a = oracle::random_cloud(40, rng);
    const auto b = apply_pose(Pose::from_yaw(1.1, {3, -2, 0.5}), a);
    const auto m = consistency_matrix(identity_pairs(40), a, b, ConsistencyConfig{});
    CHECK((m.array() - 1.0).abs().maxCoeff() < 1e-5);

    const auto c = oracle::random_cloud(40, rng);
    const auto m1 = consistency_matrix(identity_pairs(40), a, c, ConsistencyConfig{});
    const auto m2 = consistency_matrix(identity_pairs(40), apply_pose(Pose::from_yaw(0.4, {1, 1, 1}), a), c, ConsistencyConfig{});
    CHECK((m1 - m2).cwiseAbs().maxCoeff() < 1e-5);
    CHECK((m1 - m1.transpose()).cwiseAbs().maxCoeff() == 0.0);
    std::vector<std::pair<int, int>> id;
    for (int i = 0; i < 40; ++i) id.emplace_back(i, i);
    CHECK((m1 - oracle::consistency(id, a, c, 0.5)).cwiseAbs().maxCoeff() < 1e-5);
  }

  TEST_CASE("power iteration on small closed forms") {
    Eigen::MatrixXd m(2, 2);
    m << 1, 1, 1, 1;
    const auto r = leading_eigenvector(m, ConsistencyConfig{});
    CHECK(r.vector(0) == doctest::Approx(1 / std::sqrt(2.0)));
    CHECK(r.vector(1) == doctest::Approx(1 / std::sqrt(2.0)));
    CHECK(r.eigenvalue == doctest::Approx(2.0));
    const auto id = leading_eigenvector(Eigen::MatrixXd::Identity(5, 5), ConsistencyConfig{});
    CHECK(id.converged);
    CHECK((id.vector.array() - 1 / std::sqrt(5.0)).abs().maxCoeff() < 1e-12);
  }

  TEST_CASE("power iteration matches the dense eigensolver") {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 20; ++t) {
      const auto m = oracle::random_symmetric_nonnegative(50, rng);
      const auto r = leading_eigenvector(m, ConsistencyConfig{});
      const auto [v, lambda] = oracle::dense_leading_eigenvector(m);
      CHECK(std::abs(r.vector.dot(v)) >= 0.9999);
      CHECK(r.eigenvalue == doctest::Approx(lambda).epsilon(1e-6));
      CHECK(r.vector.sum() >= 0.0);
    }
  }

  TEST_CASE("confidence normalization") {
    Eigen::VectorXd e(3);
    e << 0.3, 0.6, 0.15;
    ConsistencyConfig cfg;
    cfg.input_length = 4;
    const Eigen::VectorXf got = normalize_confidence(e, cfg);
    CHECK(got(0) == doctest::Approx(1.0));
    CHECK(got(1) == doctest::Approx(0.5));
    CHECK(got(2) == doctest::Approx(0.25));
    CHECK(got(3) == 0.0f);
    CHECK(normalize_confidence(e * 7.5, cfg).isApprox(got));
    CHECK(normalize_confidence(-e, cfg).isApprox(got));
    CHECK(normalize_confidence(got.head(3).cast<double>(), cfg).isApprox(got));
    CHECK(normalize_confidence(Eigen::VectorXd::Constant(2, 0.3), cfg) == Eigen::Vector4f(1, 1, 0, 0));
    CHECK(normalize_confidence(Eigen::VectorXd::Zero(3), cfg).isZero());
    cfg.input_length = 2;
    CHECK(normalize_confidence(e, cfg) == Eigen::Vector2f(1.0f, 0.5f));

    cfg.input_length = 4;
    cfg.sort = false;
    CHECK(normalize_confidence(e, cfg).isApprox(Eigen::Vector4f(0.5f, 1.0f, 0.25f, 0.0f)));
    cfg.sort = true;
    cfg.scale = false;
    CHECK(normalize_confidence(e, cfg).isApprox(Eigen::Vector4f(0.6f, 0.3f, 0.15f, 0.0f)));
  }

  TEST_CASE("untrained scorer says one half; degenerate pairs say zero") {
    const auto s = make_scorer(256);
    CHECK(score_pair(s, Eigen::VectorXf::Random(256)).beta == doctest::Approx(0.5));
    PairEvidence ev;
    ev.degenerate = true;
    const auto r = score_pair(s, ev, ConsistencyConfig{});
    CHECK(r.beta == 0.0f);
    CHECK(r.degenerate);
  }

  TEST_CASE("scorer learns the synthetic stream and fails symmetrically on flipped labels") {
    const auto train = stream(300, 10), held = stream(100, 11);
    const auto cfg = default_gcc_train_config(train.size());

    tinynet::Mlp s = make_scorer(256);
    s.init_glorot(3);
    const auto before = s;
    const auto report = train_gcc(s, train, cfg);
    CHECK(report.epoch_loss.size() == 5);
    CHECK(report.epoch_loss.back() < report.epoch_loss.front());
    CHECK(accuracy(s, held) >= 0.95);

    auto flipped = train;
    for (auto& d : flipped) d.label = 1 - d.label;
    tinynet::Mlp f = before;
    train_gcc(f, flipped, cfg);
    CHECK(accuracy(f, held) <= 0.05);

    std::mt19937_64 rng(12);
    std::size_t pos_ok = 0, neg_ok = 0;
    for (int i = 0; i < 20; ++i) {
      pos_ok += score_pair(s, synth::evidence(synth::make_pair(1, rng)), ConsistencyConfig{}).beta >= 0.95f;
      neg_ok += score_pair(s, synth::evidence(synth::make_pair(0, rng)), ConsistencyConfig{}).beta <= 0.2f;
    }
    CHECK(pos_ok >= 18);
    CHECK(neg_ok >= 18);
  }

  TEST_CASE("single-class training data is rejected") {
    auto data = stream(10, 4);
    for (auto& d : data) d.label = 1;
    tinynet::Mlp s = make_scorer(256);
    CHECK_THROWS_AS(train_gcc(s, data, default_gcc_train_config(10)), ValidationError);
  }

  TEST_CASE("default schedule is cosine at 0.01 ending near zero") {
    const auto cfg = default_gcc_train_config(160);
    CHECK(cfg.optim.learning_rate == doctest::Approx(0.01));
    CHECK(cfg.optim.epochs == 5);
    const std::size_t steps = (160 + cfg.batch_size - 1) / cfg.batch_size * cfg.optim.epochs;
    CHECK(tinynet::learning_rate_at(cfg.optim, steps - 1) < 1e-4);
  }

  TEST_CASE("evidence record line") {
    std::mt19937_64 rng(5);
    const auto p = synth::make_pair(1, rng);
    const auto ev = synth::evidence(p);
    std::ostringstream os;
    write_evidence_record(os, "a", "b", ev, {0.7f, false}, ConsistencyConfig{});
    std::istringstream is(os.str());
    std::string a, b;
    double beta;
    is >> a >> b >> beta;
    CHECK(a == "a");
    CHECK(beta == doctest::Approx(0.7));
  }
}
