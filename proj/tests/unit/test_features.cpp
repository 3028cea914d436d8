#include <doctest.h>

#include <numbers>
#include <random>

#include "geoadapt/error.hpp"
#include "geoadapt/features.hpp"
#include "geoadapt/tinynet/checkpoint.hpp"
#include "../oracles.hpp"

using namespace geoadapt;

namespace {

float physical(const Eigen::MatrixXf& raw, RawDescriptorRow row, Eigen::Index col) {
  return descriptor_physical_value(row, raw(row, col));
}

Eigen::MatrixXd take(const Eigen::MatrixXf& m) { return m.cast<double>(); }

}  // namespace

TEST_SUITE("features") {
  TEST_CASE("collinear points are linear, not planar") {
    PointCloud c;
    for (int i = 0; i < 3; ++i) c.points.emplace_back(0.2f * i, 0.0f, 0.0f);
    const auto raw = raw_descriptors(c, 1.0f);
    CHECK(physical(raw, kLinearity, 1) == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(physical(raw, kPlanarity, 1) == doctest::Approx(0.0).scale(1.0).epsilon(1e-4));
  }

  TEST_CASE("a uniform ball sample is mostly spherical") {
    std::mt19937_64 rng(2);
    std::normal_distribution<float> n(0.0f, 1.0f);
    PointCloud c;
    while (c.size() < 400) {
      Point3 p(n(rng), n(rng), n(rng));
      c.points.push_back(p.normalized() * 0.5f * std::cbrt(std::uniform_real_distribution<float>(0, 1)(rng)));
    }
    const auto raw = raw_descriptors(c, 1.0f);
    const float s = physical(raw, kSphericity, 0);
    CHECK(s > physical(raw, kLinearity, 0));
    CHECK(s > physical(raw, kPlanarity, 0));
  }

  TEST_CASE("isolated points fall back to zeros except density") {
    PointCloud c;
    c.points.emplace_back(0, 0, 0);
    c.points.emplace_back(50, 0, 0);
    const auto raw = raw_descriptors(c, 1.0f);
    for (int r = 0; r < int(kRawDescriptorDim); ++r)
      if (r != kDensity) CHECK(raw(r, 0) == 0.0f);
  }

  TEST_CASE("descriptors are invariant to yaw about the sensor") {
    std::mt19937_64 rng(4);
    const auto c = oracle::random_cloud(300, rng, 3.0);
    const auto rotated = apply_pose(Pose::from_yaw(0.9, Eigen::Vector3d::Zero()), c);
    const auto a = raw_descriptors(c, 1.0f), b = raw_descriptors(rotated, 1.0f);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-4f);
  }

  TEST_CASE("descriptor columns depend only on the neighbourhood") {
    std::mt19937_64 rng(5);
    auto c = oracle::random_cloud(200, rng, 3.0);
    const auto before = raw_descriptors(c, 1.0f);
    c.points.emplace_back(100.0f, 100.0f, 0.0f);
    const auto after = raw_descriptors(c, 1.0f);
    CHECK(before.isApprox(after.leftCols(200)));
  }

  TEST_CASE("extraction is deterministic and pooling ignores point order") {
    std::mt19937_64 rng(6);
    const auto c = oracle::random_cloud(150, rng, 4.0);
    const FeatureExtractor fx(ExtractorConfig{}, 3);
    const auto a = fx.extract(c), b = fx.extract(c);
    CHECK(a.global == b.global);
    CHECK(a.local == b.local);
    CHECK(a.local.rows() == kLocalFeatureDim);
    CHECK(a.global.size() == kGlobalDescriptorDim);
    CHECK(a.global.norm() == doctest::Approx(1.0));

    PointCloud rev;
    rev.points.assign(c.points.rbegin(), c.points.rend());
    const auto r = fx.extract(rev);
    CHECK((r.global - a.global).cwiseAbs().maxCoeff() < 1e-5f);
    CHECK(r.local.col(0).isApprox(a.local.col(149)));
  }

  TEST_CASE("local features respect the norm cap") {
    ExtractorConfig cfg;
    cfg.local_norm_cap = 0.5f;
    std::mt19937_64 rng(7);
    const FeatureExtractor fx(cfg, 9);
    const auto e = fx.extract(oracle::random_cloud(100, rng, 3.0));
    CHECK(e.local.colwise().norm().maxCoeff() <= 0.5f + 1e-5f);
  }

  TEST_CASE("extractor gradients match central differences through both heads") {
    std::mt19937_64 rng(13);
    ExtractorConfig cfg;
    cfg.encoder_hidden = 10;
    cfg.encoder_out = 6;
    cfg.local_hidden = 7;
    cfg.local_norm_cap = 1.0f;  // some columns capped, some not
    int checked = 0;
    while (checked < 5) {
      const FeatureExtractor fx(cfg, rng());
      std::uniform_real_distribution<float> u(-1.0f, 1.0f);
      Eigen::MatrixXf raw(kRawDescriptorDim, 9);
      for (Eigen::Index i = 0; i < raw.size(); ++i) raw(i) = u(rng);
      Eigen::VectorXf ug(kGlobalDescriptorDim);
      for (auto& x : ug) x = u(rng);
      Eigen::MatrixXf ul(kLocalFeatureDim, 9);
      for (Eigen::Index i = 0; i < ul.size(); ++i) ul(i) = u(rng);

      oracle::ExtractorParams p{oracle::layers_of(fx.encoder), oracle::layers_of(fx.local_head),
                                oracle::layers_of(fx.global_head), cfg.gem_p, cfg.local_norm_cap};
      double kink = 1e9;
      oracle::extractor_objective(p, take(raw), ug.cast<double>(), take(ul), &kink);
      if (kink < 1e-3) continue;

      FeatureExtractor::Trace t;
      fx.forward(raw, t);
      auto g = fx.make_gradients();
      fx.backward(t, &ul, &ug, g);

      auto check_net = [&](std::vector<oracle::DoubleLayer> oracle::ExtractorParams::*net, const tinynet::Gradients& got) {
        for (std::size_t l = 0; l < (p.*net).size(); ++l) {
          auto f = [&](const Eigen::MatrixXd& w) {
            auto q = p;
            (q.*net)[l].w = w;
            return oracle::extractor_objective(q, take(raw), ug.cast<double>(), take(ul));
          };
          const auto num = oracle::central_difference(f, (p.*net)[l].w, 1e-5);
          CHECK(oracle::max_relative_error(take(got.tensors[2 * l]), num) < 1e-3);
          auto fb = [&](const Eigen::MatrixXd& b) {
            auto q = p;
            (q.*net)[l].b = b;
            return oracle::extractor_objective(q, take(raw), ug.cast<double>(), take(ul));
          };
          const auto numb = oracle::central_difference(fb, (p.*net)[l].b, 1e-5);
          CHECK(oracle::max_relative_error(take(got.tensors[2 * l + 1]), numb) < 1e-3);
        }
      };
      check_net(&oracle::ExtractorParams::encoder, g.encoder);
      check_net(&oracle::ExtractorParams::local_head, g.local_head);
      check_net(&oracle::ExtractorParams::global_head, g.global_head);
      ++checked;
    }
  }

  TEST_CASE("backward needs a forward pass with the local head") {
    const FeatureExtractor fx(ExtractorConfig{}, 1);
    FeatureExtractor::Trace t;
    auto g = fx.make_gradients();
    Eigen::VectorXf ug = Eigen::VectorXf::Ones(kGlobalDescriptorDim);
    CHECK_THROWS_AS(fx.backward(t, nullptr, &ug, g), StateError);
    const Eigen::MatrixXf raw = Eigen::MatrixXf::Ones(kRawDescriptorDim, 4);
    fx.forward(raw, t, false);
    Eigen::MatrixXf ul = Eigen::MatrixXf::Ones(kLocalFeatureDim, 4);
    CHECK_THROWS_AS(fx.backward(t, &ul, &ug, g), StateError);
  }

  TEST_CASE("checkpoint round trip keeps outputs and rejects wrong shapes") {
    std::mt19937_64 rng(8);
    const auto c = oracle::random_cloud(80, rng, 3.0);
    const FeatureExtractor fx(ExtractorConfig{}, 4);
    const auto ckpt = fx.to_checkpoint("note");
    const auto back = FeatureExtractor::from_checkpoint(tinynet::deserialize(tinynet::serialize(ckpt)), ExtractorConfig{});
    CHECK(back.extract(c).global == fx.extract(c).global);
    ExtractorConfig other;
    other.encoder_out = 16;
    CHECK_THROWS(FeatureExtractor::from_checkpoint(ckpt, other));
  }
}
