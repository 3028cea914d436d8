#include "geoadapt/features.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>

#include "geoadapt/error.hpp"
#include "geoadapt/spatial_index.hpp"
#include "geoadapt/tinynet/losses.hpp"

namespace geoadapt {

namespace {

// Fixed normalization: value -> (value - offset) * scale.
struct Affine {
  float offset, scale;
  float operator()(float v) const { return (v - offset) * scale; }
};

constexpr Affine kNorm[kRawDescriptorDim] = {
    {0.6f, 3.0f},    // eigen ratio 1 in [1/3, 1]
    {0.2f, 4.0f},    // eigen ratio 2 in [0, 1/2]
    {0.1f, 6.0f},    // eigen ratio 3 in [0, 1/3]
    {0.5f, 2.0f},    // linearity
    {0.5f, 2.0f},    // planarity
    {0.3f, 2.5f},    // sphericity
    {0.0f, 0.4f},    // height, m
    {0.5f, 2.0f},    // vertical extent / (2 r)
    {0.6f, 2.0f},    // log(1 + n) / log(65)
    {20.0f, 0.06f},  // range, m
    {0.5f, 2.0f},    // verticality
    {0.4f, 3.0f},    // mean intensity
};

constexpr float kGemClamp = 1e-6f;

}  // namespace

float descriptor_physical_value(RawDescriptorRow row, float normalized) {
  const Affine& a = kNorm[row];
  return normalized / a.scale + a.offset;
}

Eigen::MatrixXf raw_descriptors(const PointCloud& cloud, float radius) {
  if (cloud.empty()) throw ValidationError("raw descriptors of an empty cloud");
  if (!(radius > 0.0f)) throw ValidationError("neighbourhood radius must be positive");
  const SpatialIndex index = SpatialIndex::from_points(cloud.points);
  const std::size_t n = cloud.size();
  Eigen::MatrixXf out = Eigen::MatrixXf::Zero(kRawDescriptorDim, static_cast<Eigen::Index>(n));
  std::vector<std::uint32_t> nb;
  const float log_density_norm = std::log(65.0f);

  for (std::size_t i = 0; i < n; ++i) {
    const Point3& p = cloud.points[i];
    index.radius_indices(as_span(p), radius, nb);
    const auto col = static_cast<Eigen::Index>(i);
    const float density = std::log1p(static_cast<float>(nb.size())) / log_density_norm;
    if (nb.size() < 3) {
      out(kDensity, col) = kNorm[kDensity](density);
      continue;
    }
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    double zmin = p.z(), zmax = p.z(), intensity = 0.0;
    for (auto j : nb) {
      const Point3& q = cloud.points[j];
      mean += q.cast<double>();
      zmin = std::min<double>(zmin, q.z());
      zmax = std::max<double>(zmax, q.z());
      intensity += cloud.intensity_at(j);
    }
    const double count = static_cast<double>(nb.size());
    mean /= count;
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (auto j : nb) {
      const Eigen::Vector3d d = cloud.points[j].cast<double>() - mean;
      cov += d * d.transpose();
    }
    cov /= count;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es;
    es.computeDirect(cov);
    // Eigen returns ascending eigenvalues.
    const double l1 = std::max(es.eigenvalues()(2), 0.0);
    const double l2 = std::max(es.eigenvalues()(1), 0.0);
    const double l3 = std::max(es.eigenvalues()(0), 0.0);
    const double sum = l1 + l2 + l3;
    float v[kRawDescriptorDim] = {};
    if (sum > 1e-12 && l1 > 1e-12) {
      v[kEigenRatio1] = static_cast<float>(l1 / sum);
      v[kEigenRatio2] = static_cast<float>(l2 / sum);
      v[kEigenRatio3] = static_cast<float>(l3 / sum);
      v[kLinearity] = static_cast<float>((l1 - l2) / l1);
      v[kPlanarity] = static_cast<float>((l2 - l3) / l1);
      v[kSphericity] = static_cast<float>(l3 / l1);
      v[kVerticality] = static_cast<float>(1.0 - std::abs(es.eigenvectors()(2, 0)));
    } else {
      // Coincident points: treat as an isotropic blob.
      v[kEigenRatio1] = v[kEigenRatio2] = v[kEigenRatio3] = 1.0f / 3.0f;
      v[kSphericity] = 1.0f;
    }
    v[kHeight] = p.z();
    v[kVerticalExtent] = static_cast<float>((zmax - zmin) / (2.0 * radius));
    v[kDensity] = density;
    v[kRange] = p.norm();
    v[kIntensityMean] = static_cast<float>(intensity / count);
    for (std::size_t k = 0; k < kRawDescriptorDim; ++k) out(static_cast<Eigen::Index>(k), col) = kNorm[k](v[k]);
  }
  return out;
}

ExtractorGradients& ExtractorGradients::operator+=(const ExtractorGradients& o) {
  encoder += o.encoder;
  local_head += o.local_head;
  global_head += o.global_head;
  return *this;
}

FeatureExtractor::FeatureExtractor(const ExtractorConfig& cfg, std::uint64_t seed)
    : encoder({kRawDescriptorDim, cfg.encoder_hidden, cfg.encoder_out}, tinynet::Activation::relu, tinynet::Activation::relu),
      local_head({cfg.encoder_out, cfg.local_hidden, kLocalFeatureDim}, tinynet::Activation::relu, tinynet::Activation::identity),
      global_head({cfg.encoder_out, kGlobalDescriptorDim}, tinynet::Activation::identity, tinynet::Activation::identity),
      cfg_(cfg) {
  encoder.init_glorot(seed);
  local_head.init_glorot(seed + 1);
  global_head.init_glorot(seed + 2);
}

FeatureExtractor FeatureExtractor::from_checkpoint(const tinynet::Checkpoint& ckpt, const ExtractorConfig& cfg) {
  FeatureExtractor fx;
  fx.cfg_ = cfg;
  fx.encoder = ckpt.section("encoder");
  fx.local_head = ckpt.section("local_head");
  fx.global_head = ckpt.section("global_head");
  if (fx.encoder.input_dim() != kRawDescriptorDim || fx.local_head.input_dim() != fx.encoder.output_dim() ||
      fx.local_head.output_dim() != kLocalFeatureDim || fx.global_head.input_dim() != fx.encoder.output_dim() ||
      fx.global_head.output_dim() != kGlobalDescriptorDim || fx.encoder.output_dim() != cfg.encoder_out ||
      fx.encoder.layers().front().weight.value.rows() != static_cast<Eigen::Index>(cfg.encoder_hidden) ||
      fx.local_head.layers().front().weight.value.rows() != static_cast<Eigen::Index>(cfg.local_hidden)) {
    throw DataError("checkpoint extractor sections have incompatible shapes");
  }
  return fx;
}

tinynet::Checkpoint FeatureExtractor::to_checkpoint(const std::string& metadata) const {
  tinynet::Checkpoint c;
  c.metadata = metadata;
  c.set("encoder", encoder);
  c.set("local_head", local_head);
  c.set("global_head", global_head);
  return c;
}

Extraction FeatureExtractor::extract(const PointCloud& cloud) const {
  if (cloud.empty()) throw ValidationError("cannot extract features from an empty cloud");
  return extract_from_raw(raw_descriptors(cloud, cfg_.neighborhood_radius));
}

Extraction FeatureExtractor::extract_from_raw(const Eigen::MatrixXf& raw) const {
  Trace t;
  return forward(raw, t);
}

GlobalDescriptor FeatureExtractor::global_from_raw(const Eigen::MatrixXf& raw) const {
  Trace t;
  return forward(raw, t, false).global;
}

Extraction FeatureExtractor::forward(const Eigen::MatrixXf& raw, Trace& t, bool with_local) const {
  if (raw.cols() == 0) throw ValidationError("cannot extract features from an empty cloud");
  const Eigen::MatrixXf h = encoder.forward(raw, &t.encoder);

  if (with_local) {
    t.local_raw = local_head.forward(h, &t.local_head);
    t.out.local = t.local_raw;
    for (Eigen::Index i = 0; i < t.out.local.cols(); ++i) {
      const float norm = t.out.local.col(i).norm();
      if (norm > cfg_.local_norm_cap) t.out.local.col(i) *= cfg_.local_norm_cap / norm;
    }
  }

  t.pooled_input = h.cwiseMax(kGemClamp);
  t.pooled = tinynet::gem_pool(t.pooled_input, cfg_.gem_p);
  const Eigen::MatrixXf g = global_head.forward(t.pooled, &t.global_head);
  t.unnormalized = g.col(0);
  const float norm = t.unnormalized.norm();
  t.out.global = norm > 0.0f ? Eigen::VectorXf(t.unnormalized / norm) : t.unnormalized;
  return t.out;
}

ExtractorGradients FeatureExtractor::make_gradients() const {
  return {encoder.make_gradients(), local_head.make_gradients(), global_head.make_gradients()};
}

void FeatureExtractor::backward(const Trace& t, const LocalFeatureSet* d_local, const GlobalDescriptor* d_global,
                                ExtractorGradients& grads) const {
  if (t.encoder.empty()) throw StateError("extractor backward without a forward pass");
  const auto& h = t.encoder.outputs.back();
  Eigen::MatrixXf dh = Eigen::MatrixXf::Zero(h.rows(), h.cols());

  if (d_local) {
    if (t.local_head.empty()) throw StateError("local gradient without a local forward pass");
    Eigen::MatrixXf d_raw = *d_local;
    for (Eigen::Index i = 0; i < d_raw.cols(); ++i) {
      const Eigen::VectorXf v = t.local_raw.col(i);
      const float norm = v.norm();
      if (norm > cfg_.local_norm_cap) {
        // y = c v/|v|  =>  dy/dv = (c/|v|)(I - v v^T/|v|^2)
        const Eigen::VectorXf u = d_raw.col(i);
        d_raw.col(i) = (cfg_.local_norm_cap / norm) * (u - v * (v.dot(u) / (norm * norm)));
      }
    }
    dh += local_head.backward(t.local_head, d_raw, grads.local_head);
  }
  if (d_global) {
    const float norm = t.unnormalized.norm();
    Eigen::VectorXf du = Eigen::VectorXf::Zero(t.unnormalized.size());
    if (norm > 0.0f) {
      const Eigen::VectorXf& g = t.out.global;
      du = (*d_global - g * g.dot(*d_global)) / norm;
    }
    const Eigen::MatrixXf d_pooled = global_head.backward(t.global_head, du, grads.global_head);
    const Eigen::MatrixXf d_in = tinynet::gem_pool_backward(t.pooled_input, t.pooled, cfg_.gem_p, d_pooled.col(0));
    // The clamp passes gradient only where the encoder output exceeded it.
    dh += (h.array() > kGemClamp).select(d_in, 0.0f);
  }
  encoder.backward(t.encoder, dh, grads.encoder);
}

}  // namespace geoadapt
