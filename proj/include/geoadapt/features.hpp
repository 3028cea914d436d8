#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>

#include "geoadapt/geom.hpp"
#include "geoadapt/tinynet/checkpoint.hpp"
#include "geoadapt/tinynet/mlp.hpp"

namespace geoadapt {

inline constexpr std::size_t kRawDescriptorDim = 12;
inline constexpr std::size_t kLocalFeatureDim = 16;
inline constexpr std::size_t kGlobalDescriptorDim = 256;

/// Rows of a raw descriptor column.
enum RawDescriptorRow : int {
  kEigenRatio1 = 0,  // lambda_k / sum(lambda), descending
  kEigenRatio2,
  kEigenRatio3,
  kLinearity,        // (l1 - l2) / l1
  kPlanarity,        // (l2 - l3) / l1
  kSphericity,       // l3 / l1
  kHeight,           // point height in sensor frame
  kVerticalExtent,   // neighbourhood z range
  kDensity,          // neighbour count (log scale)
  kRange,            // distance from the sensor
  kVerticality,      // 1 - |normal_z|
  kIntensityMean,
};

/// 12 x n handcrafted neighbourhood descriptors, one column per point.
///
/// Each entry is affinely normalized by fixed constants to roughly [-1.5, 3].
/// Column i depends only on points within `radius` of point i. Points with
/// fewer than three neighbours (themselves included) get the fallback column:
/// all zeros except density.
Eigen::MatrixXf raw_descriptors(const PointCloud& cloud, float radius);

/// Undoes the fixed normalization of one descriptor row (diagnostics).
float descriptor_physical_value(RawDescriptorRow row, float normalized);

using GlobalDescriptor = Eigen::VectorXf;  // kGlobalDescriptorDim
using LocalFeatureSet = Eigen::MatrixXf;   // kLocalFeatureDim x n

struct ExtractorConfig {
  float neighborhood_radius = 1.0f;  // m; 2.0 suits real scans
  std::size_t encoder_hidden = 64;
  std::size_t encoder_out = 32;
  std::size_t local_hidden = 32;
  float gem_p = 3.0f;
  float local_norm_cap = 10.0f;
};

struct Extraction {
  GlobalDescriptor global;
  LocalFeatureSet local;
};

/// Parameter gradients for the three learnable blocks.
struct ExtractorGradients {
  tinynet::Gradients encoder, local_head, global_head;
  ExtractorGradients& operator+=(const ExtractorGradients& o);
};

/// Shared encoder over raw descriptors feeding a local decoder (16-dim per
/// point) and a global decoder (GeM over encoder features, affine map to 256,
/// unit L2 norm).
class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  FeatureExtractor(const ExtractorConfig& cfg, std::uint64_t seed);

  static FeatureExtractor from_checkpoint(const tinynet::Checkpoint& ckpt, const ExtractorConfig& cfg);
  /// Sections "encoder", "local_head", "global_head".
  tinynet::Checkpoint to_checkpoint(const std::string& metadata) const;

  const ExtractorConfig& config() const { return cfg_; }

  Extraction extract(const PointCloud& cloud) const;
  Extraction extract_from_raw(const Eigen::MatrixXf& raw) const;

  /// Everything backward() needs from one forward pass.
  struct Trace {
    tinynet::Tape encoder, local_head, global_head;
    Eigen::MatrixXf pooled_input;   // clamped encoder features
    Eigen::VectorXf pooled;
    Eigen::VectorXf unnormalized;   // global head output before L2 normalization
    Eigen::MatrixXf local_raw;      // local head output before the norm cap
    Extraction out;
  };
  /// `with_local` false skips the local head (out.local stays empty).
  Extraction forward(const Eigen::MatrixXf& raw, Trace& trace, bool with_local = true) const;
  GlobalDescriptor global_from_raw(const Eigen::MatrixXf& raw) const;
  /// Either upstream may be null (no loss on that output).
  void backward(const Trace& trace, const LocalFeatureSet* d_local, const GlobalDescriptor* d_global,
                ExtractorGradients& grads) const;

  ExtractorGradients make_gradients() const;

  tinynet::Mlp encoder;
  tinynet::Mlp local_head;
  tinynet::Mlp global_head;

 private:
  ExtractorConfig cfg_;
};

}  // namespace geoadapt
