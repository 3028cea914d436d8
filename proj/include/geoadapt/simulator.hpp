#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "geoadapt/datasets.hpp"

namespace geoadapt {

/// Relative frequency of each landmark family.
struct ShapeMix {
  double pole = 0.35;
  double building = 0.25;
  double wall = 0.2;
  double bush = 0.1;
  double tree = 0.1;
  bool operator==(const ShapeMix&) const = default;
};

/// Procedural world: a closed route through a square area scattered with
/// landmarks, traversed several times by a spinning range sensor.
struct SimWorldConfig {
  std::uint64_t seed = 1;
  double area = 260.0 * 260.0;            // m^2, square
  std::size_t landmark_count = 420;
  ShapeMix shape_mix;
  double trajectory_length = 400.0;       // m per traversal
  double scan_spacing = 1.5;              // m between consecutive scans
  std::size_t train_traversals = 2;
  std::size_t revisit_count = 150;        // query scans revisiting the database traversal
  double lateral_offset = 1.2;            // m, max sideways deviation from the route
  double sensor_range = 40.0;             // m
  double sensor_height = 1.8;             // m
  std::size_t points_per_scan = 1024;
  double noise_sigma = 0.02;              // m
  double dropout = 0.05;                  // fraction of returns removed at random
  double surface_spacing = 0.2;           // m, world surface sampling
  // Domain-shift knobs; 1.0 / source clutter means no shift.
  double range_scale = 1.0;
  double density_scale = 1.0;
  double noise_scale = 1.0;
  double clutter_rate = 0.05;             // clutter returns per real return

  /// Throws ConfigError when a physical quantity is not positive or dropout is outside [0,1).
  void validate() const;
};

enum class ShiftPreset { none, moderate, severe };

ShiftPreset parse_shift_preset(const std::string& s);
const char* to_string(ShiftPreset p);

/// Target-domain configuration derived from a source configuration.
///   none:     new world (seed + 1), same sensor and scene statistics
///   moderate: new world, 0.75x range, 1.5x noise
///   severe:   moderate + 0.25x density, 6x clutter, vegetation-dominated shape mix
SimWorldConfig shift_domain(const SimWorldConfig& source, ShiftPreset preset);

/// A generated world. Scans are a pure function of (config, pose): the
/// per-scan noise stream is seeded from the world seed and the pose bits.
class SimWorld {
 public:
  explicit SimWorld(const SimWorldConfig& cfg);
  ~SimWorld();
  SimWorld(SimWorld&&) noexcept;
  SimWorld& operator=(SimWorld&&) noexcept;

  const SimWorldConfig& config() const;
  double route_length() const;
  /// Pose on the route at arc length s, shifted sideways by `offset`.
  Pose route_pose(double s, double offset, bool reverse) const;
  PointCloud scan(const Pose& pose) const;
  /// World-frame surface samples (ground and landmarks), for diagnostics.
  std::vector<Point3> surface_points() const;

 private:
  friend DatasetManifest simulate_world(const SimWorldConfig& cfg);
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Deterministic under cfg.seed. Emits train traversals (split train,
/// traversal tags "train0", "train1", ...), one database traversal ("db")
/// and `revisit_count` query scans ("query"), all with poses.
DatasetManifest simulate_world(const SimWorldConfig& cfg);

}  // namespace geoadapt
