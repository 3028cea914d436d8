#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "geoadapt/geom.hpp"

namespace geoadapt {

enum class Split { train, query, database };

const char* to_string(Split s);
Split parse_split(const std::string& s);

struct ScanEntry {
  std::string scan_id;
  /// Relative to the manifest root; empty for purely in-memory scans.
  std::filesystem::path path;
  std::shared_ptr<const PointCloud> cloud;
  std::optional<Pose> pose;
  std::string traversal;
  Split split = Split::train;
};

/// Ordered scan list with optional poses.
///
/// Invariants (checked by validate()): scan ids unique; within a split,
/// either every entry has a pose or none does; no traversal tag appears in
/// both the query and the database split.
struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ScanEntry> scans;

  std::size_t size() const { return scans.size(); }
  void validate() const;
  bool has_poses() const;
  /// Entries of one split, order preserved.
  DatasetManifest select(Split split) const;
  /// In-memory cloud when present, else read from root / path.
  PointCloud load(std::size_t i) const;
  std::vector<Pose> poses() const;
};

/// A manifest with every pose removed. Test-time stages only accept this
/// type, so they cannot observe target ground truth.
class UnlabeledManifest {
 public:
  explicit UnlabeledManifest(const DatasetManifest& labeled);

  std::size_t size() const { return inner_.size(); }
  const std::string& scan_id(std::size_t i) const { return inner_.scans[i].scan_id; }
  PointCloud load(std::size_t i) const { return inner_.load(i); }

 private:
  DatasetManifest inner_;
};

// ---- scan files: little-endian f32 quadruples (x, y, z, intensity) ----

/// Throws ParseError (with the offending byte offset) when the size is not a
/// multiple of 16 bytes or a value is non-finite. An empty file yields an
/// empty cloud and a warning on stderr.
PointCloud read_scan_bin(const std::filesystem::path& path);
void write_scan_bin(const std::filesystem::path& path, const PointCloud& cloud);

// ---- pose tables: "scan_id r00 r01 r02 t0 r10 r11 r12 t1 r20 r21 r22 t2" ----

struct PoseTable {
  std::map<std::string, Pose> poses;
  /// Ids whose rotation drifted beyond 1e-4 and was projected onto SO(3).
  std::vector<std::string> repaired;
};

inline constexpr double kPoseAcceptTolerance = 1e-4;
inline constexpr double kPoseRepairTolerance = 1e-2;

PoseTable read_poses(const std::filesystem::path& path);
void write_poses(const std::filesystem::path& path, const std::vector<std::pair<std::string, Pose>>& poses);

/// Nearest rotation (Frobenius) to m; throws ValidationError for reflections.
Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d& m);

// ---- manifest index: "scan_id, relative_path, traversal, split" ----

/// Reads index.txt and, when present next to it, poses.txt.
DatasetManifest read_manifest(const std::filesystem::path& index_path);
/// Writes scans/<id>.bin, index.txt and (when poses exist) poses.txt under `dir`.
void write_manifest(const std::filesystem::path& dir, const DatasetManifest& manifest);

}  // namespace geoadapt
