#include "geoadapt/datasets.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>

#include "geoadapt/error.hpp"

namespace geoadapt {

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::query: return "query";
    case Split::database: return "database";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "query") return Split::query;
  if (s == "database") return Split::database;
  throw DataError("unknown split '" + s + "'");
}

void DatasetManifest::validate() const {
  std::set<std::string> ids;
  std::map<Split, std::pair<std::size_t, std::size_t>> pose_counts;  // with, without
  std::set<std::string> query_tags, db_tags;
  for (const auto& e : scans) {
    if (!ids.insert(e.scan_id).second) throw DataError("duplicate scan id '" + e.scan_id + "'");
    auto& c = pose_counts[e.split];
    (e.pose ? c.first : c.second)++;
    if (e.split == Split::query) query_tags.insert(e.traversal);
    if (e.split == Split::database) db_tags.insert(e.traversal);
    if (e.pose) e.pose->validate(kPoseAcceptTolerance);
  }
  for (const auto& [split, c] : pose_counts) {
    if (c.first && c.second) throw DataError(std::string("split '") + to_string(split) + "' mixes scans with and without poses");
  }
  for (const auto& t : query_tags) {
    if (db_tags.count(t)) throw DataError("traversal '" + t + "' appears in both query and database splits");
  }
}

bool DatasetManifest::has_poses() const {
  if (scans.empty()) return false;
  for (const auto& e : scans)
    if (!e.pose) return false;
  return true;
}

DatasetManifest DatasetManifest::select(Split split) const {
  DatasetManifest out;
  out.root = root;
  for (const auto& e : scans)
    if (e.split == split) out.scans.push_back(e);
  return out;
}

PointCloud DatasetManifest::load(std::size_t i) const {
  const auto& e = scans.at(i);
  if (e.cloud) return *e.cloud;
  if (e.path.empty()) throw DataError("scan '" + e.scan_id + "' has neither a cloud nor a path");
  return read_scan_bin(root / e.path);
}

std::vector<Pose> DatasetManifest::poses() const {
  std::vector<Pose> out;
  out.reserve(scans.size());
  for (const auto& e : scans) {
    if (!e.pose) throw DataError("scan '" + e.scan_id + "' has no pose");
    out.push_back(*e.pose);
  }
  return out;
}

UnlabeledManifest::UnlabeledManifest(const DatasetManifest& labeled) : inner_(labeled) {
  for (auto& e : inner_.scans) e.pose.reset();
}

// ---------------------------------------------------------------------------

PointCloud read_scan_bin(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open scan file: " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string bytes = ss.str();
  if (bytes.size() % 16 != 0) {
    const std::size_t offset = bytes.size() - bytes.size() % 16;
    throw ParseError(path.string() + ": size " + std::to_string(bytes.size()) +
                         " is not a multiple of 16; trailing record starts at byte " + std::to_string(offset),
                     offset);
  }
  PointCloud cloud;
  if (bytes.empty()) {
    std::cerr << "warning: empty scan file " << path << '\n';
    return cloud;
  }
  const std::size_t n = bytes.size() / 16;
  cloud.points.reserve(n);
  cloud.intensity.reserve(n);
  auto f32 = [&](std::size_t off) {
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + b])) << (8 * b);
    return std::bit_cast<float>(v);
  };
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t off = 16 * i;
    const float x = f32(off), y = f32(off + 4), z = f32(off + 8), it = f32(off + 12);
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z) || !std::isfinite(it)) {
      throw ParseError(path.string() + ": non-finite value in record at byte " + std::to_string(off), off);
    }
    cloud.points.emplace_back(x, y, z);
    cloud.intensity.push_back(it);
  }
  return cloud;
}

void write_scan_bin(const std::filesystem::path& path, const PointCloud& cloud) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open scan file for writing: " + path.string());
  std::string bytes;
  bytes.reserve(cloud.size() * 16);
  auto put = [&](float v) {
    const auto u = std::bit_cast<std::uint32_t>(v);
    for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<char>((u >> (8 * b)) & 0xFF));
  };
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    put(cloud.points[i].x());
    put(cloud.points[i].y());
    put(cloud.points[i].z());
    put(cloud.intensity_at(i));
  }
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// ---------------------------------------------------------------------------

Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) throw ValidationError("matrix is closest to a reflection, not a rotation");
  return r;
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',' || c == ' ' || c == '\t' || c == '\r') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

double parse_real(const std::string& s, std::size_t line_no, const std::filesystem::path& path) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (...) {
    used = 0;
  }
  if (used != s.size() || !std::isfinite(v)) {
    throw ParseError(path.string() + ":" + std::to_string(line_no) + ": invalid number '" + s + "'", line_no);
  }
  return v;
}

}  // namespace

PoseTable read_poses(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open pose file: " + path.string());
  PoseTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    const auto fields = split_fields(line);
    if (fields.empty() || fields[0][0] == '#') continue;
    if (fields.size() != 13) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected scan id and 12 reals, got " +
                           std::to_string(fields.size()) + " fields",
                       line_no);
    }
    double v[12];
    for (int k = 0; k < 12; ++k) v[k] = parse_real(fields[k + 1], line_no, path);
    Pose p;
    p.rotation << v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10];
    p.translation << v[3], v[7], v[11];

    const double ortho = (p.rotation * p.rotation.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    const double det = p.rotation.determinant();
    const double drift = std::max(ortho, std::abs(det - 1.0));
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (det <= 0.0) throw ParseError(where + ": rotation has determinant " + std::to_string(det) + " (reflection)", line_no);
    if (drift > kPoseRepairTolerance) {
      throw ParseError(where + ": rotation is not rigid (drift " + std::to_string(drift) + ")", line_no);
    }
    if (drift > kPoseAcceptTolerance) {
      p.rotation = nearest_rotation(p.rotation);
      table.repaired.push_back(fields[0]);
    }
    if (!table.poses.emplace(fields[0], p).second) {
      throw ParseError(where + ": duplicate scan id '" + fields[0] + "'", line_no);
    }
  }
  return table;
}

void write_poses(const std::filesystem::path& path, const std::vector<std::pair<std::string, Pose>>& poses) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot open pose file for writing: " + path.string());
  f << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& [id, p] : poses) {
    f << id;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) f << ' ' << p.rotation(r, c);
      f << ' ' << p.translation(r);
    }
    f << '\n';
  }
}

DatasetManifest read_manifest(const std::filesystem::path& index_path) {
  std::ifstream f(index_path);
  if (!f) throw DataError("cannot open manifest index: " + index_path.string());
  DatasetManifest m;
  m.root = index_path.parent_path();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) {
      const auto b = field.find_first_not_of(" \t\r");
      const auto e = field.find_last_not_of(" \t\r");
      fields.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
    }
    if (fields.size() != 4) {
      throw ParseError(index_path.string() + ":" + std::to_string(line_no) + ": expected 4 comma-separated fields",
                       line_no);
    }
    ScanEntry e;
    e.scan_id = fields[0];
    e.path = fields[1];
    e.traversal = fields[2];
    try {
      e.split = parse_split(fields[3]);
    } catch (const DataError&) {
      throw ParseError(index_path.string() + ":" + std::to_string(line_no) + ": unknown split '" + fields[3] + "'",
                       line_no);
    }
    m.scans.push_back(std::move(e));
  }
  const auto pose_path = m.root / "poses.txt";
  if (std::filesystem::exists(pose_path)) {
    const PoseTable table = read_poses(pose_path);
    for (auto& e : m.scans) {
      if (auto it = table.poses.find(e.scan_id); it != table.poses.end()) e.pose = it->second;
    }
  }
  m.validate();
  return m;
}

void write_manifest(const std::filesystem::path& dir, const DatasetManifest& manifest) {
  manifest.validate();
  std::filesystem::create_directories(dir / "scans");
  std::ofstream index(dir / "index.txt", std::ios::trunc);
  if (!index) throw DataError("cannot write manifest index under " + dir.string());
  std::vector<std::pair<std::string, Pose>> poses;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& e = manifest.scans[i];
    const std::filesystem::path rel = std::filesystem::path("scans") / (e.scan_id + ".bin");
    write_scan_bin(dir / rel, manifest.load(i));
    index << e.scan_id << ", " << rel.generic_string() << ", " << e.traversal << ", " << to_string(e.split) << '\n';
    if (e.pose) poses.emplace_back(e.scan_id, *e.pose);
  }
  if (!poses.empty()) write_poses(dir / "poses.txt", poses);
}

}  // namespace geoadapt
