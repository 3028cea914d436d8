#include "geoadapt/simulator.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <bit>
#include <map>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include "geoadapt/error.hpp"
#include "geoadapt/parallel.hpp"

namespace geoadapt {

namespace {

constexpr double kPi = std::numbers::pi;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double unit_hash(std::uint64_t a, std::uint64_t b) {
  return static_cast<double>(splitmix(splitmix(a) ^ b) >> 11) * 0x1.0p-53;
}

struct SurfacePoint {
  Eigen::Vector3f position;
  Eigen::Vector3f normal;
  float reflectivity;
};

// ---- route: closed smooth loop, arc-length parametrized polyline ----

struct Route {
  std::vector<Eigen::Vector2d> pts;  // dense samples
  std::vector<double> arc;           // cumulative length
  double length = 0;

  Eigen::Vector2d at(double s, Eigen::Vector2d* tangent = nullptr) const {
    s = std::fmod(s, length);
    if (s < 0) s += length;
    const auto it = std::upper_bound(arc.begin(), arc.end(), s);
    const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(it - arc.begin()), arc.size() - 1);
    const std::size_t i0 = i - 1;
    const double t = (s - arc[i0]) / std::max(1e-12, arc[i] - arc[i0]);
    if (tangent) *tangent = (pts[i] - pts[i0]).normalized();
    return pts[i0] + t * (pts[i] - pts[i0]);
  }
};

Route make_route(const SimWorldConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> amp(-0.12, 0.12), phase(0, 2 * kPi);
  double a[3], ph[3];
  for (int k = 0; k < 3; ++k) {
    a[k] = amp(rng);
    ph[k] = phase(rng);
  }
  constexpr int kSamples = 4096;
  std::vector<Eigen::Vector2d> unit;
  for (int i = 0; i <= kSamples; ++i) {
    const double th = 2 * kPi * i / kSamples;
    double r = 1.0;
    for (int k = 0; k < 3; ++k) r += a[k] * std::cos((k + 2) * th + ph[k]);
    unit.emplace_back(r * std::cos(th), r * std::sin(th));
  }
  double unit_len = 0;
  for (int i = 1; i <= kSamples; ++i) unit_len += (unit[i] - unit[i - 1]).norm();
  const double scale = cfg.trajectory_length / unit_len;
  Route route;
  route.arc.push_back(0);
  for (int i = 0; i <= kSamples; ++i) {
    route.pts.push_back(unit[i] * scale);
    if (i > 0) route.arc.push_back(route.arc.back() + (route.pts[i] - route.pts[i - 1]).norm());
  }
  route.length = route.arc.back();
  return route;
}

double distance_to_route(const Route& r, const Eigen::Vector2d& p) {
  double best = 1e30;
  for (std::size_t i = 0; i < r.pts.size(); i += 8) best = std::min(best, (r.pts[i] - p).norm());
  return best;
}

// ---- landmark surfaces ----

void add_cylinder(std::vector<SurfacePoint>& out, const Eigen::Vector3d& base, double radius, double height,
                  double spacing, float refl) {
  const int n_around = std::max(6, static_cast<int>(std::ceil(2 * kPi * radius / spacing)));
  const int n_up = std::max(2, static_cast<int>(std::ceil(height / spacing)));
  for (int j = 0; j < n_up; ++j) {
    const double z = base.z() + (j + 0.5) * height / n_up;
    for (int i = 0; i < n_around; ++i) {
      const double th = 2 * kPi * (i + 0.5 * (j % 2)) / n_around;
      const Eigen::Vector3d n(std::cos(th), std::sin(th), 0);
      out.push_back({(base + radius * n + Eigen::Vector3d(0, 0, z - base.z())).cast<float>(), n.cast<float>(), refl});
    }
  }
}

void add_sphere(std::vector<SurfacePoint>& out, const Eigen::Vector3d& center, const Eigen::Vector3d& radii,
                double spacing, float refl) {
  const double r = radii.maxCoeff();
  const int n = std::max(24, static_cast<int>(4 * kPi * r * r / (spacing * spacing)));
  // Fibonacci sphere, stretched to an ellipsoid; below-ground samples dropped.
  const double golden = kPi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / n;
    const double rr = std::sqrt(1 - z * z);
    const double th = golden * i;
    const Eigen::Vector3d u(rr * std::cos(th), rr * std::sin(th), z);
    const Eigen::Vector3d p = center + u.cwiseProduct(radii);
    if (p.z() < 0.05) continue;
    const Eigen::Vector3d nrm = u.cwiseQuotient(radii).normalized();
    out.push_back({p.cast<float>(), nrm.cast<float>(), refl});
  }
}

/// Vertical faces of an oriented box (no roof: invisible from street level).
void add_box(std::vector<SurfacePoint>& out, const Eigen::Vector2d& center, double yaw, double w, double d, double h,
             double spacing, float refl) {
  const Eigen::Vector2d ex(std::cos(yaw), std::sin(yaw)), ey(-std::sin(yaw), std::cos(yaw));
  struct Face {
    Eigen::Vector2d origin, along, normal;
    double len;
  };
  const Face faces[4] = {
      {center - 0.5 * w * ex - 0.5 * d * ey, ex, -ey, w},
      {center - 0.5 * w * ex + 0.5 * d * ey, ex, ey, w},
      {center - 0.5 * w * ex - 0.5 * d * ey, ey, -ex, d},
      {center + 0.5 * w * ex - 0.5 * d * ey, ey, ex, d},
  };
  for (const auto& f : faces) {
    const int nu = std::max(2, static_cast<int>(std::ceil(f.len / spacing)));
    const int nz = std::max(2, static_cast<int>(std::ceil(h / spacing)));
    for (int i = 0; i < nu; ++i) {
      const Eigen::Vector2d xy = f.origin + f.along * ((i + 0.5) * f.len / nu);
      for (int j = 0; j < nz; ++j) {
        const double z = (j + 0.5) * h / nz;
        out.push_back({Eigen::Vector3f(xy.x(), xy.y(), z), Eigen::Vector3f(f.normal.x(), f.normal.y(), 0), refl});
      }
    }
  }
}

enum class Family { pole, building, wall, bush, tree };

Family draw_family(const ShapeMix& mix, std::mt19937_64& rng) {
  const double w[5] = {mix.pole, mix.building, mix.wall, mix.bush, mix.tree};
  std::discrete_distribution<int> pick(std::begin(w), std::end(w));
  return static_cast<Family>(pick(rng));
}

// ---- world: surface samples bucketed on a 2D grid ----

struct World {
  std::vector<SurfacePoint> surface;
  double cell = 10.0;
  double half_extent = 0;
  int cells_per_side = 0;
  std::vector<std::vector<std::uint32_t>> grid;

  void build_grid() {
    cells_per_side = static_cast<int>(std::ceil(2 * half_extent / cell)) + 1;
    grid.assign(static_cast<std::size_t>(cells_per_side) * cells_per_side, {});
    for (std::uint32_t i = 0; i < surface.size(); ++i) {
      grid[cell_of(surface[i].position.x(), surface[i].position.y())].push_back(i);
    }
  }
  std::size_t cell_of(double x, double y) const {
    const int cx = std::clamp(static_cast<int>((x + half_extent) / cell), 0, cells_per_side - 1);
    const int cy = std::clamp(static_cast<int>((y + half_extent) / cell), 0, cells_per_side - 1);
    return static_cast<std::size_t>(cy) * cells_per_side + cx;
  }
};

World make_world(const SimWorldConfig& cfg, const Route& route, std::mt19937_64& rng) {
  World w;
  w.half_extent = 0.5 * std::sqrt(cfg.area);
  const double s = cfg.surface_spacing;
  std::uniform_real_distribution<double> pos(-w.half_extent, w.half_extent), u01(0, 1);
  auto refl = [&] { return static_cast<float>(0.1 + 0.8 * u01(rng)); };

  // Ground: jittered grid at a coarser pitch.
  const double g = 2.5 * s;
  std::uniform_real_distribution<double> jit(-0.3 * g, 0.3 * g);
  for (double x = -w.half_extent; x < w.half_extent; x += g) {
    for (double y = -w.half_extent; y < w.half_extent; y += g) {
      const double gx = x + jit(rng);
      const double gy = y + jit(rng);
      const double gr = 0.12 + 0.06 * u01(rng);
      w.surface.push_back({Eigen::Vector3f(static_cast<float>(gx), static_cast<float>(gy), 0.0f),
                           Eigen::Vector3f::UnitZ(), static_cast<float>(gr)});
    }
  }

  std::size_t placed = 0, attempts = 0;
  while (placed < cfg.landmark_count && attempts < 50 * cfg.landmark_count) {
    ++attempts;
    const double px = pos(rng);
    const double py = pos(rng);
    const Eigen::Vector2d c(px, py);
    const Family fam = draw_family(cfg.shape_mix, rng);
    const double clearance = fam == Family::building ? 14.0 : (fam == Family::wall ? 9.0 : 4.0);
    if (distance_to_route(route, c) < clearance) continue;
    const float r = refl();
    // Fixed number of shape draws per landmark, in a fixed order.
    double d[4];
    for (double& v : d) v = u01(rng);
    switch (fam) {
      case Family::pole:
        add_cylinder(w.surface, {c.x(), c.y(), 0}, 0.1 + 0.15 * d[0], 3.5 + 5.0 * d[1], s, r);
        break;
      case Family::building:
        add_box(w.surface, c, 2 * kPi * d[0], 5 + 9 * d[1], 5 + 9 * d[2], 4 + 8 * d[3], s, r);
        break;
      case Family::wall:
        add_box(w.surface, c, 2 * kPi * d[0], 6 + 12 * d[1], 0.3, 1.2 + 1.8 * d[2], s, r);
        break;
      case Family::bush: {
        const double rad = 0.6 + 1.2 * d[0];
        add_sphere(w.surface, {c.x(), c.y(), 0.5 * rad}, {rad, rad, 0.8 * rad}, s, r);
        break;
      }
      case Family::tree: {
        const double trunk_h = 1.5 + 2.5 * d[0];
        const double crown = 1.2 + 1.8 * d[1];
        add_cylinder(w.surface, {c.x(), c.y(), 0}, 0.12 + 0.2 * d[2], trunk_h, s, static_cast<float>(0.3 + 0.2 * d[3]));
        add_sphere(w.surface, {c.x(), c.y(), trunk_h + 0.8 * crown}, {crown, crown, 1.1 * crown}, s, r);
        break;
      }
    }
    ++placed;
  }
  w.build_grid();
  return w;
}

// ---- scans ----

std::uint64_t pose_seed(std::uint64_t world_seed, const Pose& pose) {
  std::uint64_t h = splitmix(world_seed);
  for (int i = 0; i < 9; ++i) h = splitmix(h ^ std::bit_cast<std::uint64_t>(pose.rotation.data()[i]));
  for (int i = 0; i < 3; ++i) h = splitmix(h ^ std::bit_cast<std::uint64_t>(pose.translation(i)));
  return h;
}

PointCloud render_scan(const SimWorldConfig& cfg, const World& world, const Pose& pose) {
  const std::uint64_t scan_seed = pose_seed(cfg.seed, pose);
  const double range = cfg.sensor_range * cfg.range_scale;
  const Eigen::Vector3d origin = pose.translation;
  const double x0 = origin.x(), y0 = origin.y();

  struct Hit {
    std::uint32_t index;
    double weight;
  };
  std::vector<Hit> hits;
  const int reach = static_cast<int>(std::ceil(range / world.cell));
  const int cx = static_cast<int>((x0 + world.half_extent) / world.cell);
  const int cy = static_cast<int>((y0 + world.half_extent) / world.cell);
  double total = 0;
  for (int dy = -reach; dy <= reach; ++dy) {
    for (int dx = -reach; dx <= reach; ++dx) {
      const int gx = cx + dx, gy = cy + dy;
      if (gx < 0 || gy < 0 || gx >= world.cells_per_side || gy >= world.cells_per_side) continue;
      for (std::uint32_t i : world.grid[static_cast<std::size_t>(gy) * world.cells_per_side + gx]) {
        const auto& sp = world.surface[i];
        const Eigen::Vector3d v = sp.position.cast<double>() - origin;
        const double r = v.norm();
        if (r > range || r < 1.0) continue;
        // Back faces are not visible.
        const double facing = -v.dot(sp.normal.cast<double>()) / r;
        if (facing <= 0.05) continue;
        // Return density on a surface falls with range squared.
        const double w = facing / std::max(r * r, 9.0);
        hits.push_back({i, w});
        total += w;
      }
    }
  }
  PointCloud cloud;
  if (hits.empty()) return cloud;
  const double target = static_cast<double>(cfg.points_per_scan) * cfg.density_scale;
  const double c = target / total;
  std::mt19937_64 rng(scan_seed);
  std::normal_distribution<float> noise(0.0f, static_cast<float>(cfg.noise_sigma * cfg.noise_scale));
  std::normal_distribution<float> refl_noise(0.0f, static_cast<float>(1.5 * cfg.noise_sigma * cfg.noise_scale));
  std::uniform_real_distribution<double> u01(0, 1);
  const Eigen::Matrix3d rt = pose.rotation.transpose();

  for (const auto& h : hits) {
    // Keep decision is a function of the world point and pose only.
    if (unit_hash(cfg.seed, h.index) >= c * h.weight) continue;
    if (u01(rng) < cfg.dropout) continue;
    const auto& sp = world.surface[h.index];
    const Eigen::Vector3d local = rt * (sp.position.cast<double>() - origin);
    Eigen::Vector3f jitter;
    for (int k = 0; k < 3; ++k) jitter(k) = noise(rng);
    cloud.points.push_back(local.cast<float>() + jitter);
    const double r = (sp.position.cast<double>() - origin).norm();
    const double cos_inc = std::abs((sp.position.cast<double>() - origin).dot(sp.normal.cast<double>())) / r;
    const float it = static_cast<float>(sp.reflectivity * (0.6 + 0.4 * cos_inc)) + refl_noise(rng);
    cloud.intensity.push_back(std::clamp(it, 0.0f, 1.0f));
  }

  // Clutter: small random clusters (spurious returns, foliage) near the ground.
  const std::size_t n_clutter = static_cast<std::size_t>(std::llround(cfg.clutter_rate * static_cast<double>(cloud.size())));
  std::size_t added = 0;
  while (added < n_clutter) {
    const double az = 2 * kPi * u01(rng);
    const double rr = 3.0 + (range - 3.0) * std::sqrt(u01(rng));
    const double cz = -cfg.sensor_height + 0.2 + 2.3 * u01(rng);
    const Eigen::Vector3d centre(rr * std::cos(az), rr * std::sin(az), cz);
    const float it = static_cast<float>(u01(rng));
    const int cluster = 4 + static_cast<int>(6 * u01(rng));
    std::normal_distribution<double> spread(0.0, 0.25);
    for (int k = 0; k < cluster && added < n_clutter; ++k, ++added) {
      Eigen::Vector3d p = centre;
      for (int c = 0; c < 3; ++c) p(c) += spread(rng);
      cloud.points.push_back(p.cast<float>());
      cloud.intensity.push_back(it);
    }
  }
  return cloud;
}

std::string scan_name(const std::string& traversal, std::size_t i) {
  std::ostringstream os;
  os << traversal << '_' << std::setw(5) << std::setfill('0') << i;
  return os.str();
}

}  // namespace

void SimWorldConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) throw ConfigError(std::string("simulator: ") + name + " must be positive");
  };
  positive(area, "area");
  positive(trajectory_length, "trajectory_length");
  positive(scan_spacing, "scan_spacing");
  positive(sensor_range, "sensor_range");
  positive(sensor_height, "sensor_height");
  positive(static_cast<double>(points_per_scan), "points_per_scan");
  positive(surface_spacing, "surface_spacing");
  positive(range_scale, "range_scale");
  positive(density_scale, "density_scale");
  positive(noise_scale, "noise_scale");
  if (noise_sigma < 0) throw ConfigError("simulator: noise_sigma must be non-negative");
  if (clutter_rate < 0) throw ConfigError("simulator: clutter_rate must be non-negative");
  if (lateral_offset < 0) throw ConfigError("simulator: lateral_offset must be non-negative");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("simulator: dropout must lie in [0, 1)");
  const double mix = shape_mix.pole + shape_mix.building + shape_mix.wall + shape_mix.bush + shape_mix.tree;
  if (!(mix > 0)) throw ConfigError("simulator: shape mix must have positive total weight");
}

ShiftPreset parse_shift_preset(const std::string& s) {
  if (s == "none") return ShiftPreset::none;
  if (s == "moderate") return ShiftPreset::moderate;
  if (s == "severe") return ShiftPreset::severe;
  throw ConfigError("unknown domain shift preset '" + s + "' (expected none, moderate or severe)");
}

const char* to_string(ShiftPreset p) {
  switch (p) {
    case ShiftPreset::none: return "none";
    case ShiftPreset::moderate: return "moderate";
    case ShiftPreset::severe: return "severe";
  }
  return "none";
}

SimWorldConfig shift_domain(const SimWorldConfig& source, ShiftPreset preset) {
  SimWorldConfig t = source;
  t.seed = splitmix(source.seed + 0x51ED);
  if (preset == ShiftPreset::none) return t;
  t.range_scale = source.range_scale * 0.75;
  t.noise_scale = source.noise_scale * 1.5;
  if (preset == ShiftPreset::moderate) return t;
  t.density_scale = source.density_scale * 0.25;
  t.clutter_rate = source.clutter_rate * 6.0;
  t.shape_mix = ShapeMix{0.05, 0.0, 0.05, 0.4, 0.5};
  return t;
}

struct SimWorld::Impl {
  SimWorldConfig cfg;
  Route route;
  World world;
  std::mt19937_64 rng;
};

SimWorld::SimWorld(const SimWorldConfig& cfg) : impl_(std::make_unique<Impl>()) {
  cfg.validate();
  impl_->cfg = cfg;
  impl_->rng.seed(cfg.seed);
  impl_->route = make_route(cfg, impl_->rng);
  impl_->world = make_world(cfg, impl_->route, impl_->rng);
}

SimWorld::~SimWorld() = default;
SimWorld::SimWorld(SimWorld&&) noexcept = default;
SimWorld& SimWorld::operator=(SimWorld&&) noexcept = default;

const SimWorldConfig& SimWorld::config() const { return impl_->cfg; }
double SimWorld::route_length() const { return impl_->route.length; }

Pose SimWorld::route_pose(double s, double offset, bool reverse) const {
  Eigen::Vector2d tangent;
  const Eigen::Vector2d c = impl_->route.at(s, &tangent);
  const Eigen::Vector2d normal(-tangent.y(), tangent.x());
  const Eigen::Vector2d p = c + offset * normal;
  const double yaw = std::atan2(tangent.y(), tangent.x()) + (reverse ? kPi : 0.0);
  return Pose::from_yaw(yaw, {p.x(), p.y(), impl_->cfg.sensor_height});
}

PointCloud SimWorld::scan(const Pose& pose) const { return render_scan(impl_->cfg, impl_->world, pose); }

std::vector<Point3> SimWorld::surface_points() const {
  std::vector<Point3> out;
  out.reserve(impl_->world.surface.size());
  for (const auto& sp : impl_->world.surface) out.push_back(sp.position);
  return out;
}

DatasetManifest simulate_world(const SimWorldConfig& cfg) {
  SimWorld sim(cfg);
  // Trajectory draws continue the world's RNG stream.
  std::mt19937_64& rng = sim.impl_->rng;
  const double length = sim.route_length();

  struct Plan {
    std::string traversal;
    Split split;
    Pose pose;
  };
  std::vector<Plan> plans;
  std::uniform_real_distribution<double> u01(0, 1);

  auto jittered = [&](Pose p) {
    return Pose::from_yaw(0.03 * (u01(rng) - 0.5), Eigen::Vector3d::Zero()).rotation * p.rotation;
  };
  const std::size_t per_pass = static_cast<std::size_t>(std::floor(length / cfg.scan_spacing));
  auto traverse = [&](const std::string& tag, Split split, std::size_t pass_index) {
    const double start = length * u01(rng);
    const bool reverse = pass_index % 2 == 1;
    const double amp = cfg.lateral_offset * u01(rng);
    const double wavelength = 40.0 + 60.0 * u01(rng);
    const double phase = 2 * kPi * u01(rng);
    for (std::size_t i = 0; i < per_pass; ++i) {
      const double travelled = cfg.scan_spacing * static_cast<double>(i);
      const double s = reverse ? start - travelled : start + travelled;
      const double offset = amp * std::sin(2 * kPi * travelled / wavelength + phase);
      Pose p = sim.route_pose(s, offset, reverse);
      p.rotation = jittered(p);
      plans.push_back({tag, split, p});
    }
  };
  for (std::size_t t = 0; t < cfg.train_traversals; ++t) traverse("train" + std::to_string(t), Split::train, t);
  traverse("db", Split::database, 0);
  for (std::size_t q = 0; q < cfg.revisit_count; ++q) {
    const double s = length * u01(rng);
    const double offset = cfg.lateral_offset * (2 * u01(rng) - 1);
    const bool reverse = u01(rng) < 0.5;
    Pose p = sim.route_pose(s, offset, reverse);
    p.rotation = jittered(p);
    plans.push_back({"query", Split::query, p});
  }

  DatasetManifest m;
  m.scans.resize(plans.size());
  std::map<std::string, std::size_t> per_tag;
  for (std::size_t i = 0; i < plans.size(); ++i) {
    auto& e = m.scans[i];
    e.traversal = plans[i].traversal;
    e.split = plans[i].split;
    e.pose = plans[i].pose;
    e.scan_id = scan_name(e.traversal, per_tag[e.traversal]++);
  }
  parallel_for(plans.size(), [&](std::size_t i) { m.scans[i].cloud = std::make_shared<const PointCloud>(sim.scan(plans[i].pose)); });
  return m;
}

}  // namespace geoadapt
