#include "geoadapt/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>

#include "geoadapt/error.hpp"

namespace geoadapt {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + expected);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(d)) bad_value(key, v, "a finite number");
    return d;
  } catch (const std::logic_error&) {
    bad_value(key, v, "a number");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  bad_value(key, v, "a boolean");
}

// Shortest text that parses back to the same value.
template <class T>
std::string fmt(T v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

struct Entry {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class Member>
Entry real(std::string key, Member member) {
  return {key,
          [key, member](RunConfig& c, const std::string& v) {
            using T = std::remove_reference_t<decltype(member(c))>;
            member(c) = static_cast<T>(parse_double(key, v));
          },
          [member](const RunConfig& c) { return fmt(member(const_cast<RunConfig&>(c))); }};
}

template <class Member>
Entry count(std::string key, Member member) {
  return {key,
          [key, member](RunConfig& c, const std::string& v) {
            using T = std::remove_reference_t<decltype(member(c))>;
            member(c) = static_cast<T>(parse_u64(key, v));
          },
          [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); }};
}

template <class Member>
Entry flag(std::string key, Member member) {
  return {key, [key, member](RunConfig& c, const std::string& v) { member(c) = parse_bool(key, v); },
          [member](const RunConfig& c) -> std::string { return member(const_cast<RunConfig&>(c)) ? "true" : "false"; }};
}

#define M(expr) [](RunConfig& c) -> auto& { return c.expr; }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      count("seed", M(seed)),
      count("threads", M(threads)),
      real("epoch_scale", M(epoch_scale)),

      real("sim.area", M(sim.area)),
      count("sim.landmark_count", M(sim.landmark_count)),
      real("sim.mix.pole", M(sim.shape_mix.pole)),
      real("sim.mix.building", M(sim.shape_mix.building)),
      real("sim.mix.wall", M(sim.shape_mix.wall)),
      real("sim.mix.bush", M(sim.shape_mix.bush)),
      real("sim.mix.tree", M(sim.shape_mix.tree)),
      real("sim.trajectory_length", M(sim.trajectory_length)),
      real("sim.scan_spacing", M(sim.scan_spacing)),
      count("sim.train_traversals", M(sim.train_traversals)),
      count("sim.revisit_count", M(sim.revisit_count)),
      real("sim.lateral_offset", M(sim.lateral_offset)),
      real("sim.sensor_range", M(sim.sensor_range)),
      real("sim.sensor_height", M(sim.sensor_height)),
      count("sim.points_per_scan", M(sim.points_per_scan)),
      real("sim.noise_sigma", M(sim.noise_sigma)),
      real("sim.dropout", M(sim.dropout)),
      real("sim.surface_spacing", M(sim.surface_spacing)),
      real("sim.range_scale", M(sim.range_scale)),
      real("sim.density_scale", M(sim.density_scale)),
      real("sim.noise_scale", M(sim.noise_scale)),
      real("sim.clutter_rate", M(sim.clutter_rate)),
      {"sim.shift", [](RunConfig& c, const std::string& v) { c.shift = parse_shift_preset(v); },
       [](const RunConfig& c) { return std::string(to_string(c.shift)); }},

      real("features.neighborhood_radius", M(extractor.neighborhood_radius)),
      real("features.gem_p", M(extractor.gem_p)),
      real("features.local_norm_cap", M(extractor.local_norm_cap)),

      count("pretrain.epochs", M(pretrain_epochs)),
      real("pretrain.learning_rate", M(pretrain_lr)),
      count("pretrain.batch_size", M(pretrain_batch)),
      count("pretrain.negatives_per_anchor", M(pretrain_negatives)),
      real("pretrain.local_weight", M(local_weight)),
      real("pretrain.correspondence_max_dist", M(correspondence_max_dist)),
      count("pretrain.correspondences_per_pair", M(correspondences_per_pair)),
      flag("pretrain.augment", M(augment)),
      real("pretrain.jitter", M(jitter)),
      real("triplet.margin", M(triplet.margin)),
      real("contrastive.positive_margin", M(contrastive.positive_margin)),
      real("contrastive.negative_margin", M(contrastive.negative_margin)),
      real("contrastive.negative_weight", M(contrastive.negative_weight)),
      count("contrastive.mining_subset_size", M(contrastive.mining_subset_size)),
      real("labeling.t_pos", M(labeling.t_pos)),
      real("labeling.t_neg", M(labeling.t_neg)),

      count("gcc.epochs", M(gcc_epochs)),
      real("gcc.learning_rate", M(gcc_lr)),
      count("gcc.batch_size", M(gcc_batch)),
      real("gcc.momentum", M(gcc_momentum)),
      count("gcc.pairs_per_class", M(gcc_pairs_per_class)),
      real("gcc.hard_negative_fraction", M(gcc_hard_negative_fraction)),
      real("gcc.subsample_min", M(gcc_subsample_min)),
      count("gcc.correspondence_cap", M(proposal.cap)),
      flag("gcc.mutual", M(proposal.mutual)),
      real("gcc.d_thr", M(consistency.d_thr)),
      count("gcc.input_length", M(consistency.input_length)),
      real("gcc.tolerance", M(consistency.tolerance)),
      count("gcc.max_iterations", M(consistency.max_iterations)),
      flag("gcc.sort", M(consistency.sort)),
      flag("gcc.scale", M(consistency.scale)),

      real("pseudo.alpha_pos", M(pseudo.alpha_pos)),
      real("pseudo.alpha_neg", M(pseudo.alpha_neg)),
      count("pseudo.k", M(pseudo.k)),
      count("pseudo.temporal_exclusion_window", M(pseudo.temporal_exclusion_window)),

      count("retrain.epochs", M(retrain_epochs)),
      real("retrain.learning_rate", M(retrain_lr)),
      count("retrain.batch_size", M(retrain_batch)),

      real("eval.revisit_threshold", M(eval.revisit_threshold)),
      {"eval.recall_ns",
       [](RunConfig& c, const std::string& v) {
         std::vector<RecallN> ns;
         std::stringstream ss(v);
         std::string item;
         while (std::getline(ss, item, ',')) ns.push_back(RecallN::parse(trim(item)));
         if (ns.empty()) throw ConfigError("eval.recall_ns needs at least one entry");
         c.eval.recall_ns = std::move(ns);
       },
       [](const RunConfig& c) {
         std::string s;
         for (const auto& n : c.eval.recall_ns) s += (s.empty() ? "" : ",") + n.label();
         return s;
       }},
  };
  return table;
}

#undef M

const Entry* find_entry(const std::string& key) {
  for (const auto& e : entries())
    if (e.key == key) return &e;
  return nullptr;
}

}  // namespace

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& e : entries()) keys.push_back(e.key);
  return keys;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const Entry* e = find_entry(key);
  if (!e) {
    std::string nearest;
    std::size_t best = std::numeric_limits<std::size_t>::max();
    for (const auto& k : config_keys()) {
      const std::size_t d = edit_distance(key, k);
      if (d < best) {
        best = d;
        nearest = k;
      }
    }
    throw ConfigError("unknown config key '" + key + "' (nearest valid key: '" + nearest + "')");
  }
  e->set(cfg, value);
}

void RunConfig::validate() const {
  sim.validate();
  if (!(epoch_scale >= 0)) throw ConfigError("epoch_scale must be non-negative");
  if (!(extractor.neighborhood_radius > 0)) throw ConfigError("features.neighborhood_radius must be positive");
  if (!(extractor.gem_p >= 1)) throw ConfigError("features.gem_p must be >= 1");
  if (!(triplet.margin > 0)) throw ConfigError("triplet.margin must be positive");
  if (pretrain_batch == 0 || retrain_batch == 0 || gcc_batch == 0) throw ConfigError("batch sizes must be positive");
  if (contrastive.mining_subset_size == 0) throw ConfigError("contrastive.mining_subset_size must be positive");
  if (proposal.cap == 0) throw ConfigError("gcc.correspondence_cap must be positive");
  if (!(gcc_hard_negative_fraction >= 0 && gcc_hard_negative_fraction <= 1))
    throw ConfigError("gcc.hard_negative_fraction must lie in [0, 1]");
  if (!(gcc_subsample_min > 0 && gcc_subsample_min <= 1)) throw ConfigError("gcc.subsample_min must lie in (0, 1]");
  if (!(eval.revisit_threshold > 0)) throw ConfigError("eval.revisit_threshold must be positive");
  labeling.validate();
  consistency.validate();
  pseudo.validate();
}

std::size_t RunConfig::scaled_pretrain_epochs() const {
  return static_cast<std::size_t>(std::llround(epoch_scale * static_cast<double>(pretrain_epochs)));
}

PretrainConfig RunConfig::pretrain_config(std::size_t steps_per_epoch) const {
  PretrainConfig p;
  p.optim = pretrain_schedule(scaled_pretrain_epochs(), steps_per_epoch);
  p.optim.learning_rate = pretrain_lr;
  p.triplet = triplet;
  p.contrastive = contrastive;
  p.labeling = labeling;
  p.local_weight = local_weight;
  p.batch_size = pretrain_batch;
  p.negatives_per_anchor = pretrain_negatives;
  p.correspondence_max_dist = correspondence_max_dist;
  p.correspondences_per_pair = correspondences_per_pair;
  p.augment = augment;
  p.jitter = jitter;
  p.seed = seed ^ 0xa11ceULL;
  return p;
}

GccStageConfig RunConfig::gcc_config() const {
  GccStageConfig g;
  g.train.optim.learning_rate = gcc_lr;
  g.train.optim.epochs = gcc_epochs;
  g.train.optim.kind = tinynet::OptimizerKind::sgd;
  g.train.optim.momentum = gcc_momentum;
  g.train.batch_size = gcc_batch;
  g.train.seed = seed ^ 0xb0bULL;
  g.labeling = labeling;
  g.proposal = proposal;
  g.consistency = consistency;
  g.pairs_per_class = gcc_pairs_per_class;
  g.hard_negative_fraction = gcc_hard_negative_fraction;
  g.subsample_min = gcc_subsample_min;
  g.seed = seed ^ 0xcafeULL;
  return g;
}

RetrainConfig RunConfig::retrain_config(std::size_t steps_per_epoch) const {
  RetrainConfig r;
  r.optim = retrain_schedule(retrain_epochs, steps_per_epoch);
  r.optim.learning_rate = retrain_lr;
  r.triplet = triplet;
  r.batch_size = retrain_batch;
  r.seed = seed ^ 0xd00dULL;
  return r;
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::stringstream ss(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(ss, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(number) + ": expected 'key = value'");
    set_config_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str());
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& e : entries()) out += e.key + " = " + e.get(cfg) + "\n";
  return out;
}

}  // namespace geoadapt
