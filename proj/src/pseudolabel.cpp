#include "geoadapt/pseudolabel.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "geoadapt/error.hpp"
#include "geoadapt/parallel.hpp"

namespace geoadapt {

void PseudoLabelConfig::validate() const {
  if (!(alpha_neg >= 0.0f && alpha_neg < alpha_pos && alpha_pos <= 1.0f))
    throw ConfigError("pseudo-label thresholds need 0 <= alpha_neg < alpha_pos <= 1");
  if (k == 0) throw ConfigError("candidate count K must be at least 1");
}

const char* to_string(Decision d) {
  switch (d) {
    case Decision::positive: return "positive";
    case Decision::negative: return "negative";
    case Decision::neither: return "neither";
  }
  return "neither";
}

Decision parse_decision(const std::string& s) {
  if (s == "positive") return Decision::positive;
  if (s == "negative") return Decision::negative;
  if (s == "neither") return Decision::neither;
  throw DataError("unknown decision '" + s + "'");
}

std::vector<Neighbor> retrieve_candidates(std::size_t anchor_index, const Eigen::VectorXf& anchor,
                                          const std::vector<Eigen::VectorXf>& database, const PseudoLabelConfig& cfg) {
  const std::size_t w = cfg.temporal_exclusion_window;
  auto excluded = [&](std::size_t j) { return (j > anchor_index ? j - anchor_index : anchor_index - j) <= w; };
  std::vector<Neighbor> all;
  all.reserve(database.size());
  for (std::size_t j = 0; j < database.size(); ++j) {
    if (excluded(j)) continue;
    if (database[j].size() != anchor.size()) throw ValidationError("descriptor dimensions differ");
    double d2 = 0.0;
    for (Eigen::Index t = 0; t < anchor.size(); ++t) {
      const double diff = static_cast<double>(anchor(t)) - static_cast<double>(database[j](t));
      d2 += diff * diff;
    }
    all.push_back({j, d2});
  }
  if (all.size() < cfg.k)
    throw ValidationError("database too small: " + std::to_string(all.size()) + " eligible candidates for K = " +
                          std::to_string(cfg.k));
  auto less = [](const Neighbor& x, const Neighbor& y) {
    return x.distance < y.distance || (x.distance == y.distance && x.index < y.index);
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(cfg.k), all.end(), less);
  all.resize(cfg.k);
  for (auto& n : all) n.distance = std::sqrt(n.distance);
  return all;
}

Decision label_pair(float beta, const PseudoLabelConfig& cfg) {
  if (beta >= cfg.alpha_pos) return Decision::positive;
  if (beta <= cfg.alpha_neg) return Decision::negative;
  return Decision::neither;
}

std::vector<TrainingTuple> build_tuples(const std::vector<PseudoLabel>& labels) {
  if (labels.empty()) throw StarvationError("pseudo-label starvation: no labels to build tuples from");
  std::vector<TrainingTuple> tuples;
  std::map<std::size_t, std::size_t> slot;
  for (const auto& l : labels) {
    if (l.decision == Decision::neither || l.candidate == l.anchor) continue;
    auto [it, fresh] = slot.try_emplace(l.anchor, tuples.size());
    if (fresh) tuples.push_back({l.anchor, {}, {}});
    auto& t = tuples[it->second];
    auto& list = l.decision == Decision::positive ? t.positives : t.negatives;
    if (std::find(list.begin(), list.end(), l.candidate) == list.end()) list.push_back(l.candidate);
  }
  std::erase_if(tuples, [](const TrainingTuple& t) { return t.positives.empty() || t.negatives.empty(); });
  if (tuples.empty()) {
    std::size_t pos = 0, neg = 0;
    for (const auto& l : labels) {
      pos += l.decision == Decision::positive;
      neg += l.decision == Decision::negative;
    }
    throw StarvationError("pseudo-label starvation: no anchor has both a positive and a negative (" +
                          std::to_string(pos) + " positives, " + std::to_string(neg) + " negatives over " +
                          std::to_string(labels.size()) + " pairs)");
  }
  return tuples;
}

std::vector<Eigen::VectorXf> FeatureBank::globals() const {
  std::vector<Eigen::VectorXf> g;
  g.reserve(features.size());
  for (const auto& f : features) g.push_back(f.global);
  return g;
}

FeatureBank extract_bank(const FeatureExtractor& extractor, const std::vector<PointCloud>& clouds) {
  FeatureBank bank;
  bank.clouds = clouds;
  bank.features.resize(clouds.size());
  parallel_for(clouds.size(), [&](std::size_t i) { bank.features[i] = extractor.extract(clouds[i]); });
  return bank;
}

std::vector<PointCloud> load_clouds(const UnlabeledManifest& manifest) {
  std::vector<PointCloud> clouds(manifest.size());
  parallel_for(manifest.size(), [&](std::size_t i) { clouds[i] = manifest.load(i); });
  return clouds;
}

std::vector<CandidateEvidence> gather_candidate_evidence(const FeatureBank& bank, const PseudoLabelConfig& cfg,
                                                         const ProposalConfig& proposal,
                                                         const ConsistencyConfig& consistency) {
  cfg.validate();
  consistency.validate();
  const auto globals = bank.globals();
  std::vector<std::vector<CandidateEvidence>> per_anchor(bank.size());
  parallel_for(bank.size(), [&](std::size_t a) {
    for (const auto& n : retrieve_candidates(a, globals[a], globals, cfg)) {
      CandidateEvidence ce;
      ce.anchor = a;
      ce.candidate = n.index;
      ce.l2_distance = n.distance;
      ce.evidence = pair_evidence(bank.features[a].local, bank.features[n.index].local, bank.clouds[a],
                                  bank.clouds[n.index], proposal, consistency);
      per_anchor[a].push_back(std::move(ce));
    }
  });
  std::vector<CandidateEvidence> out;
  out.reserve(bank.size() * cfg.k);
  for (auto& v : per_anchor)
    for (auto& ce : v) out.push_back(std::move(ce));
  return out;
}

std::vector<PseudoLabel> label_candidates(const std::vector<CandidateEvidence>& evidence, const tinynet::Mlp& scorer,
                                          const PseudoLabelConfig& cfg, const ConsistencyConfig& consistency) {
  cfg.validate();
  std::vector<PseudoLabel> labels(evidence.size());
  parallel_for(evidence.size(), [&](std::size_t i) {
    const auto& ce = evidence[i];
    const PairScore s = score_pair(scorer, ce.evidence, consistency);
    labels[i] = {ce.anchor, ce.candidate, ce.l2_distance, s.beta, s.degenerate, label_pair(s.beta, cfg)};
  });
  return labels;
}

PseudoLabelResult pseudo_label_dataset(const FeatureExtractor& extractor, const tinynet::Mlp& scorer,
                                       const UnlabeledManifest& target, const PseudoLabelConfig& cfg,
                                       const ProposalConfig& proposal, const ConsistencyConfig& consistency) {
  const FeatureBank bank = extract_bank(extractor, load_clouds(target));
  PseudoLabelResult r;
  r.audit = label_candidates(gather_candidate_evidence(bank, cfg, proposal, consistency), scorer, cfg, consistency);
  r.tuples = build_tuples(r.audit);
  return r;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  return os;
}

}  // namespace

void write_audit(const std::filesystem::path& path, const std::vector<PseudoLabel>& audit,
                 const std::vector<std::string>& ids) {
  std::ofstream os = open_out(path);
  os << std::setprecision(9);
  for (const auto& l : audit)
    os << ids.at(l.anchor) << ", " << ids.at(l.candidate) << ", " << l.l2_distance << ", " << l.beta << ", "
       << to_string(l.decision) << '\n';
}

void write_tuples(const std::filesystem::path& path, const std::vector<TrainingTuple>& tuples,
                  const std::vector<std::string>& ids) {
  std::ofstream os = open_out(path);
  for (const auto& t : tuples) {
    os << ids.at(t.anchor) << " |";
    for (auto p : t.positives) os << ' ' << ids.at(p);
    os << " |";
    for (auto n : t.negatives) os << ' ' << ids.at(n);
    os << '\n';
  }
}

std::vector<TrainingTuple> read_tuples(const std::filesystem::path& path, const std::vector<std::string>& ids) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read tuples file " + path.string());
  std::map<std::string, std::size_t> lookup;
  for (std::size_t i = 0; i < ids.size(); ++i) lookup[ids[i]] = i;
  auto resolve = [&](const std::string& id, std::size_t line) {
    auto it = lookup.find(id);
    if (it == lookup.end()) throw ParseError("unknown scan id '" + id + "' in " + path.string(), line);
    return it->second;
  };
  std::vector<TrainingTuple> tuples;
  std::string text;
  std::size_t line = 0;
  while (std::getline(is, text)) {
    ++line;
    const auto first = text.find_first_not_of(" \t\r");
    if (first == std::string::npos || text[first] == '#') continue;
    std::vector<std::string> parts;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, '|')) parts.push_back(part);
    if (parts.size() != 3) throw ParseError("tuple line needs 'anchor | positives | negatives'", line);
    TrainingTuple t;
    std::stringstream anchor(parts[0]);
    std::string id;
    if (!(anchor >> id)) throw ParseError("tuple line without an anchor id", line);
    t.anchor = resolve(id, line);
    std::stringstream ps(parts[1]), ns(parts[2]);
    while (ps >> id) t.positives.push_back(resolve(id, line));
    while (ns >> id) t.negatives.push_back(resolve(id, line));
    if (t.positives.empty() || t.negatives.empty()) throw ParseError("tuple needs a positive and a negative", line);
    tuples.push_back(std::move(t));
  }
  return tuples;
}

}  // namespace geoadapt
