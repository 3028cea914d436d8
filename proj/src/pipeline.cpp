#include "geoadapt/pipeline.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include "geoadapt/error.hpp"
#include "geoadapt/tinynet/checkpoint.hpp"

namespace geoadapt {

ScanSet load_split(const DatasetManifest& manifest, Split split, float radius, std::vector<Pose>* poses) {
  const DatasetManifest sub = manifest.select(split);
  if (poses) {
    if (!sub.has_poses()) throw DataError(std::string("split '") + to_string(split) + "' has no poses");
    *poses = sub.poses();
  }
  return make_scan_set(UnlabeledManifest(sub), radius);
}

EvalSets load_eval_sets(const DatasetManifest& manifest, float radius) {
  EvalSets e;
  e.query = load_split(manifest, Split::query, radius, &e.query_poses);
  e.database = load_split(manifest, Split::database, radius, &e.database_poses);
  return e;
}

Evaluation evaluate(const FeatureExtractor& extractor, const EvalSets& sets, const RunConfig& cfg) {
  const DescriptorSet q{sets.query.ids, global_descriptors(extractor, sets.query), sets.query_poses};
  const DescriptorSet d{sets.database.ids, global_descriptors(extractor, sets.database), sets.database_poses};
  Evaluation ev;
  ev.recall = recall_at_n(q, d, cfg.eval);
  ev.pr = pr_curve(q, d, cfg.eval);
  std::vector<double> pos, neg;
  labelled_pair_distances(d, cfg.labeling.t_pos, cfg.labeling.t_neg, pos, neg);
  ev.separability = separability_histogram(pos, neg);
  return ev;
}

StageBResult run_stage_b(const std::vector<LabeledPair>& pairs, const RunConfig& cfg) {
  const GccStageConfig gc = cfg.gcc_config();
  std::vector<LabeledPair> train, held;
  for (const auto& p : pairs) (p.held_out ? held : train).push_back(p);
  StageBResult r;
  r.scorer = make_scorer(gc.consistency.input_length);
  r.scorer.init_glorot(cfg.seed ^ 0x5c0eULL);
  r.report = train_gcc_stage(r.scorer, train, gc);
  std::vector<double> scores;
  std::vector<int> labels;
  std::size_t correct = 0;
  for (const auto& p : held) {
    const PairScore s = score_pair(r.scorer, p.evidence, gc.consistency);
    scores.push_back(s.beta);
    labels.push_back(p.label);
    correct += (s.beta >= 0.5f) == (p.label == 1);
  }
  if (!held.empty()) {
    r.holdout_accuracy = static_cast<double>(correct) / static_cast<double>(held.size());
    const bool both = std::count(labels.begin(), labels.end(), 1) > 0 && std::count(labels.begin(), labels.end(), 0) > 0;
    if (both) r.holdout_auc = roc_auc(scores, labels);
  }
  return r;
}

std::vector<PseudoLabel> ground_truth_labels(const std::vector<CandidateEvidence>& evidence,
                                             const std::vector<Pose>& poses, const LabelingConfig& cfg) {
  std::vector<PseudoLabel> out;
  out.reserve(evidence.size());
  for (const auto& ce : evidence) {
    PseudoLabel l;
    l.anchor = ce.anchor;
    l.candidate = ce.candidate;
    l.l2_distance = ce.l2_distance;
    switch (source_label(poses.at(ce.anchor), poses.at(ce.candidate), cfg)) {
      case AssociationLabel::positive: l.decision = Decision::positive; l.beta = 1.0f; break;
      case AssociationLabel::negative: l.decision = Decision::negative; l.beta = 0.0f; break;
      case AssociationLabel::neither: l.decision = Decision::neither; l.beta = 0.5f; break;
    }
    out.push_back(l);
  }
  return out;
}

std::string checkpoint_metadata(const RunConfig& cfg, const std::string& stage) {
  return "stage = " + stage + "\n" + to_text(cfg);
}

void write_extractor(const std::filesystem::path& path, const FeatureExtractor& fx, const std::string& metadata) {
  tinynet::write_checkpoint(path, fx.to_checkpoint(metadata));
}

FeatureExtractor read_extractor(const std::filesystem::path& path, const ExtractorConfig& cfg) {
  return FeatureExtractor::from_checkpoint(tinynet::read_checkpoint(path), cfg);
}

void write_scorer(const std::filesystem::path& path, const tinynet::Mlp& scorer, const std::string& metadata) {
  tinynet::Checkpoint c;
  c.metadata = metadata;
  c.set("gcc_scorer", scorer);
  tinynet::write_checkpoint(path, c);
}

tinynet::Mlp read_scorer(const std::filesystem::path& path) { return tinynet::read_checkpoint(path).section("gcc_scorer"); }

namespace {

bool checkpoint_matches(const std::filesystem::path& path, const std::string& metadata) {
  if (!std::filesystem::exists(path)) return false;
  try {
    return tinynet::read_checkpoint(path).metadata == metadata;
  } catch (const ParseError&) {
    return false;
  }
}

std::string commented(const std::string& text) {
  std::string out;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) out += "# " + line + "\n";
  return out;
}

bool text_header_matches(const std::filesystem::path& path, const std::string& header) {
  std::ifstream is(path);
  if (!is) return false;
  std::string got(header.size(), '\0');
  is.read(got.data(), static_cast<std::streamsize>(header.size()));
  return is && got == header;
}

/// Prepends a commented header to a freshly written text artifact.
void prepend_header(const std::filesystem::path& path, const std::string& header) {
  std::stringstream body;
  {
    std::ifstream is(path);
    body << is.rdbuf();
  }
  std::ofstream os(path, std::ios::trunc);
  os << header << body.str();
  if (!os) throw DataError("cannot write " + path.string());
}

template <class F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    // Same category, message prefixed with the stage.
    switch (e.category()) {
      case ErrorCategory::config: throw ConfigError(std::string(name) + ": " + e.what());
      case ErrorCategory::data: throw DataError(std::string(name) + ": " + e.what());
      case ErrorCategory::numeric: throw NumericError(std::string(name) + ": " + e.what());
      case ErrorCategory::starvation: throw StarvationError(std::string(name) + ": " + e.what());
      case ErrorCategory::validation: throw ValidationError(std::string(name) + ": " + e.what());
      case ErrorCategory::state: throw StateError(std::string(name) + ": " + e.what());
    }
    throw;
  }
}

}  // namespace

PipelineResult run_pipeline(const DatasetManifest& source, const DatasetManifest& target, const RunConfig& cfg,
                            const std::filesystem::path& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  const auto log = out_dir / "run.log";
  const float radius = cfg.extractor.neighborhood_radius;
  PipelineResult result;

  const auto a_path = out_dir / "stage_a_extractor.ckpt";
  const auto b_path = out_dir / "stage_b_scorer.ckpt";
  const auto tuples_path = out_dir / "stage_c_tuples.txt";
  const auto audit_path = out_dir / "stage_c_audit.txt";
  const auto d_path = out_dir / "stage_d_extractor.ckpt";

  // Source data is only needed when stage A or B has to run.
  std::vector<Pose> source_poses;
  ScanSet source_train;
  bool source_loaded = false;
  auto need_source = [&] {
    if (source_loaded) return;
    source_train = load_split(source, Split::train, radius, &source_poses);
    source_loaded = true;
  };

  FeatureExtractor fx;
  const std::string a_meta = checkpoint_metadata(cfg, "pretrain");
  if (checkpoint_matches(a_path, a_meta)) {
    fx = read_extractor(a_path, cfg.extractor);
  } else {
    stage("pretrain", [&] {
      need_source();
      fx = FeatureExtractor(cfg.extractor, cfg.seed);
      const std::size_t spe = (source_train.size() + cfg.pretrain_batch - 1) / cfg.pretrain_batch;
      StageReport r = pretrain_source(fx, source_train, source_poses, cfg.pretrain_config(spe));
      write_extractor(a_path, fx, a_meta);
      r.checkpoint = a_path.string();
      append_run_log(log, r);
      result.reports.push_back(r);
      return 0;
    });
  }

  tinynet::Mlp scorer;
  const std::string b_meta = checkpoint_metadata(cfg, "train_gcc");
  if (checkpoint_matches(b_path, b_meta)) {
    scorer = read_scorer(b_path);
  } else {
    stage("train_gcc", [&] {
      need_source();
      const auto pairs = gather_source_pairs(fx, feature_bank(fx, source_train), source_poses, cfg.gcc_config());
      StageBResult b = run_stage_b(pairs, cfg);
      scorer = b.scorer;
      write_scorer(b_path, scorer, b_meta);
      b.report.checkpoint = b_path.string();
      append_run_log(log, b.report);
      result.reports.push_back(b.report);
      return 0;
    });
  }

  // From here on the target is pose-free.
  const UnlabeledManifest target_train(target.select(Split::train));
  const ScanSet target_scans = make_scan_set(target_train, radius);
  result.target_ids = target_scans.ids;

  const std::string c_header = commented(checkpoint_metadata(cfg, "pseudolabel"));
  if (text_header_matches(tuples_path, c_header) && text_header_matches(audit_path, c_header)) {
    result.tuples = read_tuples(tuples_path, target_scans.ids);
  } else {
    stage("pseudolabel", [&] {
      const auto t0 = std::chrono::steady_clock::now();
      const auto evidence = gather_candidate_evidence(feature_bank(fx, target_scans), cfg.pseudo, cfg.proposal,
                                                      cfg.consistency);
      result.audit = label_candidates(evidence, scorer, cfg.pseudo, cfg.consistency);
      write_audit(audit_path, result.audit, target_scans.ids);
      prepend_header(audit_path, c_header);
      result.tuples = build_tuples(result.audit);
      write_tuples(tuples_path, result.tuples, target_scans.ids);
      prepend_header(tuples_path, c_header);
      StageReport r;
      r.stage = "pseudolabel";
      r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      r.checkpoint = tuples_path.string();
      append_run_log(log, r);
      result.reports.push_back(r);
      return 0;
    });
  }

  const std::string d_meta = checkpoint_metadata(cfg, "retrain");
  if (!checkpoint_matches(d_path, d_meta)) {
    stage("retrain", [&] {
      FeatureExtractor adapted = fx;
      const std::size_t spe = (result.tuples.size() + cfg.retrain_batch - 1) / cfg.retrain_batch;
      StageReport r = retrain_target(adapted, result.tuples, target_scans, cfg.retrain_config(spe));
      write_extractor(d_path, adapted, d_meta);
      r.checkpoint = d_path.string();
      append_run_log(log, r);
      result.reports.push_back(r);
      return 0;
    });
  }
  result.final_checkpoint = d_path;
  return result;
}

// ---------------------------------------------------------------- ablation

AblationAxis parse_ablation_axis(const std::string& s) {
  if (s == "sort") return AblationAxis::sort;
  if (s == "scale") return AblationAxis::scale;
  if (s == "alpha_pos") return AblationAxis::alpha_pos;
  if (s == "alpha_neg") return AblationAxis::alpha_neg;
  throw ConfigError("unknown ablation axis '" + s + "' (expected sort, scale, alpha_pos or alpha_neg)");
}

const char* to_string(AblationAxis a) {
  switch (a) {
    case AblationAxis::sort: return "sort";
    case AblationAxis::scale: return "scale";
    case AblationAxis::alpha_pos: return "alpha_pos";
    case AblationAxis::alpha_neg: return "alpha_neg";
  }
  return "sort";
}

AblationContext make_ablation_context(const FeatureExtractor& source_model, const DatasetManifest& source,
                                      const DatasetManifest& target, const RunConfig& cfg) {
  const float radius = cfg.extractor.neighborhood_radius;
  AblationContext ctx;
  ctx.source_model = source_model;
  std::vector<Pose> source_poses;
  const ScanSet source_train = load_split(source, Split::train, radius, &source_poses);
  ctx.source_pairs = gather_source_pairs(source_model, feature_bank(source_model, source_train), source_poses, cfg.gcc_config());
  ctx.target_train = load_split(target, Split::train, radius, &ctx.target_train_poses);
  ctx.target_evidence = gather_candidate_evidence(feature_bank(source_model, ctx.target_train), cfg.pseudo,
                                                  cfg.proposal, cfg.consistency);
  ctx.target_eval = load_eval_sets(target, radius);
  return ctx;
}

std::vector<AblationRow> ablation_sweep(const AblationContext& ctx, AblationAxis axis,
                                        const std::vector<std::string>& grid, const RunConfig& fixed) {
  std::vector<AblationRow> rows;
  for (const auto& value : grid) {
    AblationRow row;
    row.axis = to_string(axis);
    row.value = value;
    try {
      RunConfig cfg = fixed;
      switch (axis) {
        case AblationAxis::sort: set_config_value(cfg, "gcc.sort", value); break;
        case AblationAxis::scale: set_config_value(cfg, "gcc.scale", value); break;
        case AblationAxis::alpha_pos: set_config_value(cfg, "pseudo.alpha_pos", value); break;
        case AblationAxis::alpha_neg: set_config_value(cfg, "pseudo.alpha_neg", value); break;
      }
      cfg.validate();
      const StageBResult b = run_stage_b(ctx.source_pairs, cfg);
      row.holdout_auc = b.holdout_auc;
      const auto labels = label_candidates(ctx.target_evidence, b.scorer, cfg.pseudo, cfg.consistency);
      {
        std::vector<double> scores;
        std::vector<int> truth;
        for (const auto& l : labels) {
          const auto gt = source_label(ctx.target_train_poses[l.anchor], ctx.target_train_poses[l.candidate], cfg.labeling);
          if (gt == AssociationLabel::neither) continue;
          scores.push_back(l.beta);
          truth.push_back(gt == AssociationLabel::positive);
        }
        if (std::count(truth.begin(), truth.end(), 1) && std::count(truth.begin(), truth.end(), 0))
          row.candidate_auc = roc_auc(scores, truth);
      }
      row.pseudo_precision = pseudo_positive_precision(labels, ctx.target_train_poses, cfg.labeling.t_pos);
      const auto tuples = build_tuples(labels);
      row.tuples = tuples.size();
      FeatureExtractor adapted = ctx.source_model;
      const std::size_t spe = (tuples.size() + cfg.retrain_batch - 1) / cfg.retrain_batch;
      retrain_target(adapted, tuples, ctx.target_train, cfg.retrain_config(spe));
      const Evaluation ev = evaluate(adapted, ctx.target_eval, cfg);
      const auto& rec = ev.recall.recall;
      if (rec.size() > 0) row.recall_1 = rec[0].second;
      if (rec.size() > 1) row.recall_5 = rec[1].second;
      if (rec.size() > 2) row.recall_1pct = rec[2].second;
      row.pr_auc = ev.pr.auc;
    } catch (const std::exception& e) {
      row.status = std::string("failed: ") + e.what();
    }
    rows.push_back(row);
  }
  return rows;
}

void write_ablation_table(const std::filesystem::path& path, const std::vector<AblationRow>& rows,
                          const std::string& header) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << header << std::setprecision(9);
  os << "axis,value,holdout_auc,candidate_auc,pseudo_precision,tuples,recall_1,recall_5,recall_1pct,pr_auc,status\n";
  for (const auto& r : rows) {
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    std::replace(status.begin(), status.end(), '\n', ' ');
    os << r.axis << ',' << r.value << ',' << r.holdout_auc << ',' << r.candidate_auc << ',' << r.pseudo_precision << ','
       << r.tuples << ',' << r.recall_1 << ',' << r.recall_5 << ',' << r.recall_1pct << ',' << r.pr_auc << ',' << status
       << '\n';
  }
}

}  // namespace geoadapt
