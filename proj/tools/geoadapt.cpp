// geoadapt: batch entry point for every pipeline stage.
#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "geoadapt/adapt.hpp"
#include "geoadapt/config.hpp"
#include "geoadapt/error.hpp"
#include "geoadapt/evalbench.hpp"
#include "geoadapt/gcc.hpp"
#include "geoadapt/parallel.hpp"
#include "geoadapt/pipeline.hpp"
#include "geoadapt/pseudolabel.hpp"
#include "geoadapt/simulator.hpp"

namespace fs = std::filesystem;
using namespace geoadapt;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string out;
};

void add_common(CLI::App* app, Common& c, bool out_required = true) {
  app->add_option("--config", c.config, "key = value configuration file");
  app->add_option("--seed", c.seed, "overrides the configured seed");
  app->add_option("--threads", c.threads, "worker threads (fallback: GEOADAPT_THREADS)");
  auto* o = app->add_option("--out", c.out, "output path");
  if (out_required) o->required();
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (c.threads) cfg.threads = *c.threads;
  cfg.validate();
  if (cfg.threads > 0) set_thread_count(cfg.threads);
  std::cout << "# resolved configuration (threads in use: " << thread_count() << ")\n";
  std::istringstream ss(to_text(cfg));
  for (std::string line; std::getline(ss, line);) std::cout << "# " << line << "\n";
  return cfg;
}

/// Accepts a dataset directory or its index.txt.
DatasetManifest manifest_at(const std::string& p) {
  fs::path path(p);
  if (fs::is_directory(path)) path /= "index.txt";
  if (!fs::exists(path)) throw DataError("dataset not found: " + p);
  return read_manifest(path);
}

void require_file(const std::string& p, const char* what) {
  if (!fs::exists(p)) throw DataError(std::string(what) + " not found: " + p);
}

fs::path sibling_log(const fs::path& out) {
  return (out.has_parent_path() ? out.parent_path() : fs::path(".")) / "run.log";
}

void print_report(const StageReport& r) {
  std::cout << r.stage << ": " << r.epochs << " epochs, loss " << r.initial_loss << " -> " << r.final_loss << ", "
            << r.wall_seconds << " s\n";
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void write_evaluation(const fs::path& dir, const Evaluation& ev) {
  fs::create_directories(dir);
  write_recall_table(dir / "recall.txt", ev.recall);
  write_pr_curve(dir / "pr_curve.txt", ev.pr);
  write_histogram(dir / "positive_distances.txt", "positive", ev.separability.positive);
  write_histogram(dir / "negative_distances.txt", "negative", ev.separability.negative);
  for (const auto& [label, pct] : ev.recall.recall) std::cout << "R@" << label << " = " << pct << "\n";
  std::cout << "PR-AUC = " << ev.pr.auc << "\n";
}

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::config: return 2;
    case ErrorCategory::data: return 3;
    case ErrorCategory::numeric: return 4;
    case ErrorCategory::starvation: return 5;
    case ErrorCategory::validation: return 6;
    case ErrorCategory::state: return 7;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LiDAR place recognition with pseudo-label test-time adaptation"};
  app.require_subcommand(1);

  Common c;
  std::string source, target, checkpoint, scorer_path, tuples_path, dataset, axis, grid, domain = "both";

  auto* sim = app.add_subcommand("simulate", "generate source and shifted target datasets");
  add_common(sim, c);
  sim->add_option("--domain", domain, "source, target or both")->check(CLI::IsMember({"source", "target", "both"}));

  auto* pre = app.add_subcommand("pretrain", "stage A: train the extractor on the labelled source");
  add_common(pre, c);
  pre->add_option("--source", source)->required();

  auto* gcc = app.add_subcommand("train-gcc", "stage B: train the geometric consistency classifier");
  add_common(gcc, c);
  gcc->add_option("--source", source)->required();
  gcc->add_option("--checkpoint", checkpoint, "extractor checkpoint")->required();

  auto* pl = app.add_subcommand("pseudolabel", "stage C: label target candidates (writes tuples.txt, audit.txt)");
  add_common(pl, c);
  pl->add_option("--target", target)->required();
  pl->add_option("--checkpoint", checkpoint)->required();
  pl->add_option("--scorer", scorer_path)->required();

  auto* ad = app.add_subcommand("adapt", "stage D: retrain on pseudo-labelled tuples");
  add_common(ad, c);
  ad->add_option("--target", target)->required();
  ad->add_option("--checkpoint", checkpoint)->required();
  ad->add_option("--tuples", tuples_path)->required();

  auto* ev = app.add_subcommand("evaluate", "recall, PR curve and distance histograms");
  add_common(ev, c);
  ev->add_option("--dataset", dataset, "dataset with query and database splits")->required();
  ev->add_option("--checkpoint", checkpoint)->required();

  auto* ab = app.add_subcommand("ablate", "sweep one normalization or threshold axis");
  add_common(ab, c);
  ab->add_option("--source", source)->required();
  ab->add_option("--target", target)->required();
  ab->add_option("--checkpoint", checkpoint, "source extractor checkpoint")->required();
  ab->add_option("--axis", axis)->required()->check(CLI::IsMember({"sort", "scale", "alpha_pos", "alpha_neg"}));
  ab->add_option("--grid", grid, "comma-separated values")->required();

  auto* run = app.add_subcommand("run", "stages A-D with resumable artifacts, then evaluation");
  add_common(run, c);
  run->add_option("--source", source)->required();
  run->add_option("--target", target)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const RunConfig cfg = resolve(c);
    const fs::path out(c.out);

    if (sim->parsed()) {
      SimWorldConfig sc = cfg.sim;
      sc.seed = cfg.seed;
      if (domain != "target") {
        write_manifest(out / "source", simulate_world(sc));
        std::cout << "wrote " << (out / "source").string() << "\n";
      }
      if (domain != "source") {
        write_manifest(out / "target", simulate_world(shift_domain(sc, cfg.shift)));
        std::cout << "wrote " << (out / "target").string() << "\n";
      }
    } else if (pre->parsed()) {
      std::vector<Pose> poses;
      const ScanSet scans = load_split(manifest_at(source), Split::train, cfg.extractor.neighborhood_radius, &poses);
      FeatureExtractor fx(cfg.extractor, cfg.seed);
      const std::size_t spe = (scans.size() + cfg.pretrain_batch - 1) / cfg.pretrain_batch;
      StageReport r = pretrain_source(fx, scans, poses, cfg.pretrain_config(spe));
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      write_extractor(out, fx, checkpoint_metadata(cfg, "pretrain"));
      r.checkpoint = out.string();
      append_run_log(sibling_log(out), r);
      print_report(r);
    } else if (gcc->parsed()) {
      require_file(checkpoint, "checkpoint");
      const FeatureExtractor fx = read_extractor(checkpoint, cfg.extractor);
      std::vector<Pose> poses;
      const ScanSet scans = load_split(manifest_at(source), Split::train, cfg.extractor.neighborhood_radius, &poses);
      const auto pairs = gather_source_pairs(fx, feature_bank(fx, scans), poses, cfg.gcc_config());
      StageBResult b = run_stage_b(pairs, cfg);
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      write_scorer(out, b.scorer, checkpoint_metadata(cfg, "train_gcc"));
      b.report.checkpoint = out.string();
      append_run_log(sibling_log(out), b.report);
      print_report(b.report);
      std::cout << "held-out accuracy " << b.holdout_accuracy << ", AUC " << b.holdout_auc << "\n";
    } else if (pl->parsed()) {
      require_file(checkpoint, "checkpoint");
      require_file(scorer_path, "scorer checkpoint");
      const FeatureExtractor fx = read_extractor(checkpoint, cfg.extractor);
      const tinynet::Mlp scorer = read_scorer(scorer_path);
      const UnlabeledManifest unlabeled(manifest_at(target).select(Split::train));
      const ScanSet scans = make_scan_set(unlabeled, cfg.extractor.neighborhood_radius);
      const auto evidence = gather_candidate_evidence(feature_bank(fx, scans), cfg.pseudo, cfg.proposal, cfg.consistency);
      const auto audit = label_candidates(evidence, scorer, cfg.pseudo, cfg.consistency);
      fs::create_directories(out);
      write_audit(out / "audit.txt", audit, scans.ids);
      const auto tuples = build_tuples(audit);
      write_tuples(out / "tuples.txt", tuples, scans.ids);
      std::cout << tuples.size() << " training tuples from " << audit.size() << " labelled candidates\n";
    } else if (ad->parsed()) {
      require_file(checkpoint, "checkpoint");
      require_file(tuples_path, "tuples file");
      FeatureExtractor fx = read_extractor(checkpoint, cfg.extractor);
      const UnlabeledManifest unlabeled(manifest_at(target).select(Split::train));
      const ScanSet scans = make_scan_set(unlabeled, cfg.extractor.neighborhood_radius);
      const auto tuples = read_tuples(tuples_path, scans.ids);
      const std::size_t spe = (tuples.size() + cfg.retrain_batch - 1) / cfg.retrain_batch;
      StageReport r = retrain_target(fx, tuples, scans, cfg.retrain_config(spe));
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      write_extractor(out, fx, checkpoint_metadata(cfg, "retrain"));
      r.checkpoint = out.string();
      append_run_log(sibling_log(out), r);
      print_report(r);
    } else if (ev->parsed()) {
      require_file(checkpoint, "checkpoint");
      const FeatureExtractor fx = read_extractor(checkpoint, cfg.extractor);
      const EvalSets sets = load_eval_sets(manifest_at(dataset), cfg.extractor.neighborhood_radius);
      write_evaluation(out, evaluate(fx, sets, cfg));
    } else if (ab->parsed()) {
      require_file(checkpoint, "checkpoint");
      const FeatureExtractor fx = read_extractor(checkpoint, cfg.extractor);
      const AblationContext ctx = make_ablation_context(fx, manifest_at(source), manifest_at(target), cfg);
      const auto rows = ablation_sweep(ctx, parse_ablation_axis(axis), split_list(grid), cfg);
      std::istringstream ss(to_text(cfg));
      std::string header;
      for (std::string line; std::getline(ss, line);) header += "# " + line + "\n";
      write_ablation_table(out, rows, header);
      for (const auto& r : rows)
        std::cout << r.axis << "=" << r.value << ": R@1 " << r.recall_1 << ", held-out AUC " << r.holdout_auc << ", "
                  << r.status << "\n";
    } else if (run->parsed()) {
      const DatasetManifest tgt = manifest_at(target);
      const PipelineResult res = run_pipeline(manifest_at(source), tgt, cfg, out);
      for (const auto& r : res.reports) print_report(r);
      write_evaluation(out / "metrics", evaluate(read_extractor(res.final_checkpoint, cfg.extractor),
                                                 load_eval_sets(tgt, cfg.extractor.neighborhood_radius), cfg));
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.category()) << "): " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
