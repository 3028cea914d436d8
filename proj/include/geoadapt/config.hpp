#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "geoadapt/adapt.hpp"
#include "geoadapt/evalbench.hpp"
#include "geoadapt/simulator.hpp"

namespace geoadapt {

/// Every hyperparameter of a run. `epoch_scale` shortens pre-training only;
/// re-training is cheap and always runs its full count.
struct RunConfig {
  std::uint64_t seed = 1;
  std::size_t threads = 0;  // 0: GEOADAPT_THREADS or hardware concurrency
  double epoch_scale = 0.25;

  SimWorldConfig sim;
  ShiftPreset shift = ShiftPreset::severe;

  ExtractorConfig extractor;

  std::size_t pretrain_epochs = 80;
  float pretrain_lr = 1e-3f;
  std::size_t pretrain_batch = 8;
  std::size_t pretrain_negatives = 8;
  float local_weight = 1.0f;
  double correspondence_max_dist = 0.15;
  std::size_t correspondences_per_pair = 256;
  bool augment = false;
  float jitter = 0.01f;
  tinynet::TripletConfig triplet;
  tinynet::ContrastiveConfig contrastive;
  LabelingConfig labeling;

  std::size_t gcc_epochs = 5;
  float gcc_lr = 0.01f;
  std::size_t gcc_batch = 8;
  float gcc_momentum = 0.9f;
  std::size_t gcc_pairs_per_class = 600;
  double gcc_hard_negative_fraction = 0.5;
  double gcc_subsample_min = 0.5;
  ProposalConfig proposal;
  ConsistencyConfig consistency;

  PseudoLabelConfig pseudo;

  std::size_t retrain_epochs = 40;
  float retrain_lr = 1e-4f;
  std::size_t retrain_batch = 8;

  EvalConfig eval;

  void validate() const;

  std::size_t scaled_pretrain_epochs() const;

  PretrainConfig pretrain_config(std::size_t steps_per_epoch) const;
  GccStageConfig gcc_config() const;
  RetrainConfig retrain_config(std::size_t steps_per_epoch) const;
};

/// Sets one key. Throws ConfigError for an unknown key (naming the nearest
/// valid key) or an unparsable value.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

/// "key = value" lines; '#' starts a comment. Defaults fill omissions.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Every key with its resolved value, one "key = value" line each, in a
/// stable order. parse_run_config(to_text(c)) reproduces c.
std::string to_text(const RunConfig& cfg);

std::vector<std::string> config_keys();

/// Levenshtein distance, used for "did you mean" hints.
std::size_t edit_distance(const std::string& a, const std::string& b);

}  // namespace geoadapt
