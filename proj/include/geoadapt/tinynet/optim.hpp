#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "geoadapt/tinynet/mlp.hpp"

namespace geoadapt::tinynet {

/// Learning-rate schedule over optimizer step indices.
struct LrSchedule {
  enum class Kind { constant, step, cosine };
  Kind kind = Kind::constant;
  std::vector<std::size_t> milestones;  // step: divide by `factor` at each
  float factor = 10.0f;
  std::size_t total_steps = 1;          // cosine: lr reaches ~0 at the last step

  static LrSchedule constant() { return {}; }
  static LrSchedule step(std::vector<std::size_t> milestones, float factor) {
    return {Kind::step, std::move(milestones), factor, 1};
  }
  static LrSchedule cosine(std::size_t total_steps) { return {Kind::cosine, {}, 10.0f, total_steps}; }
};

enum class OptimizerKind { sgd, adam };

struct OptimConfig {
  float learning_rate = 1e-3f;
  LrSchedule schedule;
  std::size_t epochs = 1;
  OptimizerKind kind = OptimizerKind::sgd;
  float momentum = 0.0f;  // sgd only
};

float learning_rate_at(const OptimConfig& cfg, std::size_t step_index);

/// p <- p - lr(step_index) * grad, then grads are zeroed.
void sgd_step(std::span<ParamTensor* const> params, const OptimConfig& cfg, std::size_t step_index);

/// Stateful optimizer (SGD with optional momentum, or Adam) over a fixed
/// parameter list.
class Optimizer {
 public:
  Optimizer(OptimConfig cfg, std::vector<ParamTensor*> params);
  /// Applies one update with lr(step_index) and zeroes every gradient.
  void step(std::size_t step_index);
  const OptimConfig& config() const { return cfg_; }

 private:
  OptimConfig cfg_;
  std::vector<ParamTensor*> params_;
  std::vector<Eigen::MatrixXf> first_, second_;
  std::size_t updates_ = 0;
};

}  // namespace geoadapt::tinynet
