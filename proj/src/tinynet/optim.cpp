#include "geoadapt/tinynet/optim.hpp"

#include <cmath>
#include <numbers>

#include "geoadapt/error.hpp"

namespace geoadapt::tinynet {

float learning_rate_at(const OptimConfig& cfg, std::size_t step_index) {
  const auto& s = cfg.schedule;
  switch (s.kind) {
    case LrSchedule::Kind::constant: return cfg.learning_rate;
    case LrSchedule::Kind::step: {
      float lr = cfg.learning_rate;
      for (std::size_t m : s.milestones)
        if (step_index >= m) lr /= s.factor;
      return lr;
    }
    case LrSchedule::Kind::cosine: {
      const double t = static_cast<double>(step_index) / static_cast<double>(std::max<std::size_t>(1, s.total_steps));
      return static_cast<float>(0.5 * cfg.learning_rate * (1.0 + std::cos(std::numbers::pi * std::min(t, 1.0))));
    }
  }
  return cfg.learning_rate;
}

namespace {

void check_finite(const ParamTensor& p) {
  if (!p.value.allFinite()) throw NumericError("non-finite parameter after update");
}

}  // namespace

void sgd_step(std::span<ParamTensor* const> params, const OptimConfig& cfg, std::size_t step_index) {
  const float lr = learning_rate_at(cfg, step_index);
  for (ParamTensor* p : params) {
    p->value -= lr * p->grad;
    p->zero_grad();
    check_finite(*p);
  }
}

Optimizer::Optimizer(OptimConfig cfg, std::vector<ParamTensor*> params) : cfg_(std::move(cfg)), params_(std::move(params)) {
  for (auto* p : params_) {
    first_.push_back(Eigen::MatrixXf::Zero(p->rows(), p->cols()));
    if (cfg_.kind == OptimizerKind::adam) second_.push_back(Eigen::MatrixXf::Zero(p->rows(), p->cols()));
  }
}

void Optimizer::step(std::size_t step_index) {
  const float lr = learning_rate_at(cfg_, step_index);
  ++updates_;
  if (cfg_.kind == OptimizerKind::sgd) {
    if (cfg_.momentum == 0.0f) {
      sgd_step(params_, cfg_, step_index);
      return;
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
      first_[i] = cfg_.momentum * first_[i] + params_[i]->grad;
      params_[i]->value -= lr * first_[i];
      params_[i]->zero_grad();
      check_finite(*params_[i]);
    }
    return;
  }
  constexpr float b1 = 0.9f, b2 = 0.999f, eps = 1e-8f;
  const float c1 = 1.0f - std::pow(b1, static_cast<float>(updates_));
  const float c2 = 1.0f - std::pow(b2, static_cast<float>(updates_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& g = params_[i]->grad;
    first_[i] = b1 * first_[i] + (1.0f - b1) * g;
    second_[i] = b2 * second_[i] + (1.0f - b2) * g.cwiseProduct(g);
    params_[i]->value.array() -= lr * (first_[i].array() / c1) / ((second_[i].array() / c2).sqrt() + eps);
    params_[i]->zero_grad();
    check_finite(*params_[i]);
  }
}

}  // namespace geoadapt::tinynet
