#include "geoadapt/tinynet/mlp.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "geoadapt/error.hpp"

namespace geoadapt::tinynet {

float sigmoid(float z) {
  if (z >= 0) return 1.0f / (1.0f + std::exp(-z));
  const float e = std::exp(z);
  return e / (1.0f + e);
}

namespace {

void apply_activation(Activation a, Eigen::MatrixXf& m) {
  switch (a) {
    case Activation::identity: break;
    case Activation::relu: m = m.cwiseMax(0.0f); break;
    case Activation::sigmoid: m = m.unaryExpr([](float z) { return sigmoid(z); }); break;
  }
}

}  // namespace

Gradients& Gradients::operator+=(const Gradients& other) {
  if (other.tensors.size() != tensors.size()) throw ValidationError("gradient buffers do not match");
  for (std::size_t i = 0; i < tensors.size(); ++i) tensors[i] += other.tensors[i];
  return *this;
}

void Gradients::set_zero() {
  for (auto& t : tensors) t.setZero();
}

Mlp::Mlp(const std::vector<std::size_t>& dims, Activation hidden, Activation output) {
  if (dims.size() < 2) throw ValidationError("an MLP needs at least input and output dimensions");
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    DenseLayer l;
    l.weight = ParamTensor(static_cast<Eigen::Index>(dims[i + 1]), static_cast<Eigen::Index>(dims[i]));
    l.bias = ParamTensor(static_cast<Eigen::Index>(dims[i + 1]), 1);
    l.activation = (i + 2 == dims.size()) ? output : hidden;
    layers_.push_back(std::move(l));
  }
}

void Mlp::init_glorot(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& l : layers_) {
    const float fan = static_cast<float>(l.weight.rows() + l.weight.cols());
    const float bound = std::sqrt(6.0f / fan);
    std::uniform_real_distribution<float> u(-bound, bound);
    for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r) l.weight.value(r, c) = u(rng);
    l.bias.value.setZero();
  }
}

std::size_t Mlp::input_dim() const { return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.front().weight.cols()); }
std::size_t Mlp::output_dim() const { return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.back().weight.rows()); }

Eigen::MatrixXf Mlp::forward(const Eigen::MatrixXf& input, Tape* tape) const {
  if (layers_.empty()) throw StateError("forward on an empty MLP");
  if (static_cast<std::size_t>(input.rows()) != input_dim()) {
    std::ostringstream os;
    os << "MLP input has " << input.rows() << " rows, expected " << input_dim();
    throw ValidationError(os.str());
  }
  if (tape) {
    tape->inputs.clear();
    tape->outputs.clear();
  }
  Eigen::MatrixXf x = input;
  for (const auto& l : layers_) {
    Eigen::MatrixXf z = l.weight.value * x;
    z.colwise() += l.bias.value.col(0);
    apply_activation(l.activation, z);
    if (tape) {
      tape->inputs.push_back(std::move(x));
      tape->outputs.push_back(z);
    }
    x = std::move(z);
  }
  return x;
}

std::vector<float> Mlp::forward(std::span<const float> input) const {
  Eigen::MatrixXf in(static_cast<Eigen::Index>(input.size()), 1);
  for (std::size_t i = 0; i < input.size(); ++i) in(static_cast<Eigen::Index>(i), 0) = input[i];
  const Eigen::MatrixXf out = forward(in);
  return {out.data(), out.data() + out.size()};
}

Gradients Mlp::make_gradients() const {
  Gradients g;
  for (const auto& l : layers_) {
    g.tensors.push_back(Eigen::MatrixXf::Zero(l.weight.rows(), l.weight.cols()));
    g.tensors.push_back(Eigen::MatrixXf::Zero(l.bias.rows(), 1));
  }
  return g;
}

Eigen::MatrixXf Mlp::backward(const Tape& tape, const Eigen::MatrixXf& upstream, Gradients& grads) const {
  if (tape.empty() || tape.inputs.size() != layers_.size()) throw StateError("backward called without a matching forward pass");
  if (grads.tensors.size() != 2 * layers_.size()) throw ValidationError("gradient buffer does not match the MLP");
  const auto& last = tape.outputs.back();
  if (upstream.rows() != last.rows() || upstream.cols() != last.cols()) throw ValidationError("upstream gradient shape mismatch");

  Eigen::MatrixXf delta = upstream;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    const auto& l = layers_[k];
    const auto& out = tape.outputs[k];
    switch (l.activation) {
      case Activation::identity: break;
      case Activation::relu: delta = (out.array() > 0.0f).select(delta, 0.0f); break;
      case Activation::sigmoid: delta = delta.cwiseProduct(out.cwiseProduct((1.0f - out.array()).matrix())); break;
    }
    grads.tensors[2 * k].noalias() += delta * tape.inputs[k].transpose();
    grads.tensors[2 * k + 1] += delta.rowwise().sum();
    delta = l.weight.value.transpose() * delta;
  }
  return delta;
}

Eigen::MatrixXf Mlp::backward(const Tape& tape, const Eigen::MatrixXf& upstream) {
  Gradients g = make_gradients();
  Eigen::MatrixXf dx = backward(tape, upstream, g);
  accumulate(g);
  return dx;
}

void Mlp::accumulate(const Gradients& grads) {
  if (grads.tensors.size() != 2 * layers_.size()) throw ValidationError("gradient buffer does not match the MLP");
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    layers_[k].weight.grad += grads.tensors[2 * k];
    layers_[k].bias.grad += grads.tensors[2 * k + 1];
  }
}

std::vector<ParamTensor*> Mlp::parameters() {
  std::vector<ParamTensor*> out;
  for (auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<const ParamTensor*> Mlp::parameters() const {
  std::vector<const ParamTensor*> out;
  for (const auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

void Mlp::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

bool Mlp::parameters_finite() const {
  for (const auto* p : parameters())
    if (!p->value.allFinite()) return false;
  return true;
}

}  // namespace geoadapt::tinynet
