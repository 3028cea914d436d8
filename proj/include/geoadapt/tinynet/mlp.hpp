#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace geoadapt::tinynet {

/// A trainable matrix and its gradient accumulator (same shape).
struct ParamTensor {
  Eigen::MatrixXf value;
  Eigen::MatrixXf grad;

  ParamTensor() = default;
  ParamTensor(Eigen::Index rows, Eigen::Index cols)
      : value(Eigen::MatrixXf::Zero(rows, cols)), grad(Eigen::MatrixXf::Zero(rows, cols)) {}

  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }
  void zero_grad() { grad.setZero(); }
};

enum class Activation : std::uint8_t { identity = 0, relu = 1, sigmoid = 2 };

struct DenseLayer {
  ParamTensor weight;  // out x in
  ParamTensor bias;    // out x 1
  Activation activation = Activation::identity;
};

/// Per-call activation record. Samples are columns.
struct Tape {
  std::vector<Eigen::MatrixXf> inputs;
  std::vector<Eigen::MatrixXf> outputs;
  bool empty() const { return inputs.empty(); }
};

/// Gradient buffer shaped like an Mlp's parameter list (weight, bias per layer).
/// Lets independent samples backpropagate concurrently before a reduction.
struct Gradients {
  std::vector<Eigen::MatrixXf> tensors;
  Gradients& operator+=(const Gradients& other);
  void set_zero();
};

/// Stack of dense layers. Hidden activations are set per layer; the last
/// layer's activation is the network output activation.
class Mlp {
 public:
  Mlp() = default;
  /// dims = {in, h1, ..., out}; parameters start at zero.
  Mlp(const std::vector<std::size_t>& dims, Activation hidden, Activation output);

  /// Uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
  void init_glorot(std::uint64_t seed);

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t layer_count() const { return layers_.size(); }
  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  /// input: in x n, one sample per column. Records activations when `tape` is given.
  Eigen::MatrixXf forward(const Eigen::MatrixXf& input, Tape* tape = nullptr) const;
  std::vector<float> forward(std::span<const float> input) const;

  /// Accumulates parameter gradients of <output, upstream> into `grads` and
  /// returns the gradient with respect to the input. Throws StateError when
  /// `tape` holds no forward pass.
  Eigen::MatrixXf backward(const Tape& tape, const Eigen::MatrixXf& upstream, Gradients& grads) const;
  /// Same, accumulating into each ParamTensor::grad.
  Eigen::MatrixXf backward(const Tape& tape, const Eigen::MatrixXf& upstream);

  Gradients make_gradients() const;
  void accumulate(const Gradients& grads);

  std::vector<ParamTensor*> parameters();
  std::vector<const ParamTensor*> parameters() const;
  void zero_grad();
  bool parameters_finite() const;

 private:
  std::vector<DenseLayer> layers_;
};

float sigmoid(float z);

}  // namespace geoadapt::tinynet
