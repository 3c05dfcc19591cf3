#pragma once

#include "netsym/architecture.hpp"
#include "netsym/common.hpp"

#include <cstdint>
#include <vector>

namespace netsym {

inline constexpr double kBatchNormEps = 1e-5;

/// Parameters of one layer. Weights are out x fan_in, row-major; a conv row is
/// laid out as [in_channel_in_group][kernel_h][kernel_w].
struct LayerParams {
  Matrix weight;
  Vector bias;  // empty when the layer has no bias
  // batchnorm only
  Vector gamma, beta, running_mean, running_var;

  bool operator==(const LayerParams& o) const;
};

struct Network {
  ArchitectureSpec spec;
  std::vector<LayerParams> layers;

  /// Shapes match the spec, values finite, running variances positive.
  void validate() const;
  /// Zero weights and biases; batchnorm at identity (gamma 1, var 1).
  static Network zeros(const ArchitectureSpec& spec);

  bool operator==(const Network& o) const { return spec == o.spec && layers == o.layers; }
};

/// Uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases; each
/// layer draws from its own stream keyed by (seed, layer index).
Network build_network(const ArchitectureSpec& spec, std::uint64_t seed);

/// Pre-activation output z of the last layer.
Vector logits(const Network& net, const Eigen::Ref<const Vector>& x);
/// s(z) with the spec's output activation.
Vector forward(const Network& net, const Eigen::Ref<const Vector>& x);
/// Row-per-sample batch variants.
Matrix logits_batch(const Network& net, const Eigen::Ref<const Matrix>& inputs);
Matrix forward_batch(const Network& net, const Eigen::Ref<const Matrix>& inputs);

/// Class-probability rows. A single sigmoid output p becomes the row [1 - p, p].
Matrix predict_proba(const Network& net, const Eigen::Ref<const Matrix>& inputs);

Vector softmax(const Eigen::Ref<const Vector>& z);

struct MassOptions {
  bool include_batchnorm_gamma = false;
};

/// Sum of squared weights; biases and batchnorm beta never count.
double network_mass(const Network& net, const MassOptions& opts = {});
std::vector<double> layer_masses(const Network& net, const MassOptions& opts = {});

/// Total number of scalars stored for a layer (weights, bias, batchnorm vectors).
Eigen::Index parameter_count(const LayerParams& layer);
/// All parameters of a layer flattened in storage order.
Vector flatten_layer(const LayerParams& layer);
/// Checkpoint tensor names of a layer, e.g. "layers.0.weight".
std::vector<std::string> tensor_names(const Network& net, int layer);

/// Column blocks of a consumer layer that read one input unit. Each block is a
/// (row range, column range) in the consumer's weight matrix.
struct WeightBlock {
  Eigen::Index row_begin, rows, col_begin, cols;
};
std::vector<WeightBlock> unit_input_blocks(const ArchitectureSpec& spec, int consumer, int unit);

}  // namespace netsym
