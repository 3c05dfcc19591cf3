#pragma once

#include "netsym/common.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace netsym {

enum class LayerKind { Linear, Conv2d, BatchNorm };
enum class OutputActivation { Softmax, Sigmoid, None };

const char* to_string(LayerKind kind);
const char* to_string(OutputActivation act);

struct LayerSpec {
  LayerKind kind = LayerKind::Linear;
  // linear: features; conv2d: channels; batchnorm: in == out == feature count
  int in = 0;
  int out = 0;
  int kernel_h = 1;
  int kernel_w = 1;
  int groups = 1;
  int padding = 0;
  bool has_bias = true;

  static LayerSpec linear(int in, int out, bool bias = true);
  static LayerSpec conv2d(int in, int out, int kh, int kw, int groups = 1, int padding = 0,
                          bool bias = true);
  static LayerSpec batchnorm(int features);

  bool has_weights() const { return kind != LayerKind::BatchNorm; }
  int in_per_group() const { return in / groups; }
  int out_per_group() const { return out / groups; }
  /// Number of columns of the row-major weight matrix (in/groups * kh * kw).
  int fan_in() const;
  /// Elements of a single input unit's slice in a weight row.
  int kernel_size() const { return kind == LayerKind::Conv2d ? kernel_h * kernel_w : 1; }

  bool operator==(const LayerSpec&) const = default;
};

/// Channel-major activation shape; MLP activations are (n, 1, 1).
struct Shape {
  int channels = 0;
  int height = 1;
  int width = 1;
  int size() const { return channels * height * width; }
  int spatial() const { return height * width; }
  bool operator==(const Shape&) const = default;
};

struct ArchitectureSpec {
  Shape input;
  std::vector<LayerSpec> layers;
  OutputActivation output_activation = OutputActivation::None;

  int input_dim() const { return input.size(); }
  int output_dim() const;

  /// Throws Error(InvalidSpec) naming the offending layer pair.
  void validate() const;
  /// Input shape of every layer plus the final output shape (size layers+1).
  std::vector<Shape> shapes() const;

  bool operator==(const ArchitectureSpec&) const = default;

  /// Fully connected ReLU network, e.g. mlp({2, 2, 1}, Sigmoid) is the toy perceptron.
  static ArchitectureSpec mlp(const std::vector<int>& widths, OutputActivation head,
                              bool bias = true);
};

void to_json(nlohmann::json& j, const LayerSpec& layer);
void from_json(const nlohmann::json& j, LayerSpec& layer);
void to_json(nlohmann::json& j, const ArchitectureSpec& spec);
void from_json(const nlohmann::json& j, ArchitectureSpec& spec);

ArchitectureSpec load_spec_file(const std::string& path);
std::string spec_hash(const ArchitectureSpec& spec);

/// A scalable interface: output of layer `layer` consumed by layer `layer + 1`.
struct Interface {
  int layer = 0;
  int units = 0;
  int spatial = 1;
};

/// Every layer output except the network output, in order.
std::vector<Interface> interfaces(const ArchitectureSpec& spec);

/// Permutable interfaces: outputs of weight layers other than the last one. A
/// batchnorm directly after the weight layer is permuted alongside it.
struct HiddenInterface {
  int layer = 0;               // weight layer producing the units
  std::optional<int> batchnorm;  // batchnorm layer directly following, if any
  int consumer = 0;            // weight layer consuming the units
  int units = 0;
  int groups = 1;              // group count of the consumer
};

std::vector<HiddenInterface> hidden_interfaces(const ArchitectureSpec& spec);

}  // namespace netsym
