#pragma once

#include "netsym/common.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace netsym {

struct Dataset {
  Matrix inputs;           // one sample per row
  Eigen::VectorXi labels;  // class index per row

  Eigen::Index size() const { return inputs.rows(); }
  int num_classes() const { return labels.size() ? labels.maxCoeff() + 1 : 0; }
};

enum class TaskKind { TwoGaussians, KGaussians };

/// Gaussian classes with identity covariance, one mean per class.
struct SyntheticTask {
  TaskKind kind = TaskKind::TwoGaussians;
  std::vector<Vector> means;
  int n_per_class = 200;
  std::uint64_t seed = 0;
  bool separability_check = true;
  int max_retries = 1000;

  /// Means (-2, -2) and (2, 2), 200 points each.
  static SyntheticTask two_gaussians(std::uint64_t seed, int n_per_class = 200);
};

void to_json(nlohmann::json& j, const SyntheticTask& task);

/// Deterministic per seed. With the separability check on, samples are redrawn
/// from derived seeds until every pair of classes has a verified separating
/// hyperplane.
Dataset gen_task(const SyntheticTask& task);

/// Perceptron certificate: true only when a separating hyperplane was found
/// within `max_epochs` passes.
bool linearly_separable(const Matrix& a, const Matrix& b, int max_epochs = 200);

/// CSV with a header of feature columns x0..x{d-1} and a trailing "label"
/// column, omitted when the dataset has no labels.
void save_dataset(const Dataset& data, const std::string& path);
/// Reads the layout above; the label column is optional (labels left empty).
Dataset load_dataset(const std::string& path);

}  // namespace netsym
