#pragma once

#include "netsym/dataset.hpp"
#include "netsym/network.hpp"
#include "netsym/symmetry.hpp"
#include "netsym/task.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace netsym {

enum class LossKind { BinaryCrossEntropy, CrossEntropy };
LossKind parse_loss(const std::string& name);
const char* to_string(LossKind loss);

struct TrainConfig {
  int epochs = 10;
  int batch_size = 10;
  double learning_rate = 2.0;
  /// Step decay: every `lr_decay_epochs` epochs the rate is divided by
  /// `lr_decay_factor`. 0 disables it.
  int lr_decay_epochs = 0;
  double lr_decay_factor = 10.0;
  double weight_decay = 0.0;
  double momentum = 0.0;
  LossKind loss = LossKind::BinaryCrossEntropy;
  std::uint64_t seed = 0;
  double loss_threshold = 0.1;
  /// Record the canonical sort permutation after every step.
  std::optional<SortKey> permutation_tracking;

  void validate() const;
  double learning_rate_at(int epoch) const;
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);

struct TrainTrace {
  std::vector<double> step_losses;
  /// Initial sort permutation followed by one per step, when tracking is on.
  std::vector<PermutationSet> permutations;
  int steps_per_epoch = 0;
  Network final_net;
  /// Data loss (no weight decay) of final_net on the whole dataset.
  double final_loss = 0.0;
};

struct LossGradient {
  double loss = 0.0;
  /// Same shapes as the network's weight/bias tensors.
  std::vector<LayerParams> grads;
};

/// Mean data loss over the given rows and its gradient by backpropagation.
/// Only fully connected networks are supported.
LossGradient loss_and_gradient(const Network& net, const Eigen::Ref<const Matrix>& inputs,
                               const Eigen::Ref<const Eigen::VectorXi>& labels, LossKind loss);

double dataset_loss(const Network& net, const Dataset& data, LossKind loss);

/// Batch order of epoch e is a permutation drawn from (seed, e).
std::vector<Eigen::Index> epoch_order(Eigen::Index n, std::uint64_t seed, int epoch);

/// Vanilla (optionally momentum) SGD: w <- w - lr (grad + weight_decay * w);
/// weight decay touches weights only. Throws Error(Numerical) on a non-finite loss.
TrainTrace sgd_train(const Network& init, const Dataset& data, const TrainConfig& cfg);

struct EnsembleOptions {
  int threads = 1;
  nlohmann::json task = nlohmann::json::object();
};

/// Trains `count` networks with seeds cfg.seed + i (initialization and batch
/// order), writes ckpt_XXXXX.nnck files and the manifest into out_dir.
CheckpointDataset train_posterior_dataset(const ArchitectureSpec& spec, const Dataset& data,
                                          const TrainConfig& cfg, int count,
                                          const std::string& out_dir,
                                          const EnsembleOptions& opts = {});

struct EquivarianceReport {
  double max_weight_dev = 0.0;
  bool pass = false;
};

/// Trains from theta0 and from T_p(theta0, perm) and compares the second
/// result with T_p of the first. `second_run_seed` overrides the batch seed of
/// the permuted run.
EquivarianceReport equivariance_check(const ArchitectureSpec& spec, const Dataset& data,
                                      const TrainConfig& cfg, const PermutationSet& perm,
                                      std::uint64_t init_seed,
                                      std::optional<std::uint64_t> second_run_seed = std::nullopt,
                                      double tol = 1e-6);

struct TauSeries {
  std::vector<double> mean;                    // per step
  std::vector<std::vector<double>> per_interface;  // [interface][step]
};

/// Kendall tau between successive recorded permutations. Interfaces with a
/// single unit are skipped.
TauSeries track_permutations(const TrainTrace& trace);

struct EnsemblePrediction {
  Matrix mean;
  std::vector<Matrix> members;
};

EnsemblePrediction ensemble_predict(const std::vector<Network>& members,
                                    const Eigen::Ref<const Matrix>& inputs);

}  // namespace netsym
