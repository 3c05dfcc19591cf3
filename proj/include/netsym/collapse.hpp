#pragma once

#include "netsym/dataset.hpp"
#include "netsym/network.hpp"

#include <optional>
#include <vector>

namespace netsym {

struct PearsonResult {
  double rho = 0.0;
  double p_value = 1.0;  // two-sided, t with n - 2 dof
};

PearsonResult pearson_rho(const std::vector<double>& x, const std::vector<double>& y);

struct PairMi {
  int i = 0, j = 0;  // i < j, indices into the member list
  double id_mi = 0.0;
  double ood_mi = 0.0;
};

struct PairwiseMiReport {
  std::vector<PairMi> pairs;
  double id_mean = 0.0, ood_mean = 0.0;
  double id_variance = 0.0, ood_variance = 0.0;  // population variances
  /// Empty with fewer than 3 pairs or a constant column.
  std::optional<PearsonResult> correlation;
};

/// Mean-over-inputs MI of each sampled 2-member ensemble. All pairs are used
/// when n_pairs >= C(n, 2); otherwise n_pairs distinct pairs are drawn.
PairwiseMiReport pairwise_mi(const std::vector<Network>& members,
                             const Eigen::Ref<const Matrix>& id_inputs,
                             const Eigen::Ref<const Matrix>& ood_inputs, long long n_pairs,
                             std::uint64_t seed, int threads = 1);
PairwiseMiReport pairwise_mi(const CheckpointDataset& ds, const Eigen::Ref<const Matrix>& id_inputs,
                             const Eigen::Ref<const Matrix>& ood_inputs, long long n_pairs,
                             std::uint64_t seed, int threads = 1);

/// Moves every input by +offset on even and -offset on odd coordinates. For
/// the toy task this runs along the decision boundary, far from both means;
/// a (+8, +8) move lands deep inside one class where members agree.
Matrix shift_inputs(const Eigen::Ref<const Matrix>& inputs, double offset = 8.0);

}  // namespace netsym
