#pragma once

#include "netsym/common.hpp"
#include "netsym/network.hpp"
#include "netsym/symmetry.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace netsym {

enum class KernelFamily { Gaussian, Laplace };
enum class Estimator { Biased, Unbiased };
enum class Norm { L2, L1 };

const char* to_string(KernelFamily f);
const char* to_string(Estimator e);
Estimator parse_estimator(const std::string& name);

/// gaussian: exp(-|x - y|_2^2 / (2 s^2)); laplace: exp(-|x - y|_1 / s).
struct KernelSpec {
  KernelFamily family = KernelFamily::Gaussian;
  double bandwidth = 1.0;
};

template <typename DerivedX, typename DerivedY>
double kernel(const KernelSpec& k, const Eigen::MatrixBase<DerivedX>& x,
              const Eigen::MatrixBase<DerivedY>& y) {
  if (k.family == KernelFamily::Gaussian)
    return std::exp(-(x - y).squaredNorm() / (2.0 * k.bandwidth * k.bandwidth));
  return std::exp(-(x - y).template lpNorm<1>() / k.bandwidth);
}

struct MmdConfig {
  /// Bandwidth multipliers applied to each family's median distance.
  std::vector<double> multipliers = default_multipliers();
  std::vector<KernelFamily> families{KernelFamily::Gaussian, KernelFamily::Laplace};
  Estimator estimator = Estimator::Biased;
  std::uint64_t seed = 0;  // median-heuristic subsampling

  static std::vector<double> default_multipliers();  // 2^-4 .. 2^5
};

/// Median pairwise distance over the pooled rows of X and Y (uniform
/// subsample of 2000 rows above that size).
double median_heuristic(const Eigen::Ref<const Matrix>& X, const Eigen::Ref<const Matrix>& Y,
                        Norm norm = Norm::L2, std::uint64_t seed = 0);

/// MMD^2 between row samples. The unbiased value may be slightly negative.
double mmd2(const Eigen::Ref<const Matrix>& X, const Eigen::Ref<const Matrix>& Y,
            const KernelSpec& kernel, Estimator estimator);

struct Summary {
  double median = 0.0, mean = 0.0, max = 0.0;
};
Summary summarize(std::vector<double> values);

struct AggregatedMmd {
  std::vector<KernelSpec> kernels;
  std::vector<double> mmd2;  // per kernel
  std::vector<double> mmd;   // sqrt(max(mmd2, 0))
  std::vector<bool> negative;
  Summary squared;
  Summary root;
};

/// One MMD per kernel of the bank (gaussian bandwidths from the L2 median,
/// laplace bandwidths from the L1 median) and their median/mean/max.
AggregatedMmd aggregated_mmd(const Eigen::Ref<const Matrix>& X, const Eigen::Ref<const Matrix>& Y,
                             const MmdConfig& cfg = {});

struct LayerMmd {
  std::string name;
  Eigen::Index parameter_count = 0;
  AggregatedMmd mmd;
};

struct LayerwiseMmdReport {
  std::vector<LayerMmd> layers;
  Eigen::Index total_parameters = 0;
  /// Parameter-count weighted means of the per-layer aggregates.
  Summary weighted_squared;
  Summary weighted_root;
};

/// One row per checkpoint and layer (all stored parameters of that layer).
std::vector<Matrix> layer_samples(const std::vector<Network>& nets);
std::vector<Network> canonicalize_all(const std::vector<Network>& nets,
                                      const CanonicalizeConfig& cfg, int threads = 1);

LayerwiseMmdReport layerwise_posterior_mmd(const std::vector<Network>& a,
                                           const std::vector<Network>& b, const MmdConfig& cfg,
                                           bool canonicalize_first,
                                           const CanonicalizeConfig& canon = {}, int threads = 1);

struct PermutationTest {
  double observed = 0.0;
  std::vector<double> null;
  double p_value = 1.0;
  /// q-quantile of the null distribution (q in [0, 1]).
  double null_quantile(double q) const;
};

/// Permutation null of the weighted median MMD^2 statistic of
/// layerwise_posterior_mmd: pooled rows are reshuffled into groups of the
/// original sizes. Bandwidths stay fixed since the pooled sample is unchanged.
PermutationTest layerwise_permutation_test(const std::vector<Network>& a,
                                           const std::vector<Network>& b, const MmdConfig& cfg,
                                           bool canonicalize_first, int n_permutations,
                                           std::uint64_t seed, const CanonicalizeConfig& canon = {},
                                           int threads = 1);

/// Same for a single pair of row samples, statistic = median MMD^2 over the bank.
PermutationTest mmd_permutation_test(const Eigen::Ref<const Matrix>& X,
                                     const Eigen::Ref<const Matrix>& Y, const MmdConfig& cfg,
                                     int n_permutations, std::uint64_t seed);

}  // namespace netsym
