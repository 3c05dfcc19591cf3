#pragma once

#include "netsym/common.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

namespace netsym {

/// Class-probability rows (N x C) with optional labels.
struct PredictionBatch {
  Matrix probs;
  Eigen::VectorXi labels;

  /// Rows sum to one within 1e-9, entries in [0, 1], labels in range.
  void validate() const;
};

/// OOD detection scores: larger means more out-of-distribution; label 1 = OOD.
struct OodScoreSet {
  Vector scores;
  Eigen::VectorXi labels;
};

/// Argmax ties go to the lowest class index.
double accuracy(const Eigen::Ref<const Matrix>& probs, const Eigen::Ref<const Eigen::VectorXi>& labels);
double brier(const Eigen::Ref<const Matrix>& probs, const Eigen::Ref<const Eigen::VectorXi>& labels);
/// Top-label ECE over equal-width bins; a confidence on a bin edge goes to the
/// lower bin, 1.0 to the top bin.
double ece(const Eigen::Ref<const Matrix>& probs, const Eigen::Ref<const Eigen::VectorXi>& labels,
           int n_bins = 15);

/// Average precision (step rule) with OOD as the positive class; tied scores
/// share one threshold.
double aupr(const OodScoreSet& s);
/// Smallest FPR over thresholds reaching TPR >= 0.95, no interpolation.
double fpr_at_95_tpr(const OodScoreSet& s);

struct MutualInformation {
  Vector per_sample;
  double mean = 0.0;
};

/// H(mean_m p_m) - mean_m H(p_m), natural log, 0 log 0 = 0.
MutualInformation mutual_information(const std::vector<Matrix>& members);
Vector entropy_rows(const Eigen::Ref<const Matrix>& probs);

namespace detail {

// Sorts `v` in place and returns its number of inversions.
template <typename T>
long long merge_count(std::vector<T>& v, std::vector<T>& buf, std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  long long inv = merge_count(v, buf, lo, mid) + merge_count(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      inv += static_cast<long long>(mid - i);
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + lo, buf.begin() + hi, v.begin() + lo);
  return inv;
}

}  // namespace detail

/// Kendall tau-a, O(n log n) by counting inversions. Inputs are rankings
/// without ties.
template <typename DerivedA, typename DerivedB>
double kendall_tau(const Eigen::DenseBase<DerivedA>& a, const Eigen::DenseBase<DerivedB>& b) {
  const Eigen::Index n = a.size();
  if (n != b.size()) throw Error(ErrorCode::ShapeMismatch, "kendall_tau: length mismatch");
  if (n < 2) throw Error(ErrorCode::InvalidArgument, "kendall_tau: need at least two elements");
  using T = typename DerivedB::Scalar;
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index i, Eigen::Index j) { return a(i) < a(j); });
  std::vector<T> seq(n), buf(n);
  for (Eigen::Index i = 0; i < n; ++i) seq[i] = b(order[i]);
  const long long discordant = detail::merge_count(seq, buf, 0, seq.size());
  const double pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
  return (pairs - 2.0 * static_cast<double>(discordant)) / pairs;
}

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Two-sample Kolmogorov-Smirnov with the asymptotic Kolmogorov series and
/// the usual small-sample correction of lambda.
KsResult ks_two_sample(std::vector<double> a, std::vector<double> b);

/// Q(lambda) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lambda^2).
double kolmogorov_q(double lambda);

}  // namespace netsym
