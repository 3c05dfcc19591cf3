#pragma once

#include "netsym/network.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace netsym {

/// One strictly positive scale vector per interface (see interfaces()); the
/// network input and output are never scaled.
struct ScalingSet {
  std::vector<Vector> scales;

  static ScalingSet ones(const ArchitectureSpec& spec);
  void validate(const ArchitectureSpec& spec) const;
  /// Elementwise product; applying the result equals applying both in turn.
  ScalingSet operator*(const ScalingSet& other) const;
  ScalingSet inverse() const;
};

/// One index array per hidden interface (see hidden_interfaces()), with gather
/// semantics: unit i of the result is unit perm[i] of the source.
struct PermutationSet {
  std::vector<IndexVector> perms;

  static PermutationSet identity(const ArchitectureSpec& spec);
  /// Bijection check plus the grouped-conv intra-group constraint.
  void validate(const ArchitectureSpec& spec) const;
  PermutationSet inverse() const;
  bool is_identity() const;
};

/// Rows of layer l times lambda_l, inbound columns of layer l+1 divided by
/// lambda_l, biases times lambda_l. Batchnorm running statistics absorb the
/// inbound scale exactly (mean * lambda, var + eps -> lambda^2 (var + eps));
/// gamma and beta carry the outbound scale.
Network apply_scaling(const Network& net, const ScalingSet& scales);

/// Rows (and bias, batchnorm vectors) of each producer gathered by pi, consumer
/// input blocks gathered by the same pi.
Network apply_permutation(const Network& net, const PermutationSet& perm);

/// Adds c to every final bias; requires a softmax head with biases.
Network apply_softmax_shift(const Network& net, double c);

enum class SortKey { FirstParam, MaxAbs };
const char* to_string(SortKey key);
SortKey parse_sort_key(const std::string& name);

struct PermutationRemoval {
  Network net;
  PermutationSet perm;
};

/// Sorts the units of every hidden interface by descending key, first
/// interface first. Ties fall back to lexicographic comparison of the whole
/// incoming row, then to the original order.
PermutationRemoval remove_permutations(const Network& net, SortKey key = SortKey::FirstParam);

struct NeuronNormalization {
  Network net;
  ScalingSet scales;
  std::vector<std::string> warnings;
};

/// Scales every non-final unit so its incoming weight row has L2 norm
/// `target_norm` (bias excluded). Batchnorm units are normalized on |gamma|.
/// Zero rows keep scale 1 and add a warning.
NeuronNormalization normalize_neurons(const Network& net, double target_norm = 1.0);

struct CanonicalizeConfig {
  SortKey key = SortKey::FirstParam;
  double norm = 1.0;
  bool scaling = true;
  bool permutation = true;
  bool softmax_shift = true;
  double bias_sum_target = 0.0;
};

struct CanonicalizationRecord {
  ScalingSet scales;
  PermutationSet perm;
  double shift = 0.0;
  bool shift_applied = false;
  CanonicalizeConfig config;
  std::vector<std::string> warnings;
};

struct Canonical {
  Network net;
  CanonicalizationRecord record;
};

/// normalize -> sort -> softmax-shift removal. The shift step is skipped for
/// heads it does not apply to.
Canonical canonicalize(const Network& net, const CanonicalizeConfig& cfg = {});

/// Re-applies a record's transforms to the network it was computed from.
Network replay(const Network& net, const CanonicalizationRecord& record);

struct EquivalenceReport {
  double max_abs = 0.0;
  /// max over inputs of |fa - fb|_inf / max(|fa|_inf, |fb|_inf)
  double max_rel = 0.0;
  bool pass = false;
};

EquivalenceReport verify_equivalence(const Network& a, const Network& b, int n_inputs,
                                     std::uint64_t seed, double tol);

struct InterfaceCount {
  int layer = 0;
  int units = 0;
  long scaling_dof = 0;
  double log_permutations = 0.0;
};

struct SymmetryCount {
  std::vector<InterfaceCount> interfaces;
  long total_scaling_dof = 0;
  double total_log_permutations = 0.0;
};

SymmetryCount count_symmetries(const ArchitectureSpec& spec);

struct RandomSymmetry {
  PermutationSet perm;
  ScalingSet scales;
};

/// Uniform valid permutations and scales exp(U[-2, 2]), deterministic per seed.
RandomSymmetry random_symmetry(const ArchitectureSpec& spec, std::uint64_t seed);

}  // namespace netsym
