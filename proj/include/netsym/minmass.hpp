#pragma once

#include "netsym/network.hpp"
#include "netsym/symmetry.hpp"

#include <vector>

namespace netsym {

/// Per weight layer, squared weights summed over kernel positions and laid out
/// as out-units x in-units (input channels after flattening or grouping).
struct MassTerms {
  std::vector<Matrix> layers;
  double total() const;
};

MassTerms mass_terms(const Network& net);

/// Mass of apply_scaling(net, scales), evaluated from the mass terms.
double scaled_mass(const Network& net, const ScalingSet& scales);

struct ObjectiveValue {
  double value = 0.0;
  /// Same layout as the log-scale vectors.
  std::vector<Vector> gradient;
  std::vector<Vector> hessian_diagonal;
};

/// f(u) = sum_l sum_ij M_l[i,j] exp(2 u_l[i] - 2 u_{l-1}[j]), u_0 = u_L = 0,
/// and its analytic gradient. `log_scales` is shaped like ScalingSet::scales.
ObjectiveValue minmass_objective(const MassTerms& terms, const std::vector<Vector>& log_scales);
ObjectiveValue minmass_objective(const Network& net, const std::vector<Vector>& log_scales);

struct MinMassConfig {
  double tol = 1e-8;
  int max_iters = 10000;
  double armijo_slope = 1e-4;
  double shrink = 0.5;
  /// Start point in log space; empty means u = 0.
  std::vector<Vector> start;
};

struct MinMassSolution {
  std::vector<Vector> log_scales;
  ScalingSet scales;
  double mass_before = 0.0;
  double mass_after = 0.0;
  int iterations = 0;
  double grad_inf_norm = 0.0;
  bool converged = false;
};

/// Throws Error(Degenerate) naming the first unit with no mass on one side.
void check_nondegenerate(const MassTerms& terms);

/// Diagonally preconditioned gradient descent on the log-domain objective
/// with Armijo backtracking.
MinMassSolution solve_minmass(const Network& net, const MinMassConfig& cfg = {});

struct MinMassResult {
  Network net;
  MinMassSolution solution;
  std::vector<double> max_abs_before;
  std::vector<double> max_abs_after;
};

MinMassResult apply_minmass(const Network& net, const MinMassConfig& cfg = {});

}  // namespace netsym
