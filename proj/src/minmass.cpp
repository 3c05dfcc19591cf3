#include "netsym/minmass.hpp"

#include <cmath>
#include <limits>

namespace netsym {

double MassTerms::total() const {
  double t = 0.0;
  for (const Matrix& m : layers) t += m.sum();
  return t;
}

MassTerms mass_terms(const Network& net) {
  const auto shapes = net.spec.shapes();
  MassTerms terms;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const LayerSpec& L = net.spec.layers[l];
    if (!L.has_weights())
      throw Error(ErrorCode::Unsupported, "min-mass does not support batchnorm (layer " +
                                              std::to_string(l) + ")");
    const Matrix sq = net.layers[l].weight.array().square().matrix();
    const int in_units = shapes[l].channels;
    Matrix m = Matrix::Zero(L.out, in_units);
    for (int u = 0; u < in_units; ++u)
      for (const WeightBlock& b : unit_input_blocks(net.spec, static_cast<int>(l), u))
        m.col(u).segment(b.row_begin, b.rows) +=
            sq.block(b.row_begin, b.col_begin, b.rows, b.cols).rowwise().sum();
    terms.layers.push_back(std::move(m));
  }
  return terms;
}

namespace {

// exp(2u) for every layer boundary, including the fixed input and output.
std::vector<Vector> boundary_factors(const MassTerms& terms, const std::vector<Vector>& u,
                                     double sign) {
  const std::size_t n = terms.layers.size();
  if (u.size() + 1 != n)
    throw Error(ErrorCode::ShapeMismatch, "log-scale set does not match the network");
  std::vector<Vector> f;
  f.push_back(Vector::Ones(terms.layers.front().cols()));
  for (std::size_t l = 0; l < u.size(); ++l) {
    if (u[l].size() != terms.layers[l].rows())
      throw Error(ErrorCode::ShapeMismatch, "log-scale vector " + std::to_string(l) + " has the wrong length");
    if (!u[l].allFinite()) throw Error(ErrorCode::InvalidArgument, "log scales must be finite");
    f.push_back((sign * 2.0 * u[l].array()).exp().matrix());
  }
  f.push_back(Vector::Ones(terms.layers.back().rows()));
  return f;
}

std::vector<Vector> unflatten(const MassTerms& terms, const Vector& flat) {
  std::vector<Vector> u;
  Eigen::Index k = 0;
  for (std::size_t l = 0; l + 1 < terms.layers.size(); ++l) {
    const Eigen::Index n = terms.layers[l].rows();
    u.push_back(flat.segment(k, n));
    k += n;
  }
  return u;
}

Vector flatten(const std::vector<Vector>& u) {
  Eigen::Index n = 0;
  for (const Vector& v : u) n += v.size();
  Vector flat(n);
  Eigen::Index k = 0;
  for (const Vector& v : u) {
    flat.segment(k, v.size()) = v;
    k += v.size();
  }
  return flat;
}

}  // namespace

double scaled_mass(const Network& net, const ScalingSet& scales) {
  scales.validate(net.spec);
  const MassTerms terms = mass_terms(net);
  double total = 0.0;
  for (std::size_t l = 0; l < terms.layers.size(); ++l) {
    const Matrix& m = terms.layers[l];
    const Vector out = l + 1 < terms.layers.size() ? Vector(scales.scales[l].array().square())
                                                   : Vector::Ones(m.rows());
    const Vector in = l > 0 ? Vector(scales.scales[l - 1].array().square().inverse())
                            : Vector::Ones(m.cols());
    total += (out.asDiagonal() * m * in.asDiagonal()).sum();
  }
  return total;
}

ObjectiveValue minmass_objective(const MassTerms& terms, const std::vector<Vector>& u) {
  const auto up = boundary_factors(terms, u, 1.0);
  const auto down = boundary_factors(terms, u, -1.0);
  ObjectiveValue out;
  for (const Vector& v : u) {
    out.gradient.push_back(Vector::Zero(v.size()));
    out.hessian_diagonal.push_back(Vector::Zero(v.size()));
  }
  for (std::size_t l = 0; l < terms.layers.size(); ++l) {
    const Matrix e = up[l + 1].asDiagonal() * terms.layers[l] * down[l].asDiagonal();
    out.value += e.sum();
    if (l + 1 < terms.layers.size()) {
      const Vector rows = e.rowwise().sum();
      out.gradient[l] += 2.0 * rows;
      out.hessian_diagonal[l] += 4.0 * rows;
    }
    if (l > 0) {
      const Vector cols = e.colwise().sum().transpose();
      out.gradient[l - 1] -= 2.0 * cols;
      out.hessian_diagonal[l - 1] += 4.0 * cols;
    }
  }
  return out;
}

ObjectiveValue minmass_objective(const Network& net, const std::vector<Vector>& log_scales) {
  return minmass_objective(mass_terms(net), log_scales);
}

void check_nondegenerate(const MassTerms& terms) {
  for (std::size_t l = 0; l + 1 < terms.layers.size(); ++l) {
    const Vector in = terms.layers[l].rowwise().sum();
    const Vector out = terms.layers[l + 1].colwise().sum().transpose();
    for (Eigen::Index i = 0; i < in.size(); ++i) {
      if (in[i] > 0.0 && out[i] > 0.0) continue;
      throw Error(ErrorCode::Degenerate,
                  "degenerate min-mass problem: interface " + std::to_string(l) + " unit " +
                      std::to_string(i) + " has no " + (in[i] > 0.0 ? "outgoing" : "incoming") +
                      " mass, so its scale is unconstrained");
    }
  }
}

MinMassSolution solve_minmass(const Network& net, const MinMassConfig& cfg) {
  const MassTerms terms = mass_terms(net);
  check_nondegenerate(terms);

  std::vector<Vector> start = cfg.start;
  if (start.empty())
    for (std::size_t l = 0; l + 1 < terms.layers.size(); ++l)
      start.push_back(Vector::Zero(terms.layers[l].rows()));

  MinMassSolution sol;
  sol.mass_before = terms.total();
  Vector u = flatten(start);
  ObjectiveValue obj = minmass_objective(terms, start);
  Vector g = flatten(obj.gradient);
  Vector h = flatten(obj.hessian_diagonal);
  double f = obj.value;
  double step = 1.0;
  for (sol.iterations = 0; sol.iterations < cfg.max_iters; ++sol.iterations) {
    sol.grad_inf_norm = g.size() ? g.cwiseAbs().maxCoeff() : 0.0;
    if (sol.grad_inf_norm <= cfg.tol) {
      sol.converged = true;
      break;
    }
    // Jacobi-preconditioned direction; the diagonal is positive on a
    // non-degenerate problem.
    const Vector d = -g.cwiseQuotient(h);
    const double slope = g.dot(d);
    const double g_inf = sol.grad_inf_norm;
    step = std::min(1.0, 2.0 * step);
    bool accepted = false;
    while (step > 1e-300) {
      const Vector trial = u + step * d;
      if (trial.allFinite()) {
        ObjectiveValue t = minmass_objective(terms, unflatten(terms, trial));
        const Vector tg = flatten(t.gradient);
        // Near the optimum the decrease drops below the rounding of f; then a
        // smaller gradient is the only usable signal.
        const bool armijo = t.value <= f + cfg.armijo_slope * step * slope;
        const bool flat = std::abs(t.value - f) <= 64.0 * std::numeric_limits<double>::epsilon() * std::abs(f) &&
                          tg.cwiseAbs().maxCoeff() < g_inf;
        if (std::isfinite(t.value) && (armijo || flat)) {
          u = trial;
          f = t.value;
          g = tg;
          h = flatten(t.hessian_diagonal);
          accepted = true;
          break;
        }
      }
      step *= cfg.shrink;
    }
    if (!accepted) break;  // no representable decrease left
  }
  if (!sol.converged) sol.grad_inf_norm = g.size() ? g.cwiseAbs().maxCoeff() : 0.0;
  if (sol.grad_inf_norm <= cfg.tol) sol.converged = true;
  sol.log_scales = unflatten(terms, u);
  for (const Vector& v : sol.log_scales) sol.scales.scales.push_back(v.array().exp().matrix());
  sol.mass_after = f;
  return sol;
}

MinMassResult apply_minmass(const Network& net, const MinMassConfig& cfg) {
  MinMassResult r;
  r.solution = solve_minmass(net, cfg);
  r.net = apply_scaling(net, r.solution.scales);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    r.max_abs_before.push_back(net.layers[l].weight.cwiseAbs().maxCoeff());
    r.max_abs_after.push_back(r.net.layers[l].weight.cwiseAbs().maxCoeff());
  }
  return r;
}

}  // namespace netsym
