#include "netsym/symmetry.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

namespace netsym {

namespace {

// Multiplies the outbound side of layer l (rows / gamma, beta, biases) by lambda.
void scale_outbound(const LayerSpec& L, LayerParams& P, const Vector& lambda) {
  if (L.has_weights()) {
    P.weight.array().colwise() *= lambda.array();
    if (P.bias.size()) P.bias.array() *= lambda.array();
  } else {
    P.gamma.array() *= lambda.array();
    P.beta.array() *= lambda.array();
  }
}

// Compensates an inbound scale lambda on layer l.
void scale_inbound(const ArchitectureSpec& spec, int l, LayerParams& P, const Vector& lambda) {
  const LayerSpec& L = spec.layers[l];
  if (L.has_weights()) {
    for (int u = 0; u < lambda.size(); ++u)
      for (const WeightBlock& b : unit_input_blocks(spec, l, u))
        P.weight.block(b.row_begin, b.col_begin, b.rows, b.cols) /= lambda[u];
    return;
  }
  P.running_mean.array() *= lambda.array();
  P.running_var =
      (lambda.array().square() * (P.running_var.array() + kBatchNormEps) - kBatchNormEps).matrix();
  if ((P.running_var.array() <= 0.0).any())
    throw Error(ErrorCode::Numerical, "scale too small for batchnorm running_var at layer " +
                                          std::to_string(l));
}

// Class id of every unit: permutations may only move units inside a class.
std::vector<int> unit_classes(const ArchitectureSpec& spec, const HiddenInterface& h) {
  const int n = h.units;
  const int consumer_block = n / h.groups;
  const int producer_groups = spec.layers[h.layer].groups;
  const int producer_block = n / producer_groups;
  std::vector<int> cls(n);
  for (int u = 0; u < n; ++u) cls[u] = (u / consumer_block) * producer_groups + u / producer_block;
  return cls;
}

std::map<int, std::vector<Eigen::Index>> positions_by_class(const std::vector<int>& cls) {
  std::map<int, std::vector<Eigen::Index>> out;
  for (std::size_t u = 0; u < cls.size(); ++u) out[cls[u]].push_back(static_cast<Eigen::Index>(u));
  return out;
}

template <typename V>
V gather(const V& v, const IndexVector& perm) {
  if (v.size() == 0) return v;
  V out(v.size());
  for (Eigen::Index i = 0; i < perm.size(); ++i) out[i] = v[perm[i]];
  return out;
}

void permute_interface(const ArchitectureSpec& spec, const HiddenInterface& h,
                       const IndexVector& pi, std::vector<LayerParams>& layers) {
  LayerParams& P = layers[h.layer];
  const Matrix w = P.weight;
  for (Eigen::Index i = 0; i < pi.size(); ++i) P.weight.row(i) = w.row(pi[i]);
  P.bias = gather(P.bias, pi);
  if (h.batchnorm) {
    LayerParams& B = layers[*h.batchnorm];
    B.gamma = gather(B.gamma, pi);
    B.beta = gather(B.beta, pi);
    B.running_mean = gather(B.running_mean, pi);
    B.running_var = gather(B.running_var, pi);
  }
  LayerParams& C = layers[h.consumer];
  const Matrix src = C.weight;
  for (Eigen::Index u = 0; u < pi.size(); ++u) {
    const auto to = unit_input_blocks(spec, h.consumer, static_cast<int>(u));
    const auto from = unit_input_blocks(spec, h.consumer, static_cast<int>(pi[u]));
    for (std::size_t k = 0; k < to.size(); ++k)
      C.weight.block(to[k].row_begin, to[k].col_begin, to[k].rows, to[k].cols) =
          src.block(from[k].row_begin, from[k].col_begin, from[k].rows, from[k].cols);
  }
}

bool row_greater(const Matrix& w, Eigen::Index a, Eigen::Index b) {
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    if (w(a, j) > w(b, j)) return true;
    if (w(a, j) < w(b, j)) return false;
  }
  return false;
}

}  // namespace

ScalingSet ScalingSet::ones(const ArchitectureSpec& spec) {
  ScalingSet s;
  for (const Interface& i : interfaces(spec)) s.scales.push_back(Vector::Ones(i.units));
  return s;
}

void ScalingSet::validate(const ArchitectureSpec& spec) const {
  const auto ifs = interfaces(spec);
  if (scales.size() != ifs.size())
    throw Error(ErrorCode::ShapeMismatch, "scaling set has " + std::to_string(scales.size()) +
                                              " interfaces, network has " +
                                              std::to_string(ifs.size()));
  for (std::size_t k = 0; k < ifs.size(); ++k) {
    if (scales[k].size() != ifs[k].units)
      throw Error(ErrorCode::ShapeMismatch,
                  "scale vector " + std::to_string(k) + " has the wrong length");
    if (!scales[k].allFinite() || (scales[k].array() <= 0.0).any())
      throw Error(ErrorCode::InvalidArgument,
                  "scales must be finite and strictly positive (interface " + std::to_string(k) + ")");
  }
}

ScalingSet ScalingSet::operator*(const ScalingSet& other) const {
  if (other.scales.size() != scales.size())
    throw Error(ErrorCode::ShapeMismatch, "cannot compose scaling sets of different networks");
  ScalingSet out = *this;
  for (std::size_t k = 0; k < scales.size(); ++k) out.scales[k].array() *= other.scales[k].array();
  return out;
}

ScalingSet ScalingSet::inverse() const {
  ScalingSet out = *this;
  for (Vector& v : out.scales) v = v.cwiseInverse();
  return out;
}

PermutationSet PermutationSet::identity(const ArchitectureSpec& spec) {
  PermutationSet p;
  for (const HiddenInterface& h : hidden_interfaces(spec))
    p.perms.push_back(IndexVector::LinSpaced(h.units, 0, h.units - 1));
  return p;
}

void PermutationSet::validate(const ArchitectureSpec& spec) const {
  const auto hs = hidden_interfaces(spec);
  if (perms.size() != hs.size())
    throw Error(ErrorCode::ShapeMismatch, "permutation set has " + std::to_string(perms.size()) +
                                              " interfaces, network has " +
                                              std::to_string(hs.size()));
  for (std::size_t k = 0; k < hs.size(); ++k) {
    const IndexVector& pi = perms[k];
    if (pi.size() != hs[k].units)
      throw Error(ErrorCode::ShapeMismatch,
                  "permutation " + std::to_string(k) + " has the wrong length");
    std::vector<bool> seen(pi.size(), false);
    for (Eigen::Index i = 0; i < pi.size(); ++i) {
      if (pi[i] < 0 || pi[i] >= pi.size() || seen[pi[i]])
        throw Error(ErrorCode::InvalidArgument,
                    "permutation " + std::to_string(k) + " is not a bijection");
      seen[pi[i]] = true;
    }
    const auto cls = unit_classes(spec, hs[k]);
    for (Eigen::Index i = 0; i < pi.size(); ++i)
      if (cls[i] != cls[pi[i]])
        throw Error(ErrorCode::InvalidArgument, "permutation " + std::to_string(k) +
                                                    " moves unit " + std::to_string(pi[i]) +
                                                    " across a convolution group");
  }
}

PermutationSet PermutationSet::inverse() const {
  PermutationSet out = *this;
  for (std::size_t k = 0; k < perms.size(); ++k)
    for (Eigen::Index i = 0; i < perms[k].size(); ++i) out.perms[k][perms[k][i]] = i;
  return out;
}

bool PermutationSet::is_identity() const {
  for (const IndexVector& p : perms)
    for (Eigen::Index i = 0; i < p.size(); ++i)
      if (p[i] != i) return false;
  return true;
}

Network apply_scaling(const Network& net, const ScalingSet& scales) {
  scales.validate(net.spec);
  Network out = net;
  for (std::size_t l = 0; l < scales.scales.size(); ++l) {
    scale_outbound(net.spec.layers[l], out.layers[l], scales.scales[l]);
    scale_inbound(net.spec, static_cast<int>(l + 1), out.layers[l + 1], scales.scales[l]);
  }
  return out;
}

Network apply_permutation(const Network& net, const PermutationSet& perm) {
  perm.validate(net.spec);
  Network out = net;
  const auto hs = hidden_interfaces(net.spec);
  for (std::size_t k = 0; k < hs.size(); ++k) permute_interface(net.spec, hs[k], perm.perms[k], out.layers);
  return out;
}

Network apply_softmax_shift(const Network& net, double c) {
  if (net.spec.output_activation != OutputActivation::Softmax)
    throw Error(ErrorCode::InvalidArgument, "softmax shift needs a softmax head");
  if (net.layers.back().bias.size() == 0)
    throw Error(ErrorCode::InvalidArgument, "softmax shift needs final-layer biases");
  if (!std::isfinite(c)) throw Error(ErrorCode::InvalidArgument, "shift must be finite");
  Network out = net;
  out.layers.back().bias.array() += c;
  return out;
}

const char* to_string(SortKey key) {
  return key == SortKey::FirstParam ? "first_param" : "max_abs";
}

SortKey parse_sort_key(const std::string& name) {
  if (name == "first_param") return SortKey::FirstParam;
  if (name == "max_abs") return SortKey::MaxAbs;
  throw Error(ErrorCode::InvalidArgument, "unknown sort key '" + name + "'");
}

PermutationRemoval remove_permutations(const Network& net, SortKey key) {
  const auto hs = hidden_interfaces(net.spec);
  PermutationRemoval result{net, PermutationSet::identity(net.spec)};
  for (std::size_t k = 0; k < hs.size(); ++k) {
    const Matrix& w = result.net.layers[hs[k].layer].weight;
    Vector stat(w.rows());
    if (key == SortKey::MaxAbs) stat = w.cwiseAbs().rowwise().maxCoeff();
    auto before = [&](Eigen::Index a, Eigen::Index b) {
      if (key == SortKey::MaxAbs && stat[a] != stat[b]) return stat[a] > stat[b];
      return row_greater(w, a, b);
    };
    IndexVector pi = IndexVector::LinSpaced(hs[k].units, 0, hs[k].units - 1);
    for (auto& [cls, pos] : positions_by_class(unit_classes(net.spec, hs[k]))) {
      std::vector<Eigen::Index> order = pos;
      std::stable_sort(order.begin(), order.end(), before);
      for (std::size_t i = 0; i < pos.size(); ++i) pi[pos[i]] = order[i];
    }
    permute_interface(net.spec, hs[k], pi, result.net.layers);
    result.perm.perms[k] = pi;
  }
  return result;
}

NeuronNormalization normalize_neurons(const Network& net, double target_norm) {
  if (!(target_norm > 0.0) || !std::isfinite(target_norm))
    throw Error(ErrorCode::InvalidArgument, "target norm must be positive");
  NeuronNormalization result{net, ScalingSet::ones(net.spec), {}};
  // Layer l only sees the inbound scale of interface l-1 before its own norm is taken.
  for (std::size_t l = 0; l < result.scales.scales.size(); ++l) {
    const LayerSpec& L = net.spec.layers[l];
    LayerParams P = net.layers[l];
    if (l > 0) scale_inbound(net.spec, static_cast<int>(l), P, result.scales.scales[l - 1]);
    const Vector norms = L.has_weights() ? Vector(P.weight.rowwise().norm()) : Vector(P.gamma.cwiseAbs());
    Vector& lambda = result.scales.scales[l];
    for (Eigen::Index u = 0; u < norms.size(); ++u) {
      if (norms[u] > 0.0) {
        lambda[u] = target_norm / norms[u];
      } else {
        std::ostringstream os;
        os << "layer " << l << " unit " << u << " has zero incoming norm; scale left at 1";
        result.warnings.push_back(os.str());
      }
    }
  }
  result.net = apply_scaling(net, result.scales);
  return result;
}

Canonical canonicalize(const Network& net, const CanonicalizeConfig& cfg) {
  Canonical out{net, {}};
  out.record.config = cfg;
  out.record.scales = ScalingSet::ones(net.spec);
  out.record.perm = PermutationSet::identity(net.spec);
  if (cfg.scaling) {
    NeuronNormalization nn = normalize_neurons(out.net, cfg.norm);
    out.net = std::move(nn.net);
    out.record.scales = std::move(nn.scales);
    out.record.warnings = std::move(nn.warnings);
  }
  if (cfg.permutation) {
    PermutationRemoval pr = remove_permutations(out.net, cfg.key);
    out.net = std::move(pr.net);
    out.record.perm = std::move(pr.perm);
  }
  const Vector& last_bias = out.net.layers.back().bias;
  if (cfg.softmax_shift && net.spec.output_activation == OutputActivation::Softmax &&
      last_bias.size() > 0) {
    out.record.shift = (cfg.bias_sum_target - last_bias.sum()) / static_cast<double>(last_bias.size());
    out.record.shift_applied = true;
    out.net = apply_softmax_shift(out.net, out.record.shift);
  }
  return out;
}

Network replay(const Network& net, const CanonicalizationRecord& record) {
  Network out = apply_permutation(apply_scaling(net, record.scales), record.perm);
  if (record.shift_applied) out = apply_softmax_shift(out, record.shift);
  return out;
}

EquivalenceReport verify_equivalence(const Network& a, const Network& b, int n_inputs,
                                     std::uint64_t seed, double tol) {
  if (a.spec.input_dim() != b.spec.input_dim() || a.spec.output_dim() != b.spec.output_dim())
    throw Error(ErrorCode::ShapeMismatch, "networks differ in input or output dimension");
  if (n_inputs < 1) throw Error(ErrorCode::InvalidArgument, "need at least one input");
  auto rng = make_rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  EquivalenceReport rep;
  Vector x(a.spec.input_dim());
  for (int i = 0; i < n_inputs; ++i) {
    for (Eigen::Index k = 0; k < x.size(); ++k) x[k] = normal(rng);
    const Vector fa = forward(a, x), fb = forward(b, x);
    const double diff = (fa - fb).cwiseAbs().maxCoeff();
    const double scale = std::max(fa.cwiseAbs().maxCoeff(), fb.cwiseAbs().maxCoeff());
    rep.max_abs = std::max(rep.max_abs, diff);
    if (diff > 0.0) rep.max_rel = std::max(rep.max_rel, scale > 0.0 ? diff / scale : INFINITY);
  }
  rep.pass = rep.max_rel <= tol;
  return rep;
}

SymmetryCount count_symmetries(const ArchitectureSpec& spec) {
  spec.validate();
  SymmetryCount count;
  for (const HiddenInterface& h : hidden_interfaces(spec)) {
    InterfaceCount row;
    row.layer = h.layer;
    row.units = h.units;
    row.scaling_dof = h.units + (h.batchnorm ? spec.layers[*h.batchnorm].out : 0);
    row.log_permutations = h.groups * std::lgamma(static_cast<double>(h.units / h.groups) + 1.0);
    count.total_scaling_dof += row.scaling_dof;
    count.total_log_permutations += row.log_permutations;
    count.interfaces.push_back(row);
  }
  return count;
}

RandomSymmetry random_symmetry(const ArchitectureSpec& spec, std::uint64_t seed) {
  spec.validate();
  RandomSymmetry out{PermutationSet::identity(spec), ScalingSet::ones(spec)};
  auto rng = make_rng(seed, 0x5eed);
  const auto hs = hidden_interfaces(spec);
  for (std::size_t k = 0; k < hs.size(); ++k) {
    IndexVector& pi = out.perm.perms[k];
    for (auto& [cls, pos] : positions_by_class(unit_classes(spec, hs[k]))) {
      std::vector<Eigen::Index> shuffled = pos;
      for (std::size_t i = shuffled.size(); i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(shuffled[i - 1], shuffled[pick(rng)]);
      }
      for (std::size_t i = 0; i < pos.size(); ++i) pi[pos[i]] = shuffled[i];
    }
  }
  std::uniform_real_distribution<double> log_scale(-2.0, 2.0);
  for (Vector& v : out.scales.scales)
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = std::exp(log_scale(rng));
  return out;
}

}  // namespace netsym
