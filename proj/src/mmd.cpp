#include "netsym/mmd.hpp"

#include "netsym/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace netsym {

const char* to_string(KernelFamily f) { return f == KernelFamily::Gaussian ? "gaussian" : "laplace"; }
const char* to_string(Estimator e) { return e == Estimator::Biased ? "biased" : "unbiased"; }

Estimator parse_estimator(const std::string& name) {
  if (name == "biased") return Estimator::Biased;
  if (name == "unbiased") return Estimator::Unbiased;
  throw Error(ErrorCode::InvalidArgument, "unknown estimator '" + name + "'");
}

std::vector<double> MmdConfig::default_multipliers() {
  std::vector<double> m;
  for (int i = -4; i <= 5; ++i) m.push_back(std::ldexp(1.0, i));
  return m;
}

namespace {

constexpr Eigen::Index kMedianSubsample = 2000;

Matrix pool(const Eigen::Ref<const Matrix>& X, const Eigen::Ref<const Matrix>& Y) {
  if (X.rows() && Y.rows() && X.cols() != Y.cols())
    throw Error(ErrorCode::ShapeMismatch, "samples differ in dimension");
  Matrix z(X.rows() + Y.rows(), X.rows() ? X.cols() : Y.cols());
  z.topRows(X.rows()) = X;
  z.bottomRows(Y.rows()) = Y;
  return z;
}

// Pairwise distance matrix, filled one row at a time.
Matrix distances(const Matrix& z, Norm norm) {
  const Eigen::Index n = z.rows();
  Matrix d = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = norm == Norm::L2 ? (z.row(i) - z.row(j)).squaredNorm()
                                        : (z.row(i) - z.row(j)).lpNorm<1>();
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  return d;  // squared for L2
}

double median_of(std::vector<double> v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  if (v.size() % 2) return v[mid];
  const double hi = v[mid];
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + mid));
}

double median_from(const Matrix& d, Norm norm, std::uint64_t seed) {
  const Eigen::Index n = d.rows();
  std::vector<Eigen::Index> idx(n);
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  if (n > kMedianSubsample) {
    auto rng = make_rng(seed, 0x3ed1a);
    for (Eigen::Index i = 0; i < kMedianSubsample; ++i) {
      std::uniform_int_distribution<Eigen::Index> pick(i, n - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(kMedianSubsample);
  }
  std::vector<double> vals;
  vals.reserve(idx.size() * (idx.size() - 1) / 2);
  for (std::size_t a = 0; a < idx.size(); ++a)
    for (std::size_t b = a + 1; b < idx.size(); ++b) {
      const double v = d(idx[a], idx[b]);
      vals.push_back(norm == Norm::L2 ? std::sqrt(v) : v);
    }
  const double m = median_of(std::move(vals));
  if (!(m > 0.0)) throw Error(ErrorCode::Numerical, "zero median distance");
  return m;
}

Matrix gram(const Matrix& d, const KernelSpec& k) {
  if (k.family == KernelFamily::Gaussian)
    return (-d.array() / (2.0 * k.bandwidth * k.bandwidth)).exp().matrix();
  return (-d.array() / k.bandwidth).exp().matrix();
}

// group[i] == 0 marks X rows, 1 marks Y rows.
double mmd2_from_gram(const Matrix& K, const std::vector<char>& group, Estimator est) {
  const Eigen::Index n = K.rows();
  double sxx = 0, syy = 0, sxy = 0, dx = 0, dy = 0;
  double nx = 0, ny = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const char gi = group[i];
    if (gi == 0) {
      nx += 1;
      dx += K(i, i);
    } else {
      ny += 1;
      dy += K(i, i);
    }
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = K(i, j);
      if (gi != group[j])
        sxy += v;
      else if (gi == 0)
        sxx += v;
      else
        syy += v;
    }
  }
  if (est == Estimator::Biased)
    return (2 * sxx + dx) / (nx * nx) + (2 * syy + dy) / (ny * ny) - 2 * sxy / (nx * ny);
  return 2 * sxx / (nx * (nx - 1)) + 2 * syy / (ny * (ny - 1)) - 2 * sxy / (nx * ny);
}

void check_sizes(Eigen::Index nx, Eigen::Index ny, Estimator est) {
  if (nx < 1 || ny < 1) throw Error(ErrorCode::InvalidArgument, "MMD needs non-empty samples");
  if (est == Estimator::Unbiased && (nx < 2 || ny < 2))
    throw Error(ErrorCode::InvalidArgument, "unbiased MMD needs at least two points per sample");
}

// Distances, bandwidths and gram matrices of one pooled sample.
struct PooledBank {
  std::vector<KernelSpec> kernels;
  std::vector<Matrix> grams;
};

PooledBank make_bank(const Matrix& z, const MmdConfig& cfg) {
  if (cfg.multipliers.empty() || cfg.families.empty())
    throw Error(ErrorCode::InvalidArgument, "kernel bank is empty");
  PooledBank bank;
  for (KernelFamily f : cfg.families) {
    const Norm norm = f == KernelFamily::Gaussian ? Norm::L2 : Norm::L1;
    const Matrix d = distances(z, norm);
    const double base = median_from(d, norm, cfg.seed);
    for (double m : cfg.multipliers) {
      if (!(m > 0.0)) throw Error(ErrorCode::InvalidArgument, "bandwidth multipliers must be positive");
      KernelSpec k{f, base * m};
      bank.kernels.push_back(k);
      bank.grams.push_back(gram(d, k));
    }
  }
  return bank;
}

AggregatedMmd aggregate(const std::vector<KernelSpec>& kernels, std::vector<double> values) {
  AggregatedMmd out;
  out.kernels = kernels;
  out.mmd2 = std::move(values);
  for (double v : out.mmd2) {
    out.mmd.push_back(std::sqrt(std::max(v, 0.0)));
    out.negative.push_back(v < 0.0);
  }
  out.squared = summarize(out.mmd2);
  out.root = summarize(out.mmd);
  return out;
}

std::vector<char> split_labels(Eigen::Index nx, Eigen::Index ny) {
  std::vector<char> g(nx + ny, 0);
  std::fill(g.begin() + nx, g.end(), 1);
  return g;
}

void shuffle(std::vector<char>& g, std::mt19937_64& rng) {
  for (std::size_t i = g.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(g[i - 1], g[pick(rng)]);
  }
}

double p_value_of(double observed, const std::vector<double>& null) {
  const auto ge = std::count_if(null.begin(), null.end(), [&](double v) { return v >= observed; });
  return (1.0 + static_cast<double>(ge)) / (1.0 + static_cast<double>(null.size()));
}

}  // namespace

Summary summarize(std::vector<double> values) {
  if (values.empty()) throw Error(ErrorCode::InvalidArgument, "cannot summarize nothing");
  Summary s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  s.max = *std::max_element(values.begin(), values.end());
  s.median = median_of(std::move(values));
  return s;
}

double median_heuristic(const Eigen::Ref<const Matrix>& X, const Eigen::Ref<const Matrix>& Y,
                        Norm norm, std::uint64_t seed) {
  if (X.rows() + Y.rows() < 2) throw Error(ErrorCode::InvalidArgument, "median heuristic needs two points");
  return median_from(distances(pool(X, Y), norm), norm, seed);
}

double mmd2(const Eigen::Ref<const Matrix>& X, const Eigen::Ref<const Matrix>& Y,
            const KernelSpec& k, Estimator est) {
  check_sizes(X.rows(), Y.rows(), est);
  if (X.cols() != Y.cols()) throw Error(ErrorCode::ShapeMismatch, "samples differ in dimension");
  if (!(k.bandwidth > 0.0)) throw Error(ErrorCode::InvalidArgument, "bandwidth must be positive");
  auto within = [&](const Eigen::Ref<const Matrix>& S) {
    double off = 0.0;
    for (Eigen::Index i = 0; i < S.rows(); ++i)
      for (Eigen::Index j = i + 1; j < S.rows(); ++j) off += kernel(k, S.row(i), S.row(j));
    const double n = static_cast<double>(S.rows());
    return est == Estimator::Biased ? (2.0 * off + n) / (n * n) : 2.0 * off / (n * (n - 1.0));
  };
  auto cross = [&](const Eigen::Ref<const Matrix>& A, const Eigen::Ref<const Matrix>& B) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < A.rows(); ++i)
      for (Eigen::Index j = 0; j < B.rows(); ++j) s += kernel(k, A.row(i), B.row(j));
    return s;
  };
  // Both loop orders so that swapping X and Y gives the same bits.
  const double sxy = 0.5 * (cross(X, Y) + cross(Y, X));
  const double wx = within(X), wy = within(Y);
  return (wx + wy) - 2.0 * sxy / (static_cast<double>(X.rows()) * static_cast<double>(Y.rows()));
}

AggregatedMmd aggregated_mmd(const Eigen::Ref<const Matrix>& X, const Eigen::Ref<const Matrix>& Y,
                             const MmdConfig& cfg) {
  check_sizes(X.rows(), Y.rows(), cfg.estimator);
  const PooledBank bank = make_bank(pool(X, Y), cfg);
  const auto g = split_labels(X.rows(), Y.rows());
  std::vector<double> values;
  for (const Matrix& K : bank.grams) values.push_back(mmd2_from_gram(K, g, cfg.estimator));
  return aggregate(bank.kernels, std::move(values));
}

std::vector<Matrix> layer_samples(const std::vector<Network>& nets) {
  if (nets.empty()) throw Error(ErrorCode::InvalidArgument, "no checkpoints");
  std::vector<Matrix> out;
  for (std::size_t l = 0; l < nets.front().layers.size(); ++l) {
    Matrix rows(static_cast<Eigen::Index>(nets.size()), parameter_count(nets.front().layers[l]));
    for (std::size_t i = 0; i < nets.size(); ++i) {
      if (!(nets[i].spec == nets.front().spec))
        throw Error(ErrorCode::ShapeMismatch, "checkpoints have different specs");
      rows.row(static_cast<Eigen::Index>(i)) = flatten_layer(nets[i].layers[l]).transpose();
    }
    out.push_back(std::move(rows));
  }
  return out;
}

std::vector<Network> canonicalize_all(const std::vector<Network>& nets,
                                      const CanonicalizeConfig& cfg, int threads) {
  std::vector<Network> out(nets.size());
  parallel_for(nets.size(), threads, [&](std::size_t i) { out[i] = canonicalize(nets[i], cfg).net; });
  return out;
}

namespace {

struct PreparedLayers {
  std::vector<Matrix> pooled;
  std::vector<Eigen::Index> counts;
  Eigen::Index nx = 0, ny = 0;
};

PreparedLayers prepare(const std::vector<Network>& a, const std::vector<Network>& b,
                       bool canonicalize_first, const CanonicalizeConfig& canon, int threads) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::InvalidArgument, "both posteriors need checkpoints");
  if (!(a.front().spec == b.front().spec))
    throw Error(ErrorCode::ShapeMismatch, "posterior samples have different specs");
  const auto la = layer_samples(canonicalize_first ? canonicalize_all(a, canon, threads) : a);
  const auto lb = layer_samples(canonicalize_first ? canonicalize_all(b, canon, threads) : b);
  PreparedLayers p;
  p.nx = static_cast<Eigen::Index>(a.size());
  p.ny = static_cast<Eigen::Index>(b.size());
  for (std::size_t l = 0; l < la.size(); ++l) {
    p.pooled.push_back(pool(la[l], lb[l]));
    p.counts.push_back(la[l].cols());
  }
  return p;
}

}  // namespace

LayerwiseMmdReport layerwise_posterior_mmd(const std::vector<Network>& a,
                                           const std::vector<Network>& b, const MmdConfig& cfg,
                                           bool canonicalize_first,
                                           const CanonicalizeConfig& canon, int threads) {
  check_sizes(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(b.size()), cfg.estimator);
  const PreparedLayers p = prepare(a, b, canonicalize_first, canon, threads);
  LayerwiseMmdReport rep;
  rep.layers.resize(p.pooled.size());
  const auto g = split_labels(p.nx, p.ny);
  parallel_for(p.pooled.size(), threads, [&](std::size_t l) {
    const PooledBank bank = make_bank(p.pooled[l], cfg);
    std::vector<double> values;
    for (const Matrix& K : bank.grams) values.push_back(mmd2_from_gram(K, g, cfg.estimator));
    rep.layers[l] = LayerMmd{"layers." + std::to_string(l), p.counts[l],
                             aggregate(bank.kernels, std::move(values))};
  });
  for (const LayerMmd& l : rep.layers) {
    const double w = static_cast<double>(l.parameter_count);
    rep.total_parameters += l.parameter_count;
    rep.weighted_squared.median += w * l.mmd.squared.median;
    rep.weighted_squared.mean += w * l.mmd.squared.mean;
    rep.weighted_squared.max += w * l.mmd.squared.max;
    rep.weighted_root.median += w * l.mmd.root.median;
    rep.weighted_root.mean += w * l.mmd.root.mean;
    rep.weighted_root.max += w * l.mmd.root.max;
  }
  const double total = static_cast<double>(rep.total_parameters);
  for (Summary* s : {&rep.weighted_squared, &rep.weighted_root}) {
    s->median /= total;
    s->mean /= total;
    s->max /= total;
  }
  return rep;
}

double PermutationTest::null_quantile(double q) const {
  if (null.empty()) throw Error(ErrorCode::InvalidArgument, "empty permutation null");
  std::vector<double> v = null;
  std::sort(v.begin(), v.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

namespace {

// stats[perm] = sum over layers of weight * median over the bank; perm 0 is the observed split.
std::vector<double> permutation_statistics(const std::vector<Matrix>& pooled,
                                           const std::vector<double>& weights, Eigen::Index nx,
                                           Eigen::Index ny, const MmdConfig& cfg,
                                           int n_permutations, std::uint64_t seed, int threads) {
  std::vector<std::vector<char>> splits{split_labels(nx, ny)};
  auto rng = make_rng(seed, 0x9e3779b9);
  for (int p = 0; p < n_permutations; ++p) {
    std::vector<char> g = splits.front();
    shuffle(g, rng);
    splits.push_back(std::move(g));
  }
  std::vector<double> stats(splits.size(), 0.0);
  for (std::size_t l = 0; l < pooled.size(); ++l) {
    const PooledBank bank = make_bank(pooled[l], cfg);
    std::vector<std::vector<double>> per(splits.size(), std::vector<double>(bank.grams.size()));
    parallel_for(splits.size(), threads, [&](std::size_t s) {
      for (std::size_t k = 0; k < bank.grams.size(); ++k)
        per[s][k] = mmd2_from_gram(bank.grams[k], splits[s], cfg.estimator);
    });
    for (std::size_t s = 0; s < splits.size(); ++s) stats[s] += weights[l] * summarize(per[s]).median;
  }
  return stats;
}

PermutationTest finish(std::vector<double> stats) {
  PermutationTest t;
  t.observed = stats.front();
  t.null.assign(stats.begin() + 1, stats.end());
  t.p_value = p_value_of(t.observed, t.null);
  return t;
}

}  // namespace

PermutationTest layerwise_permutation_test(const std::vector<Network>& a,
                                           const std::vector<Network>& b, const MmdConfig& cfg,
                                           bool canonicalize_first, int n_permutations,
                                           std::uint64_t seed, const CanonicalizeConfig& canon,
                                           int threads) {
  check_sizes(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(b.size()), cfg.estimator);
  if (n_permutations < 1) throw Error(ErrorCode::InvalidArgument, "need at least one permutation");
  const PreparedLayers p = prepare(a, b, canonicalize_first, canon, threads);
  double total = 0.0;
  for (Eigen::Index c : p.counts) total += static_cast<double>(c);
  std::vector<double> weights;
  for (Eigen::Index c : p.counts) weights.push_back(static_cast<double>(c) / total);
  return finish(permutation_statistics(p.pooled, weights, p.nx, p.ny, cfg, n_permutations, seed, threads));
}

PermutationTest mmd_permutation_test(const Eigen::Ref<const Matrix>& X,
                                     const Eigen::Ref<const Matrix>& Y, const MmdConfig& cfg,
                                     int n_permutations, std::uint64_t seed) {
  check_sizes(X.rows(), Y.rows(), cfg.estimator);
  if (n_permutations < 1) throw Error(ErrorCode::InvalidArgument, "need at least one permutation");
  return finish(permutation_statistics({pool(X, Y)}, {1.0}, X.rows(), Y.rows(), cfg, n_permutations,
                                       seed, 1));
}

}  // namespace netsym
