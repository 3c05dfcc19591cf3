#include "netsym/collapse.hpp"

#include "netsym/metrics.hpp"
#include "netsym/parallel.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <numeric>

namespace netsym {

PearsonResult pearson_rho(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw Error(ErrorCode::ShapeMismatch, "pearson: length mismatch");
  if (x.size() < 3) throw Error(ErrorCode::InvalidArgument, "pearson: need at least three points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxy += (x[k] - mx) * (y[k] - my);
    sxx += (x[k] - mx) * (x[k] - mx);
    syy += (y[k] - my) * (y[k] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(ErrorCode::Degenerate, "pearson: zero variance");
  PearsonResult r;
  r.rho = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double dof = n - 2.0;
  if (std::abs(r.rho) >= 1.0) {
    r.p_value = 0.0;
  } else {
    const double t = r.rho * std::sqrt(dof / (1.0 - r.rho * r.rho));
    boost::math::students_t dist(dof);
    r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  }
  return r;
}

namespace {

std::vector<std::pair<int, int>> choose_pairs(int n, long long n_pairs, std::uint64_t seed) {
  std::vector<std::pair<int, int>> all;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) all.emplace_back(i, j);
  if (n_pairs >= static_cast<long long>(all.size())) return all;
  auto rng = make_rng(seed, 0xc011a95e);
  for (std::size_t k = 0; k < static_cast<std::size_t>(n_pairs); ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, all.size() - 1);
    std::swap(all[k], all[pick(rng)]);
  }
  all.resize(static_cast<std::size_t>(n_pairs));
  std::sort(all.begin(), all.end());
  return all;
}

std::pair<double, double> mean_var(const std::vector<PairMi>& pairs, bool ood) {
  double mean = 0.0;
  for (const PairMi& p : pairs) mean += ood ? p.ood_mi : p.id_mi;
  mean /= static_cast<double>(pairs.size());
  double var = 0.0;
  for (const PairMi& p : pairs) {
    const double d = (ood ? p.ood_mi : p.id_mi) - mean;
    var += d * d;
  }
  return {mean, var / static_cast<double>(pairs.size())};
}

}  // namespace

PairwiseMiReport pairwise_mi(const std::vector<Network>& members,
                             const Eigen::Ref<const Matrix>& id_inputs,
                             const Eigen::Ref<const Matrix>& ood_inputs, long long n_pairs,
                             std::uint64_t seed, int threads) {
  if (members.size() < 2) throw Error(ErrorCode::InvalidArgument, "collapse needs at least two checkpoints");
  if (n_pairs < 1) throw Error(ErrorCode::InvalidArgument, "n_pairs must be >= 1");
  if (id_inputs.rows() == 0 || ood_inputs.rows() == 0)
    throw Error(ErrorCode::InvalidArgument, "collapse needs ID and OOD inputs");
  std::vector<Matrix> id_probs(members.size()), ood_probs(members.size());
  parallel_for(members.size(), threads, [&](std::size_t m) {
    id_probs[m] = predict_proba(members[m], id_inputs);
    ood_probs[m] = predict_proba(members[m], ood_inputs);
  });

  PairwiseMiReport rep;
  const auto chosen = choose_pairs(static_cast<int>(members.size()), n_pairs, seed);
  rep.pairs.resize(chosen.size());
  parallel_for(chosen.size(), threads, [&](std::size_t k) {
    const auto [i, j] = chosen[k];
    rep.pairs[k] = PairMi{i, j, mutual_information({id_probs[i], id_probs[j]}).mean,
                          mutual_information({ood_probs[i], ood_probs[j]}).mean};
  });
  std::tie(rep.id_mean, rep.id_variance) = mean_var(rep.pairs, false);
  std::tie(rep.ood_mean, rep.ood_variance) = mean_var(rep.pairs, true);
  if (rep.pairs.size() >= 3 && rep.id_variance > 0.0 && rep.ood_variance > 0.0) {
    std::vector<double> x, y;
    for (const PairMi& p : rep.pairs) {
      x.push_back(p.id_mi);
      y.push_back(p.ood_mi);
    }
    rep.correlation = pearson_rho(x, y);
  }
  return rep;
}

PairwiseMiReport pairwise_mi(const CheckpointDataset& ds, const Eigen::Ref<const Matrix>& id_inputs,
                             const Eigen::Ref<const Matrix>& ood_inputs, long long n_pairs,
                             std::uint64_t seed, int threads) {
  return pairwise_mi(load_networks(ds, true, threads), id_inputs, ood_inputs, n_pairs, seed, threads);
}

Matrix shift_inputs(const Eigen::Ref<const Matrix>& inputs, double offset) {
  Matrix out = inputs;
  for (Eigen::Index c = 0; c < out.cols(); ++c) out.col(c).array() += c % 2 == 0 ? offset : -offset;
  return out;
}

}  // namespace netsym
