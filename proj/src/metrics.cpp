#include "netsym/metrics.hpp"

#include <cmath>

namespace netsym {

namespace {

void check_labelled(const Eigen::Ref<const Matrix>& probs, const Eigen::Ref<const Eigen::VectorXi>& labels) {
  if (probs.rows() == 0) throw Error(ErrorCode::InvalidArgument, "empty prediction batch");
  if (labels.size() != probs.rows())
    throw Error(ErrorCode::ShapeMismatch, "labels and predictions differ in length");
  if (labels.minCoeff() < 0 || labels.maxCoeff() >= probs.cols())
    throw Error(ErrorCode::InvalidArgument, "label out of class range");
}

Eigen::Index argmax_row(const Eigen::Ref<const Matrix>& probs, Eigen::Index i) {
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < probs.cols(); ++c)
    if (probs(i, c) > probs(i, best)) best = c;
  return best;
}

void check_scores(const OodScoreSet& s) {
  if (s.scores.size() != s.labels.size())
    throw Error(ErrorCode::ShapeMismatch, "scores and labels differ in length");
  const Eigen::Index pos = (s.labels.array() == 1).count();
  const Eigen::Index neg = (s.labels.array() == 0).count();
  if (pos + neg != s.labels.size()) throw Error(ErrorCode::InvalidArgument, "OOD labels must be 0/1");
  if (pos == 0 || neg == 0)
    throw Error(ErrorCode::InvalidArgument, "OOD metrics need both in- and out-of-distribution samples");
}

// (tp, fp) after each distinct threshold, scanning scores in descending order.
struct Counts {
  std::vector<double> tp, fp;
  double positives = 0, negatives = 0;
};

Counts threshold_counts(const OodScoreSet& s) {
  std::vector<Eigen::Index> order(s.scores.size());
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index a, Eigen::Index b) { return s.scores[a] > s.scores[b]; });
  Counts c;
  double tp = 0, fp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    (s.labels[order[k]] == 1 ? tp : fp) += 1;
    if (k + 1 == order.size() || s.scores[order[k + 1]] != s.scores[order[k]]) {
      c.tp.push_back(tp);
      c.fp.push_back(fp);
    }
  }
  c.positives = tp;
  c.negatives = fp;
  return c;
}

}  // namespace

void PredictionBatch::validate() const {
  if (probs.rows() == 0) throw Error(ErrorCode::InvalidArgument, "empty prediction batch");
  if ((probs.array() < 0.0).any() || (probs.array() > 1.0).any())
    throw Error(ErrorCode::InvalidArgument, "probabilities must lie in [0, 1]");
  if (((probs.rowwise().sum().array() - 1.0).abs() > 1e-9).any())
    throw Error(ErrorCode::InvalidArgument, "probability rows must sum to 1");
  if (labels.size()) check_labelled(probs, labels);
}

double accuracy(const Eigen::Ref<const Matrix>& probs, const Eigen::Ref<const Eigen::VectorXi>& labels) {
  check_labelled(probs, labels);
  Eigen::Index hits = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) hits += argmax_row(probs, i) == labels[i];
  return static_cast<double>(hits) / static_cast<double>(probs.rows());
}

double brier(const Eigen::Ref<const Matrix>& probs, const Eigen::Ref<const Eigen::VectorXi>& labels) {
  check_labelled(probs, labels);
  double total = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
      const double d = probs(i, c) - (c == labels[i] ? 1.0 : 0.0);
      total += d * d;
    }
  }
  return total / static_cast<double>(probs.rows());
}

double ece(const Eigen::Ref<const Matrix>& probs, const Eigen::Ref<const Eigen::VectorXi>& labels,
           int n_bins) {
  check_labelled(probs, labels);
  if (n_bins < 1) throw Error(ErrorCode::InvalidArgument, "ece needs at least one bin");
  std::vector<double> conf(n_bins, 0.0), hits(n_bins, 0.0), count(n_bins, 0.0);
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const Eigen::Index top = argmax_row(probs, i);
    const double p = probs(i, top);
    int bin = static_cast<int>(std::ceil(p * n_bins)) - 1;
    bin = std::clamp(bin, 0, n_bins - 1);
    conf[bin] += p;
    hits[bin] += top == labels[i];
    count[bin] += 1;
  }
  double total = 0.0;
  for (int b = 0; b < n_bins; ++b)
    if (count[b] > 0) total += std::abs(hits[b] - conf[b]);
  return total / static_cast<double>(probs.rows());
}

double aupr(const OodScoreSet& s) {
  check_scores(s);
  const Counts c = threshold_counts(s);
  double area = 0.0, prev_recall = 0.0;
  for (std::size_t k = 0; k < c.tp.size(); ++k) {
    const double recall = c.tp[k] / c.positives;
    const double precision = c.tp[k] / (c.tp[k] + c.fp[k]);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return area;
}

double fpr_at_95_tpr(const OodScoreSet& s) {
  check_scores(s);
  const Counts c = threshold_counts(s);
  double best = 1.0;
  for (std::size_t k = 0; k < c.tp.size(); ++k)
    if (c.tp[k] / c.positives >= 0.95) best = std::min(best, c.fp[k] / c.negatives);
  return best;
}

Vector entropy_rows(const Eigen::Ref<const Matrix>& probs) {
  Vector h(probs.rows());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    double acc = 0.0;
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
      const double p = probs(i, c);
      if (p > 0.0) acc -= p * std::log(p);
    }
    h[i] = acc;
  }
  return h;
}

MutualInformation mutual_information(const std::vector<Matrix>& members) {
  if (members.empty()) throw Error(ErrorCode::InvalidArgument, "mutual information needs a member");
  const Matrix& first = members.front();
  Matrix mean = Matrix::Zero(first.rows(), first.cols());
  Vector mean_entropy = Vector::Zero(first.rows());
  for (const Matrix& m : members) {
    if (m.rows() != first.rows() || m.cols() != first.cols())
      throw Error(ErrorCode::ShapeMismatch, "ensemble members differ in shape");
    mean += m;
    mean_entropy += entropy_rows(m);
  }
  const double k = static_cast<double>(members.size());
  mean /= k;
  mean_entropy /= k;
  MutualInformation mi;
  mi.per_sample = entropy_rows(mean) - mean_entropy;
  mi.mean = mi.per_sample.size() ? mi.per_sample.mean() : 0.0;
  return mi;
}

double kolmogorov_q(double lambda) {
  if (lambda < 1e-3) return 1.0;
  const double a2 = -2.0 * lambda * lambda;
  double sum = 0.0, sign = 1.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = sign * 2.0 * std::exp(a2 * k * k);
    sum += term;
    if (std::abs(term) < 1e-10) return std::clamp(sum, 0.0, 1.0);
    sign = -sign;
  }
  return 1.0;  // series failed to converge, only happens for tiny lambda
}

KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::InvalidArgument, "KS test needs non-empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double m = static_cast<double>(a.size()), n = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / m - static_cast<double>(j) / n));
  }
  KsResult r;
  r.statistic = d;
  const double en = std::sqrt(m * n / (m + n));
  r.p_value = kolmogorov_q((en + 0.12 + 0.11 / en) * d);
  return r;
}

}  // namespace netsym
