#include "netsym/task.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

namespace netsym {

SyntheticTask SyntheticTask::two_gaussians(std::uint64_t seed, int n_per_class) {
  SyntheticTask t;
  t.kind = TaskKind::TwoGaussians;
  t.means = {Vector::Constant(2, -2.0), Vector::Constant(2, 2.0)};
  t.n_per_class = n_per_class;
  t.seed = seed;
  return t;
}

void to_json(nlohmann::json& j, const SyntheticTask& t) {
  j = nlohmann::json::object();
  j["kind"] = t.kind == TaskKind::TwoGaussians ? "two_gaussians" : "k_gaussians";
  nlohmann::json means = nlohmann::json::array();
  for (const Vector& m : t.means) means.push_back(std::vector<double>(m.data(), m.data() + m.size()));
  j["means"] = means;
  j["covariance"] = "identity";
  j["n_per_class"] = t.n_per_class;
  j["seed"] = t.seed;
  j["separability_check"] = t.separability_check;
}

bool linearly_separable(const Matrix& a, const Matrix& b, int max_epochs) {
  const Eigen::Index d = a.cols();
  Vector w = Vector::Zero(d + 1);
  auto margin = [&](const auto& x, double y) {
    return y * (w.head(d).dot(x.transpose()) + w[d]);
  };
  for (int epoch = 0; epoch < max_epochs; ++epoch) {
    bool clean = true;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      if (margin(a.row(i), -1.0) <= 0.0) {
        w.head(d) -= a.row(i).transpose();
        w[d] -= 1.0;
        clean = false;
      }
    }
    for (Eigen::Index i = 0; i < b.rows(); ++i) {
      if (margin(b.row(i), 1.0) <= 0.0) {
        w.head(d) += b.row(i).transpose();
        w[d] += 1.0;
        clean = false;
      }
    }
    if (clean) return true;
  }
  return false;
}

namespace {

Dataset draw(const SyntheticTask& task, std::uint64_t seed) {
  const Eigen::Index d = task.means.front().size();
  const Eigen::Index k = static_cast<Eigen::Index>(task.means.size());
  Dataset data;
  data.inputs.resize(k * task.n_per_class, d);
  data.labels.resize(k * task.n_per_class);
  auto rng = make_rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index c = 0; c < k; ++c) {
    for (int i = 0; i < task.n_per_class; ++i) {
      const Eigen::Index r = c * task.n_per_class + i;
      for (Eigen::Index j = 0; j < d; ++j) data.inputs(r, j) = task.means[c][j] + normal(rng);
      data.labels[r] = static_cast<int>(c);
    }
  }
  return data;
}

bool all_pairs_separable(const SyntheticTask& task, const Dataset& data) {
  const int n = task.n_per_class;
  for (std::size_t a = 0; a < task.means.size(); ++a)
    for (std::size_t b = a + 1; b < task.means.size(); ++b)
      if (!linearly_separable(data.inputs.middleRows(a * n, n), data.inputs.middleRows(b * n, n)))
        return false;
  return true;
}

}  // namespace

Dataset gen_task(const SyntheticTask& task) {
  if (task.means.size() < 2) throw Error(ErrorCode::InvalidArgument, "need at least two classes");
  if (task.kind == TaskKind::TwoGaussians && task.means.size() != 2)
    throw Error(ErrorCode::InvalidArgument, "two_gaussians needs exactly two means");
  if (task.n_per_class < 1) throw Error(ErrorCode::InvalidArgument, "n_per_class must be >= 1");
  for (const Vector& m : task.means)
    if (m.size() != task.means.front().size() || m.size() < 1)
      throw Error(ErrorCode::InvalidArgument, "class means must share a positive dimension");

  if (!task.separability_check) return draw(task, task.seed);
  for (int attempt = 0; attempt < task.max_retries; ++attempt) {
    // attempt 0 uses the seed itself so unchecked and checked draws agree when possible
    Dataset data = draw(task, attempt == 0 ? task.seed : fnv1a(std::to_string(task.seed) + "/" +
                                                                 std::to_string(attempt)));
    if (all_pairs_separable(task, data)) return data;
  }
  throw Error(ErrorCode::Numerical, "no linearly separable sample after " +
                                        std::to_string(task.max_retries) + " retries");
}

void save_dataset(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  const bool labeled = data.labels.size() > 0;
  if (labeled && data.labels.size() != data.size())
    throw Error(ErrorCode::ShapeMismatch, "inputs and labels differ in length");
  const Eigen::Index d = data.inputs.cols();
  for (Eigen::Index j = 0; j < d; ++j) out << 'x' << j << (j + 1 < d || labeled ? "," : "");
  out << (labeled ? "label\n" : "\n");
  out << std::setprecision(17);
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    for (Eigen::Index j = 0; j < d; ++j) out << data.inputs(i, j) << (j + 1 < d || labeled ? "," : "");
    if (labeled) out << data.labels[i];
    out << '\n';
  }
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::Format, path + ": empty file");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  const bool has_label = !header.empty() && header.back() == "label";
  const std::size_t d = header.size() - (has_label ? 1 : 0);
  if (d == 0) throw Error(ErrorCode::Format, path + ": no feature columns");
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw Error(ErrorCode::Format, path + ":" + std::to_string(lineno) + ": bad number '" + cell + "'");
      }
    }
    if (row.size() != header.size())
      throw Error(ErrorCode::Format, path + ":" + std::to_string(lineno) + ": expected " +
                                         std::to_string(header.size()) + " columns");
    if (has_label) {
      labels.push_back(static_cast<int>(row.back()));
      row.pop_back();
    }
    rows.push_back(std::move(row));
  }
  Dataset data;
  data.inputs.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) data.inputs(i, j) = rows[i][j];
  data.labels = Eigen::Map<Eigen::VectorXi>(labels.data(), static_cast<Eigen::Index>(labels.size()));
  return data;
}

}  // namespace netsym
