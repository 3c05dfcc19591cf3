#include "netsym/training.hpp"

#include "netsym/checkpoint.hpp"
#include "netsym/metrics.hpp"
#include "netsym/parallel.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

namespace netsym {

LossKind parse_loss(const std::string& name) {
  if (name == "bce") return LossKind::BinaryCrossEntropy;
  if (name == "cross_entropy" || name == "ce") return LossKind::CrossEntropy;
  throw Error(ErrorCode::InvalidArgument, "unknown loss '" + name + "'");
}

const char* to_string(LossKind loss) {
  return loss == LossKind::BinaryCrossEntropy ? "bce" : "cross_entropy";
}

void TrainConfig::validate() const {
  if (epochs < 0) throw Error(ErrorCode::InvalidArgument, "epochs must be >= 0");
  if (batch_size < 1) throw Error(ErrorCode::InvalidArgument, "batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) throw Error(ErrorCode::InvalidArgument, "learning rate must be >= 0");
  if (!(weight_decay >= 0.0)) throw Error(ErrorCode::InvalidArgument, "weight_decay must be >= 0");
  if (momentum < 0.0 || momentum >= 1.0) throw Error(ErrorCode::InvalidArgument, "momentum must be in [0, 1)");
  if (lr_decay_epochs < 0 || !(lr_decay_factor > 0.0))
    throw Error(ErrorCode::InvalidArgument, "invalid learning-rate decay");
}

double TrainConfig::learning_rate_at(int epoch) const {
  if (lr_decay_epochs <= 0) return learning_rate;
  return learning_rate / std::pow(lr_decay_factor, epoch / lr_decay_epochs);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"lr_decay_epochs", c.lr_decay_epochs},
                     {"lr_decay_factor", c.lr_decay_factor},
                     {"weight_decay", c.weight_decay},
                     {"momentum", c.momentum},
                     {"loss", to_string(c.loss)},
                     {"seed", c.seed},
                     {"loss_threshold", c.loss_threshold},
                     {"optimizer", "sgd"}};
  j["permutation_tracking"] =
      c.permutation_tracking ? nlohmann::json(to_string(*c.permutation_tracking)) : nlohmann::json("off");
}

namespace {

void require_mlp(const Network& net) {
  for (const LayerSpec& L : net.spec.layers)
    if (L.kind != LayerKind::Linear)
      throw Error(ErrorCode::Unsupported, "training supports fully connected networks only");
}

// Per-row loss on logits z and its derivative with respect to z.
double loss_rows(const Matrix& z, const Eigen::Ref<const Eigen::VectorXi>& labels, LossKind kind,
                 Matrix* dz) {
  const Eigen::Index n = z.rows();
  double total = 0.0;
  if (dz) dz->resize(z.rows(), z.cols());
  if (kind == LossKind::BinaryCrossEntropy) {
    if (z.cols() != 1) throw Error(ErrorCode::ShapeMismatch, "bce needs a single output");
    for (Eigen::Index i = 0; i < n; ++i) {
      const double y = labels[i], v = z(i, 0);
      if (y != 0.0 && y != 1.0) throw Error(ErrorCode::InvalidArgument, "bce labels must be 0/1");
      total += std::max(v, 0.0) - y * v + std::log1p(std::exp(-std::abs(v)));
      if (dz) (*dz)(i, 0) = 1.0 / (1.0 + std::exp(-v)) - y;
    }
  } else {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (labels[i] < 0 || labels[i] >= z.cols())
        throw Error(ErrorCode::InvalidArgument, "label out of class range");
      const double m = z.row(i).maxCoeff();
      const double lse = m + std::log((z.row(i).array() - m).exp().sum());
      total += lse - z(i, labels[i]);
      if (dz) {
        dz->row(i) = (z.row(i).array() - lse).exp().matrix();
        (*dz)(i, labels[i]) -= 1.0;
      }
    }
  }
  if (dz) *dz /= static_cast<double>(n);
  return total / static_cast<double>(n);
}

}  // namespace

LossGradient loss_and_gradient(const Network& net, const Eigen::Ref<const Matrix>& inputs,
                               const Eigen::Ref<const Eigen::VectorXi>& labels, LossKind loss) {
  require_mlp(net);
  if (inputs.cols() != net.spec.input_dim())
    throw Error(ErrorCode::ShapeMismatch, "data dimension does not match the network input");
  if (inputs.rows() == 0 || labels.size() != inputs.rows())
    throw Error(ErrorCode::ShapeMismatch, "inputs and labels differ in length");
  const std::size_t n = net.layers.size();
  std::vector<Matrix> acts{inputs}, pre;
  for (std::size_t l = 0; l < n; ++l) {
    const LayerParams& P = net.layers[l];
    Matrix z = acts.back() * P.weight.transpose();
    if (P.bias.size()) z.rowwise() += P.bias.transpose();
    pre.push_back(z);
    if (l + 1 < n) acts.push_back(z.cwiseMax(0.0));
  }
  LossGradient out;
  Matrix dz;
  out.loss = loss_rows(pre.back(), labels, loss, &dz);
  out.grads.resize(n);
  for (std::size_t l = n; l-- > 0;) {
    const LayerParams& P = net.layers[l];
    out.grads[l].weight = dz.transpose() * acts[l];
    if (P.bias.size()) out.grads[l].bias = dz.colwise().sum().transpose();
    if (l > 0) {
      Matrix da = dz * P.weight;
      dz = (pre[l - 1].array() > 0.0).select(da, 0.0);
    }
  }
  return out;
}

double dataset_loss(const Network& net, const Dataset& data, LossKind loss) {
  require_mlp(net);
  return loss_rows(logits_batch(net, data.inputs), data.labels, loss, nullptr);
}

std::vector<Eigen::Index> epoch_order(Eigen::Index n, std::uint64_t seed, int epoch) {
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  auto rng = make_rng(seed, 0x100000000ULL + static_cast<std::uint64_t>(epoch));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  return order;
}

TrainTrace sgd_train(const Network& init, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  require_mlp(init);
  if (data.size() == 0) throw Error(ErrorCode::InvalidArgument, "empty training set");
  TrainTrace trace;
  Network net = init;
  std::vector<LayerParams> velocity;
  if (cfg.momentum > 0.0) {
    for (const LayerParams& P : net.layers) {
      LayerParams v;
      v.weight = Matrix::Zero(P.weight.rows(), P.weight.cols());
      v.bias = Vector::Zero(P.bias.size());
      velocity.push_back(std::move(v));
    }
  }
  const Eigen::Index n = data.size();
  trace.steps_per_epoch = static_cast<int>((n + cfg.batch_size - 1) / cfg.batch_size);
  if (cfg.permutation_tracking)
    trace.permutations.push_back(remove_permutations(net, *cfg.permutation_tracking).perm);

  Matrix xb;
  Eigen::VectorXi yb;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.learning_rate_at(epoch);
    const auto order = epoch_order(n, cfg.seed, epoch);
    for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
      const Eigen::Index b = std::min<Eigen::Index>(cfg.batch_size, n - start);
      xb.resize(b, data.inputs.cols());
      yb.resize(b);
      for (Eigen::Index i = 0; i < b; ++i) {
        xb.row(i) = data.inputs.row(order[start + i]);
        yb[i] = data.labels[order[start + i]];
      }
      LossGradient lg = loss_and_gradient(net, xb, yb, cfg.loss);
      if (!std::isfinite(lg.loss))
        throw Error(ErrorCode::Numerical, "non-finite loss at step " +
                                              std::to_string(trace.step_losses.size()));
      trace.step_losses.push_back(lg.loss);
      for (std::size_t l = 0; l < net.layers.size(); ++l) {
        LayerParams& P = net.layers[l];
        Matrix gw = lg.grads[l].weight + cfg.weight_decay * P.weight;
        if (cfg.momentum > 0.0) {
          velocity[l].weight = cfg.momentum * velocity[l].weight + gw;
          P.weight -= lr * velocity[l].weight;
          if (P.bias.size()) {
            velocity[l].bias = cfg.momentum * velocity[l].bias + lg.grads[l].bias;
            P.bias -= lr * velocity[l].bias;
          }
        } else {
          P.weight -= lr * gw;
          if (P.bias.size()) P.bias -= lr * lg.grads[l].bias;
        }
      }
      if (cfg.permutation_tracking)
        trace.permutations.push_back(remove_permutations(net, *cfg.permutation_tracking).perm);
    }
  }
  trace.final_loss = dataset_loss(net, data, cfg.loss);
  trace.final_net = std::move(net);
  return trace;
}

CheckpointDataset train_posterior_dataset(const ArchitectureSpec& spec, const Dataset& data,
                                          const TrainConfig& cfg, int count,
                                          const std::string& out_dir, const EnsembleOptions& opts) {
  if (count < 1) throw Error(ErrorCode::InvalidArgument, "count must be >= 1");
  cfg.validate();
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + out_dir + ": " + ec.message());

  CheckpointDataset ds;
  ds.dir = out_dir;
  ds.spec = spec;
  ds.spec_hash = spec_hash(spec);
  ds.task = opts.task;
  ds.train_config = cfg;
  ds.loss_threshold = cfg.loss_threshold;
  ds.entries.resize(count);
  parallel_for(static_cast<std::size_t>(count), opts.threads, [&](std::size_t i) {
    CheckpointEntry& e = ds.entries[i];
    char name[32];
    std::snprintf(name, sizeof name, "ckpt_%05zu.nnck", i);
    e.file = name;
    e.seed = cfg.seed + i;
    try {
      TrainConfig local = cfg;
      local.seed = e.seed;
      local.permutation_tracking.reset();
      const TrainTrace trace = sgd_train(build_network(spec, e.seed), data, local);
      e.final_loss = trace.final_loss;
      e.accepted = trace.final_loss <= cfg.loss_threshold;
      save_checkpoint(trace.final_net, ds.path(e),
                      {{"seed", e.seed}, {"final_loss", e.final_loss}, {"accepted", e.accepted}});
    } catch (const Error& err) {
      e.accepted = false;
      e.error = std::string(to_string(err.code())) + ": " + err.what();
    }
  });
  write_manifest(ds);
  return ds;
}

EquivarianceReport equivariance_check(const ArchitectureSpec& spec, const Dataset& data,
                                      const TrainConfig& cfg, const PermutationSet& perm,
                                      std::uint64_t init_seed,
                                      std::optional<std::uint64_t> second_run_seed, double tol) {
  perm.validate(spec);
  TrainConfig plain = cfg;
  plain.permutation_tracking.reset();
  const Network theta0 = build_network(spec, init_seed);
  const Network first = sgd_train(theta0, data, plain).final_net;
  TrainConfig second_cfg = plain;
  if (second_run_seed) second_cfg.seed = *second_run_seed;
  const Network second = sgd_train(apply_permutation(theta0, perm), data, second_cfg).final_net;
  const Network expected = apply_permutation(first, perm);
  EquivarianceReport rep;
  for (std::size_t l = 0; l < expected.layers.size(); ++l) {
    rep.max_weight_dev = std::max(rep.max_weight_dev,
                                  (flatten_layer(second.layers[l]) - flatten_layer(expected.layers[l]))
                                      .cwiseAbs()
                                      .maxCoeff());
  }
  rep.pass = rep.max_weight_dev <= tol;
  return rep;
}

TauSeries track_permutations(const TrainTrace& trace) {
  if (trace.permutations.empty())
    throw Error(ErrorCode::InvalidArgument, "trace was recorded without permutation tracking");
  TauSeries out;
  const std::size_t n_if = trace.permutations.front().perms.size();
  std::vector<std::size_t> used;
  for (std::size_t k = 0; k < n_if; ++k)
    if (trace.permutations.front().perms[k].size() >= 2) used.push_back(k);
  out.per_interface.assign(used.size(), {});
  for (std::size_t s = 0; s + 1 < trace.permutations.size(); ++s) {
    double sum = 0.0;
    for (std::size_t u = 0; u < used.size(); ++u) {
      const double tau = kendall_tau(trace.permutations[s].perms[used[u]],
                                     trace.permutations[s + 1].perms[used[u]]);
      out.per_interface[u].push_back(tau);
      sum += tau;
    }
    out.mean.push_back(used.empty() ? 1.0 : sum / static_cast<double>(used.size()));
  }
  return out;
}

EnsemblePrediction ensemble_predict(const std::vector<Network>& members,
                                    const Eigen::Ref<const Matrix>& inputs) {
  if (members.empty()) throw Error(ErrorCode::InvalidArgument, "ensemble has no members");
  EnsemblePrediction out;
  for (const Network& m : members) {
    if (!(m.spec == members.front().spec))
      throw Error(ErrorCode::ShapeMismatch, "ensemble members have different specs");
    out.members.push_back(predict_proba(m, inputs));
  }
  out.mean = Matrix::Zero(out.members.front().rows(), out.members.front().cols());
  for (const Matrix& p : out.members) out.mean += p;
  out.mean /= static_cast<double>(out.members.size());
  return out;
}

}  // namespace netsym
