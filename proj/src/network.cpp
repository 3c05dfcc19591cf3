#include "netsym/network.hpp"

#include <cmath>

namespace netsym {

bool LayerParams::operator==(const LayerParams& o) const {
  auto same = [](const auto& a, const auto& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.size() == 0 || a == b);
  };
  return same(weight, o.weight) && same(bias, o.bias) && same(gamma, o.gamma) &&
         same(beta, o.beta) && same(running_mean, o.running_mean) &&
         same(running_var, o.running_var);
}

namespace {

void expect_shape(bool ok, std::size_t layer, const char* what) {
  if (!ok)
    throw Error(ErrorCode::ShapeMismatch,
                std::string(what) + " has the wrong shape at layer " + std::to_string(layer));
}

void expect_finite(const Eigen::Ref<const Eigen::MatrixXd>& m, std::size_t layer, const char* what) {
  if (!m.allFinite())
    throw Error(ErrorCode::Numerical,
                std::string("non-finite ") + what + " at layer " + std::to_string(layer));
}

Vector relu(const Vector& v) { return v.cwiseMax(0.0); }

Vector apply_conv(const LayerSpec& L, const LayerParams& P, const Shape& in_shape,
                  const Vector& x) {
  const int H = in_shape.height, W = in_shape.width;
  const int oh = H + 2 * L.padding - L.kernel_h + 1;
  const int ow = W + 2 * L.padding - L.kernel_w + 1;
  const int ipg = L.in_per_group(), opg = L.out_per_group();
  Vector out = Vector::Zero(static_cast<Eigen::Index>(L.out) * oh * ow);
  for (int o = 0; o < L.out; ++o) {
    const int g = o / opg;
    const double b = P.bias.size() ? P.bias[o] : 0.0;
    for (int y = 0; y < oh; ++y) {
      for (int xx = 0; xx < ow; ++xx) {
        double acc = b;
        for (int ci = 0; ci < ipg; ++ci) {
          const int c = g * ipg + ci;
          for (int i = 0; i < L.kernel_h; ++i) {
            const int iy = y + i - L.padding;
            if (iy < 0 || iy >= H) continue;
            for (int j = 0; j < L.kernel_w; ++j) {
              const int ix = xx + j - L.padding;
              if (ix < 0 || ix >= W) continue;
              acc += P.weight(o, (ci * L.kernel_h + i) * L.kernel_w + j) *
                     x[(static_cast<Eigen::Index>(c) * H + iy) * W + ix];
            }
          }
        }
        out[(static_cast<Eigen::Index>(o) * oh + y) * ow + xx] = acc;
      }
    }
  }
  return out;
}

Vector apply_batchnorm(const LayerParams& P, const Shape& shape, Vector x) {
  const int s = shape.spatial();
  for (int c = 0; c < shape.channels; ++c) {
    const double scale = P.gamma[c] / std::sqrt(P.running_var[c] + kBatchNormEps);
    auto seg = x.segment(static_cast<Eigen::Index>(c) * s, s);
    seg = ((seg.array() - P.running_mean[c]) * scale + P.beta[c]).matrix();
  }
  return x;
}

}  // namespace

void Network::validate() const {
  spec.validate();
  if (layers.size() != spec.layers.size())
    throw Error(ErrorCode::ShapeMismatch, "layer count differs from spec");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerSpec& L = spec.layers[l];
    const LayerParams& P = layers[l];
    if (L.has_weights()) {
      expect_shape(P.weight.rows() == L.out && P.weight.cols() == L.fan_in(), l, "weight");
      expect_shape(P.bias.size() == (L.has_bias ? L.out : 0), l, "bias");
      expect_shape(P.gamma.size() == 0 && P.running_var.size() == 0, l, "batchnorm vector");
      expect_finite(P.weight, l, "weight");
      expect_finite(P.bias, l, "bias");
    } else {
      expect_shape(P.weight.size() == 0 && P.bias.size() == 0, l, "weight");
      for (const Vector* v : {&P.gamma, &P.beta, &P.running_mean, &P.running_var}) {
        expect_shape(v->size() == L.out, l, "batchnorm vector");
        expect_finite(*v, l, "batchnorm vector");
      }
      if ((P.running_var.array() <= 0.0).any())
        throw Error(ErrorCode::Numerical,
                    "running_var must be strictly positive at layer " + std::to_string(l));
    }
  }
}

Network Network::zeros(const ArchitectureSpec& spec) {
  spec.validate();
  Network net;
  net.spec = spec;
  for (const LayerSpec& L : spec.layers) {
    LayerParams P;
    if (L.has_weights()) {
      P.weight = Matrix::Zero(L.out, L.fan_in());
      if (L.has_bias) P.bias = Vector::Zero(L.out);
    } else {
      P.gamma = Vector::Ones(L.out);
      P.beta = Vector::Zero(L.out);
      P.running_mean = Vector::Zero(L.out);
      P.running_var = Vector::Ones(L.out);
    }
    net.layers.push_back(std::move(P));
  }
  return net;
}

Network build_network(const ArchitectureSpec& spec, std::uint64_t seed) {
  Network net = Network::zeros(spec);
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const LayerSpec& L = spec.layers[l];
    if (!L.has_weights()) continue;
    auto rng = make_rng(seed, l);
    const double bound = 1.0 / std::sqrt(static_cast<double>(L.fan_in()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    LayerParams& P = net.layers[l];
    for (Eigen::Index i = 0; i < P.weight.size(); ++i) P.weight.data()[i] = dist(rng);
    for (Eigen::Index i = 0; i < P.bias.size(); ++i) P.bias[i] = dist(rng);
  }
  return net;
}

Vector logits(const Network& net, const Eigen::Ref<const Vector>& x) {
  if (x.size() != net.spec.input_dim())
    throw Error(ErrorCode::ShapeMismatch, "input has " + std::to_string(x.size()) +
                                              " values, network expects " +
                                              std::to_string(net.spec.input_dim()));
  const auto shapes = net.spec.shapes();
  const std::size_t n = net.layers.size();
  Vector a = x;
  for (std::size_t l = 0; l < n; ++l) {
    const LayerSpec& L = net.spec.layers[l];
    const LayerParams& P = net.layers[l];
    switch (L.kind) {
      case LayerKind::Linear:
        a = P.weight * a;
        if (P.bias.size()) a += P.bias;
        break;
      case LayerKind::Conv2d:
        a = apply_conv(L, P, shapes[l], a);
        break;
      case LayerKind::BatchNorm:
        a = apply_batchnorm(P, shapes[l], std::move(a));
        break;
    }
    const bool last = l + 1 == n;
    const bool next_is_bn = !last && net.spec.layers[l + 1].kind == LayerKind::BatchNorm;
    if (!last && !next_is_bn) a = relu(a);
  }
  return a;
}

Vector softmax(const Eigen::Ref<const Vector>& z) {
  const double m = z.maxCoeff();
  Vector e = (z.array() - m).exp().matrix();
  return e / e.sum();
}

namespace {

Vector activate(OutputActivation act, Vector z) {
  switch (act) {
    case OutputActivation::Softmax: return softmax(z);
    case OutputActivation::Sigmoid: return (1.0 / (1.0 + (-z.array()).exp())).matrix();
    case OutputActivation::None: return z;
  }
  return z;
}

}  // namespace

Vector forward(const Network& net, const Eigen::Ref<const Vector>& x) {
  return activate(net.spec.output_activation, logits(net, x));
}

Matrix logits_batch(const Network& net, const Eigen::Ref<const Matrix>& inputs) {
  Matrix out(inputs.rows(), net.spec.output_dim());
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) out.row(i) = logits(net, inputs.row(i).transpose());
  return out;
}

Matrix forward_batch(const Network& net, const Eigen::Ref<const Matrix>& inputs) {
  Matrix out(inputs.rows(), net.spec.output_dim());
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) out.row(i) = forward(net, inputs.row(i).transpose());
  return out;
}

Matrix predict_proba(const Network& net, const Eigen::Ref<const Matrix>& inputs) {
  const Matrix out = forward_batch(net, inputs);
  switch (net.spec.output_activation) {
    case OutputActivation::Softmax:
      return out;
    case OutputActivation::Sigmoid: {
      if (out.cols() != 1)
        throw Error(ErrorCode::Unsupported, "class probabilities need a single sigmoid output");
      Matrix p(out.rows(), 2);
      p.col(0) = (1.0 - out.col(0).array()).matrix();
      p.col(1) = out.col(0);
      return p;
    }
    case OutputActivation::None:
      break;
  }
  throw Error(ErrorCode::Unsupported, "class probabilities need a softmax or sigmoid head");
}

std::vector<double> layer_masses(const Network& net, const MassOptions& opts) {
  std::vector<double> out;
  for (const LayerParams& P : net.layers) {
    double m = P.weight.squaredNorm();
    if (opts.include_batchnorm_gamma) m += P.gamma.squaredNorm();
    out.push_back(m);
  }
  return out;
}

double network_mass(const Network& net, const MassOptions& opts) {
  double total = 0.0;
  for (double m : layer_masses(net, opts)) total += m;
  return total;
}

Eigen::Index parameter_count(const LayerParams& P) {
  return P.weight.size() + P.bias.size() + P.gamma.size() + P.beta.size() +
         P.running_mean.size() + P.running_var.size();
}

Vector flatten_layer(const LayerParams& P) {
  Vector v(parameter_count(P));
  Eigen::Index k = 0;
  auto put = [&](const auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) v[k++] = m.data()[i];
  };
  put(P.weight);
  put(P.bias);
  put(P.gamma);
  put(P.beta);
  put(P.running_mean);
  put(P.running_var);
  return v;
}

std::vector<std::string> tensor_names(const Network& net, int layer) {
  const std::string p = "layers." + std::to_string(layer) + ".";
  const LayerParams& P = net.layers.at(layer);
  if (net.spec.layers.at(layer).has_weights()) {
    std::vector<std::string> names{p + "weight"};
    if (P.bias.size()) names.push_back(p + "bias");
    return names;
  }
  return {p + "weight", p + "bias", p + "running_mean", p + "running_var"};
}

std::vector<WeightBlock> unit_input_blocks(const ArchitectureSpec& spec, int consumer, int unit) {
  const LayerSpec& L = spec.layers.at(consumer);
  switch (L.kind) {
    case LayerKind::Linear: {
      const Eigen::Index s = spec.shapes()[consumer].spatial();
      return {WeightBlock{0, L.out, unit * s, s}};
    }
    case LayerKind::Conv2d: {
      const int ipg = L.in_per_group(), opg = L.out_per_group();
      const int g = unit / ipg, local = unit % ipg;
      const Eigen::Index k = L.kernel_size();
      return {WeightBlock{static_cast<Eigen::Index>(g) * opg, opg, local * k, k}};
    }
    case LayerKind::BatchNorm:
      break;
  }
  throw Error(ErrorCode::InvalidArgument, "batchnorm has no weight blocks");
}

}  // namespace netsym
