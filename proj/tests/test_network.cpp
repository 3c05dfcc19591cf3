#include "netsym/checkpoint.hpp"
#include "netsym/network.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

using namespace netsym;
using netsym::testing::random_network;
using netsym::testing::random_spec;

namespace {

ArchitectureSpec single_linear(int in, int out, OutputActivation head = OutputActivation::None) {
  return ArchitectureSpec::mlp({in, out}, head);
}

bool bit_equal(const Network& a, const Network& b) {
  if (!(a.spec == b.spec) || a.layers.size() != b.layers.size()) return false;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    const Vector x = flatten_layer(a.layers[l]), y = flatten_layer(b.layers[l]);
    if (x.size() != y.size() || std::memcmp(x.data(), y.data(), sizeof(double) * x.size()) != 0) return false;
  }
  return true;
}

}  // namespace

TEST(Architecture, RejectsMismatchedLayerPair) {
  ArchitectureSpec s = ArchitectureSpec::mlp({2, 3, 1}, OutputActivation::Sigmoid);
  s.layers[1].in = 4;
  try {
    s.validate();
    FAIL() << "expected InvalidSpec";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidSpec);
    EXPECT_NE(std::string(e.what()).find("layers 0 -> 1"), std::string::npos) << e.what();
  }
}

TEST(Architecture, GroupsMustDivideChannels) {
  ArchitectureSpec s;
  s.input = Shape{3, 4, 4};
  s.layers = {LayerSpec::conv2d(3, 4, 3, 3, 2), LayerSpec::linear(16, 2)};
  EXPECT_THROW(s.validate(), Error);
}

TEST(Architecture, BatchnormMustFollowWeightLayer) {
  ArchitectureSpec s = ArchitectureSpec::mlp({2, 2, 1}, OutputActivation::None);
  s.layers.insert(s.layers.begin(), LayerSpec::batchnorm(2));
  EXPECT_THROW(s.validate(), Error);
}

TEST(Architecture, JsonRoundTrip) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ArchitectureSpec s = random_spec(seed, seed % 2 == 0, true);
    const nlohmann::json j = s;
    EXPECT_EQ(j.get<ArchitectureSpec>(), s);
  }
}

TEST(Architecture, ResidualIsUnsupported) {
  const auto j = nlohmann::json::parse(
      R"({"input_dim": 2, "output_activation": "none", "layers": [{"kind": "residual"}]})");
  try {
    (void)j.get<ArchitectureSpec>();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Unsupported);
  }
}

TEST(BuildNetwork, DeterministicPerSeed) {
  const auto spec = ArchitectureSpec::mlp({2, 2, 1}, OutputActivation::Sigmoid);
  EXPECT_TRUE(bit_equal(build_network(spec, 7), build_network(spec, 7)));
  EXPECT_FALSE(build_network(spec, 7) == build_network(spec, 8));
}

TEST(BuildNetwork, UniformBoundFromFanIn) {
  const auto spec = ArchitectureSpec::mlp({4, 50, 3}, OutputActivation::Softmax);
  const Network net = build_network(spec, 3);
  EXPECT_LE(net.layers[0].weight.cwiseAbs().maxCoeff(), 0.5);
  EXPECT_LE(net.layers[0].bias.cwiseAbs().maxCoeff(), 0.5);
}

TEST(Forward, SingleLinearLayer) {
  Network net = Network::zeros(single_linear(1, 1));
  net.layers[0].weight(0, 0) = 2.0;
  net.layers[0].bias[0] = 1.0;
  EXPECT_DOUBLE_EQ(forward(net, Vector::Constant(1, 3.0))[0], 7.0);
}

TEST(Forward, ReluBetweenLayers) {
  Network net = Network::zeros(ArchitectureSpec::mlp({1, 2, 1}, OutputActivation::None));
  net.layers[0].weight << 1.0, -1.0;
  net.layers[1].weight << 1.0, 1.0;
  EXPECT_DOUBLE_EQ(forward(net, Vector::Constant(1, 2.0))[0], 2.0);
}

TEST(Forward, SoftmaxOfEqualLogits) {
  const Vector p = softmax(Vector::Zero(2));
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(Forward, SigmoidProbabilitiesHaveTwoColumns) {
  const auto spec = ArchitectureSpec::mlp({2, 3, 1}, OutputActivation::Sigmoid);
  const Network net = build_network(spec, 1);
  const Matrix x = netsym::testing::random_inputs(spec, 5, 1);
  const Matrix p = predict_proba(net, x);
  ASSERT_EQ(p.cols(), 2);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-15);
    EXPECT_DOUBLE_EQ(p(i, 1), forward(net, x.row(i).transpose())[0]);
  }
}

TEST(Forward, ConvMatchesDirectLoop) {
  ArchitectureSpec s;
  s.input = Shape{2, 4, 3};
  s.layers = {LayerSpec::conv2d(2, 2, 2, 2, 2, 1), LayerSpec::linear(2 * 5 * 4, 1)};
  s.output_activation = OutputActivation::None;
  const Network net = build_network(s, 5);
  const Matrix x = netsym::testing::random_inputs(s, 1, 5);
  // Hand-rolled grouped convolution with zero padding 1, then ReLU and the linear head.
  auto in = [&](int c, int i, int j) -> double {
    if (i < 0 || j < 0 || i >= 4 || j >= 3) return 0.0;
    return x(0, (c * 4 + i) * 3 + j);
  };
  double out = net.layers[1].bias[0];
  for (int co = 0; co < 2; ++co)
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 4; ++j) {
        double z = net.layers[0].bias[co];
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b) z += net.layers[0].weight(co, a * 2 + b) * in(co, i + a - 1, j + b - 1);
        out += net.layers[1].weight(0, (co * 5 + i) * 4 + j) * std::max(z, 0.0);
      }
  EXPECT_NEAR(logits(net, x.row(0).transpose())[0], out, 1e-12);
}

TEST(Forward, BatchnormInferenceFormula) {
  ArchitectureSpec s = ArchitectureSpec::mlp({1, 1, 1}, OutputActivation::None);
  s.layers.insert(s.layers.begin() + 1, LayerSpec::batchnorm(1));
  Network net = Network::zeros(s);
  net.layers[0].weight(0, 0) = 1.0;
  net.layers[1].gamma[0] = 2.0;
  net.layers[1].beta[0] = 0.5;
  net.layers[1].running_mean[0] = 1.0;
  net.layers[1].running_var[0] = 4.0;
  net.layers[2].weight(0, 0) = 1.0;
  const double expected = 2.0 * (3.0 - 1.0) / std::sqrt(4.0 + kBatchNormEps) + 0.5;
  EXPECT_DOUBLE_EQ(forward(net, Vector::Constant(1, 3.0))[0], expected);
}

TEST(Forward, ShapeMismatchThrows) {
  const Network net = build_network(ArchitectureSpec::mlp({2, 1}, OutputActivation::None), 0);
  EXPECT_THROW(forward(net, Vector::Zero(3)), Error);
}

TEST(Mass, Examples) {
  EXPECT_EQ(network_mass(Network::zeros(ArchitectureSpec::mlp({3, 2, 1}, OutputActivation::None))), 0.0);
  Network one = Network::zeros(single_linear(1, 1));
  one.layers[0].weight(0, 0) = 2.0;
  one.layers[0].bias[0] = 5.0;
  EXPECT_DOUBLE_EQ(network_mass(one), 4.0);
  Network two = Network::zeros(ArchitectureSpec::mlp({1, 1, 1}, OutputActivation::None));
  two.layers[0].weight(0, 0) = 2.0;
  two.layers[1].weight(0, 0) = 0.5;
  EXPECT_DOUBLE_EQ(network_mass(two), 4.25);
}

TEST(Mass, AdditiveOverLayers) {
  const Network net = random_network(random_spec(4, true, true), 4);
  const auto per = layer_masses(net);
  double sum = 0.0;
  for (double m : per) {
    EXPECT_GE(m, 0.0);
    sum += m;
  }
  EXPECT_NEAR(sum, network_mass(net), 1e-12);
  MassOptions with_gamma{true};
  EXPECT_GE(network_mass(net, with_gamma), network_mass(net));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Network net = random_network(random_spec(seed, seed % 3 == 0, seed % 2 == 0), seed);
    nlohmann::json meta;
    const Network back = decode_checkpoint(encode_checkpoint(net, {{"seed", seed}}), &meta);
    ASSERT_TRUE(bit_equal(net, back)) << "seed " << seed;
    EXPECT_EQ(meta["seed"], seed);
  }
}

TEST(Checkpoint, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "netsym_ckpt_test";
  std::filesystem::create_directories(dir);
  const Network net = random_network(random_spec(11, true, true), 11);
  const std::string path = (dir / "a.nnck").string();
  save_checkpoint(net, path);
  EXPECT_TRUE(bit_equal(load_checkpoint(path), net));
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, BadMagic) {
  std::string bytes = encode_checkpoint(build_network(single_linear(2, 2), 0));
  bytes[0] = 'X';
  try {
    decode_checkpoint(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Format);
    EXPECT_NE(std::string(e.what()).find("bad magic"), std::string::npos);
  }
}

TEST(Checkpoint, TruncatedBlob) {
  // 9 weights and 1 bias: ten floats declared, nine present
  const Network net = build_network(ArchitectureSpec::mlp({9, 1}, OutputActivation::None), 0);
  ASSERT_EQ(parameter_count(net.layers[0]), 10);
  std::string bytes = encode_checkpoint(net);
  bytes.resize(bytes.size() - sizeof(double));
  try {
    decode_checkpoint(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Format);
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }
}

TEST(Checkpoint, HeaderDescribesTensors) {
  const Network net = random_network(random_spec(2, false, true), 2);
  const std::string bytes = encode_checkpoint(net);
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, sizeof len);
  const auto header = nlohmann::json::parse(bytes.substr(16, len));
  EXPECT_EQ(header["dtype"], "f64");
  EXPECT_EQ(header["spec"].get<ArchitectureSpec>(), net.spec);
  EXPECT_EQ(header["tensors"][0]["name"], "layers.0.weight");
}
