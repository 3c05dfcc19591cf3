#include "netsym/minmass.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace netsym;
using namespace netsym::testing;

namespace {

Network chain(double w1, double w2) {
  Network net = Network::zeros(ArchitectureSpec::mlp({1, 1, 1}, OutputActivation::None));
  net.layers[0].weight(0, 0) = w1;
  net.layers[1].weight(0, 0) = w2;
  return net;
}

std::vector<Vector> random_logs(const ArchitectureSpec& spec, std::uint64_t seed, double range) {
  auto rng = make_rng(seed, 5);
  std::uniform_real_distribution<double> u(-range, range);
  std::vector<Vector> logs;
  for (const Vector& s : ScalingSet::ones(spec).scales) {
    Vector v(s.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = u(rng);
    logs.push_back(v);
  }
  return logs;
}

ScalingSet exp_of(const std::vector<Vector>& logs) {
  ScalingSet s;
  for (const Vector& u : logs) s.scales.push_back(u.array().exp().matrix());
  return s;
}

Network random_plain(std::uint64_t seed) { return build_network(random_spec(seed, seed % 2 == 0), seed); }

}  // namespace

TEST(MassTerms, Examples) {
  Network net = Network::zeros(ArchitectureSpec::mlp({2, 2, 1}, OutputActivation::None));
  net.layers[0].weight << 1.0, -2.0, 3.0, 0.0;
  net.layers[1].weight << 1.0, 1.0;
  const MassTerms m = mass_terms(net);
  EXPECT_EQ(m.layers[0], (Matrix(2, 2) << 1.0, 4.0, 9.0, 0.0).finished());
  EXPECT_DOUBLE_EQ(m.total(), network_mass(net));

  ArchitectureSpec s;
  s.input = Shape{1, 3, 3};
  s.layers = {LayerSpec::conv2d(1, 1, 2, 2), LayerSpec::linear(4, 1)};
  Network conv = Network::zeros(s);
  conv.layers[0].weight.setOnes();
  const MassTerms c = mass_terms(conv);
  ASSERT_EQ(c.layers[0].rows(), 1);
  ASSERT_EQ(c.layers[0].cols(), 1);
  EXPECT_DOUBLE_EQ(c.layers[0](0, 0), 4.0);
}

TEST(MassTerms, GroupedConvSumsToMass) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Network net = build_network(random_spec(seed, true), seed);
    const MassTerms m = mass_terms(net);
    EXPECT_NEAR(m.total(), network_mass(net), 1e-12 * network_mass(net));
    for (const Matrix& M : m.layers) EXPECT_GE(M.minCoeff(), 0.0);
  }
}

TEST(MassTerms, BatchnormUnsupported) {
  ArchitectureSpec s = ArchitectureSpec::mlp({2, 2, 1}, OutputActivation::None);
  s.layers.insert(s.layers.begin() + 1, LayerSpec::batchnorm(2));
  try {
    mass_terms(build_network(s, 0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Unsupported);
  }
}

TEST(ScaledMass, Examples) {
  const Network net = chain(2.0, 0.5);
  EXPECT_DOUBLE_EQ(scaled_mass(net, ScalingSet::ones(net.spec)), network_mass(net));
  ScalingSet half = ScalingSet::ones(net.spec);
  half.scales[0][0] = 0.5;
  EXPECT_DOUBLE_EQ(scaled_mass(net, half), 2.0);
}

TEST(ScaledMass, AgreesWithApplyScaling) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Network net = random_plain(seed);
    const ScalingSet s = random_symmetry(net.spec, seed).scales;
    const double direct = network_mass(apply_scaling(net, s));
    EXPECT_NEAR(scaled_mass(net, s), direct, 1e-9 * direct) << "seed " << seed;
  }
}

TEST(Objective, GradientAtZero) {
  Network net = Network::zeros(ArchitectureSpec::mlp({2, 2, 1}, OutputActivation::None));
  net.layers[0].weight << 1.0, 2.0, 0.5, 0.0;
  net.layers[1].weight << 3.0, 1.0;
  const ObjectiveValue f = minmass_objective(net, random_logs(net.spec, 0, 0.0));
  EXPECT_DOUBLE_EQ(f.value, network_mass(net));
  // 2 * (incoming squares) - 2 * (outgoing squares) per hidden unit
  EXPECT_DOUBLE_EQ(f.gradient[0][0], 2.0 * 5.0 - 2.0 * 9.0);
  EXPECT_DOUBLE_EQ(f.gradient[0][1], 2.0 * 0.25 - 2.0 * 1.0);
  EXPECT_EQ(minmass_objective(chain(1.0, 1.0), {Vector::Zero(1)}).gradient[0][0], 0.0);
}

TEST(Objective, RejectsNonFinite) {
  const Network net = chain(1.0, 1.0);
  EXPECT_THROW(minmass_objective(net, {Vector::Constant(1, NAN)}), Error);
  EXPECT_THROW(minmass_objective(net, {Vector::Zero(2)}), Error);
}

TEST(Objective, GradientMatchesFiniteDifferences) {
  const double h = 1e-6;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Network net = random_plain(seed);
    const MassTerms terms = mass_terms(net);
    std::vector<Vector> u = random_logs(net.spec, seed, 0.5);
    const ObjectiveValue f = minmass_objective(terms, u);
    for (std::size_t l = 0; l < u.size(); ++l)
      for (Eigen::Index i = 0; i < u[l].size(); ++i) {
        const double keep = u[l][i];
        u[l][i] = keep + h;
        const double up = minmass_objective(terms, u).value;
        u[l][i] = keep - h;
        const double down = minmass_objective(terms, u).value;
        u[l][i] = keep;
        const double fd = (up - down) / (2.0 * h);
        const double g = f.gradient[l][i];
        EXPECT_LE(std::abs(fd - g), 1e-5 * std::max(std::abs(g), f.value)) << "seed " << seed;
      }
  }
}

TEST(Objective, ConvexAlongSegments) {
  const Network net = build_network(ArchitectureSpec::mlp({3, 4, 3, 2}, OutputActivation::Softmax), 1);
  const MassTerms terms = mass_terms(net);
  auto rng = make_rng(17);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto a = random_logs(net.spec, 2 * trial + 1, 2.0), b = random_logs(net.spec, 2 * trial + 2, 2.0);
    const double t = unit(rng);
    std::vector<Vector> mid;
    for (std::size_t l = 0; l < a.size(); ++l) mid.push_back(t * a[l] + (1.0 - t) * b[l]);
    const double lhs = minmass_objective(terms, mid).value;
    const double rhs = t * minmass_objective(terms, a).value + (1.0 - t) * minmass_objective(terms, b).value;
    ASSERT_LE(lhs, rhs + 1e-9) << "trial " << trial;
  }
}

TEST(Solve, ClosedFormChain) {
  const MinMassSolution s = solve_minmass(chain(2.0, 0.5));
  EXPECT_TRUE(s.converged);
  EXPECT_NEAR(s.scales.scales[0][0], 0.5, 1e-8);
  EXPECT_NEAR(s.mass_after, 2.0, 1e-12);
  EXPECT_NEAR(s.mass_before, 4.25, 1e-15);
}

TEST(Solve, BalancedNetIsFixedPoint) {
  const Network net = chain(1.0, 1.0);
  const MinMassResult r = apply_minmass(net);
  EXPECT_EQ(r.solution.iterations, 0);
  EXPECT_EQ(r.solution.scales.scales[0][0], 1.0);
  EXPECT_DOUBLE_EQ(r.solution.mass_after, 2.0);
  EXPECT_LE(max_weight_diff(r.net, net), 1e-12);
}

TEST(Solve, MatchesGridSearch) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Network net = build_network(ArchitectureSpec::mlp({2, 2, 1}, OutputActivation::Sigmoid), seed);
    const MinMassSolution s = solve_minmass(net);
    ASSERT_TRUE(s.converged);
    double best = INFINITY;
    for (int i = 0; i < 400; ++i)
      for (int j = 0; j < 400; ++j) {
        const Vector u = (Vector(2) << -3.0 + 6.0 * i / 399.0, -3.0 + 6.0 * j / 399.0).finished();
        best = std::min(best, minmass_objective(net, {u}).value);
      }
    EXPECT_LE(s.mass_after, best + 1e-12);
    EXPECT_LE(std::abs(s.mass_after - best), 1e-3);
  }
}

TEST(Solve, UniqueAcrossStarts) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Network net = random_plain(seed);
    const MinMassSolution ref = solve_minmass(net);
    ASSERT_TRUE(ref.converged);
    for (std::uint64_t start = 0; start < 10; ++start) {
      MinMassConfig cfg;
      cfg.start = random_logs(net.spec, 1000 * seed + start, 2.0);
      const MinMassSolution s = solve_minmass(net, cfg);
      ASSERT_TRUE(s.converged);
      for (std::size_t l = 0; l < s.log_scales.size(); ++l)
        EXPECT_LE((s.log_scales[l] - ref.log_scales[l]).cwiseAbs().maxCoeff(), 1e-4);
    }
  }
}

TEST(Solve, OptimumIsClassProperty) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Network net = random_plain(seed);
    const double a = solve_minmass(net).mass_after;
    const double b = solve_minmass(apply_scaling(net, random_symmetry(net.spec, seed + 1).scales)).mass_after;
    EXPECT_NEAR(a, b, 1e-7 * a) << "seed " << seed;
  }
}

TEST(Solve, StepsTowardOptimumReduceMass) {
  auto rng = make_rng(3);
  std::uniform_real_distribution<double> small(1e-3, 0.1);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Network net = random_plain(seed);
    const MinMassSolution s = solve_minmass(net);
    if (!(s.mass_before > s.mass_after + 1e-6)) continue;
    int reduced = 0;
    for (int k = 0; k < 100; ++k) {
      const double t = small(rng);
      std::vector<Vector> step;
      for (const Vector& u : s.log_scales) step.push_back(t * u);
      reduced += scaled_mass(net, exp_of(step)) < s.mass_before;
    }
    EXPECT_GE(reduced, 99) << "seed " << seed;
  }
}

TEST(Solve, DegenerateUnitIsNamed) {
  Network net = build_network(ArchitectureSpec::mlp({2, 3, 1}, OutputActivation::None), 0);
  net.layers[1].weight(0, 1) = 0.0;
  try {
    solve_minmass(net);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Degenerate);
    EXPECT_NE(std::string(e.what()).find("unit 1"), std::string::npos) << e.what();
  }
}

TEST(Solve, IterationCapGivesPartialSolution) {
  MinMassConfig cfg;
  cfg.max_iters = 1;
  cfg.tol = 0.0;
  const MinMassSolution s = solve_minmass(build_network(ArchitectureSpec::mlp({3, 5, 4, 1}, OutputActivation::None), 2), cfg);
  EXPECT_FALSE(s.converged);
  EXPECT_LE(s.mass_after, s.mass_before + 1e-12);
}

TEST(ApplyMinMass, EquivalentAndAtOptimum) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Network net = random_plain(seed);
    const MinMassResult r = apply_minmass(net);
    EXPECT_NEAR(network_mass(r.net), r.solution.mass_after, 1e-9 * r.solution.mass_after);
    EXPECT_LE(r.solution.mass_after, r.solution.mass_before + 1e-12);
    EXPECT_TRUE(verify_equivalence(net, r.net, 128, seed, 1e-9).pass);
    ASSERT_EQ(r.max_abs_before.size(), r.max_abs_after.size());
    EXPECT_DOUBLE_EQ(r.max_abs_before[0], net.layers[0].weight.cwiseAbs().maxCoeff());
  }
}
