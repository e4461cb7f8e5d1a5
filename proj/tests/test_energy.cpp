#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "pcap/energy.hpp"
#include "pcap/field.hpp"
#include "pcap/models.hpp"

using namespace pcap;

namespace {

std::vector<double> sample(const MeshManifold& m, const std::function<double(const Point&)>& f) {
  return sample_field(m, f).values;
}

}  // namespace

TEST(DirichletEnergy, ConstantsAndLinearFields) {
  auto sq = models::square_mesh(5);
  EXPECT_EQ(dirichlet_energy(sq, constant_field(sq, 7.0), 3.0).value, 0.0);
  auto x = sample(sq, [](const Point& v) { return v(0); });
  EXPECT_NEAR(dirichlet_energy(sq, x, 4.0).value, 1.0, 1e-13);

  auto disk = models::disk_mesh(1.0, 4);
  auto dx = sample(disk, [](const Point& v) { return v(0); });
  EXPECT_NEAR(dirichlet_energy(disk, dx, 2.0).value, std::numbers::pi, 1e-2);
}

TEST(DirichletEnergy, HomogeneityAndConvexity) {
  std::mt19937_64 rng(11);
  auto m = models::annulus_mesh(0.5, 1.0, 1);
  const auto n = static_cast<std::size_t>(m.num_vertices());
  for (double p : {1.5, 2.0, 3.0}) {
    for (int trial = 0; trial < 5; ++trial) {
      auto u = oracle::uniform_values(rng, n);
      auto v = oracle::uniform_values(rng, n);
      const double lam = std::uniform_real_distribution<double>(-3.0, 3.0)(rng);
      std::vector<double> lu(n), mid(n);
      for (std::size_t i = 0; i < n; ++i) {
        lu[i] = lam * u[i];
        mid[i] = 0.5 * (u[i] + v[i]);
      }
      const double eu = dirichlet_energy(m, u, p).value;
      EXPECT_NEAR(dirichlet_energy(m, lu, p).value, std::pow(std::abs(lam), p) * eu, 1e-10 * eu * std::pow(std::abs(lam), p));
      const double ev = dirichlet_energy(m, v, p).value;
      EXPECT_LE(dirichlet_energy(m, mid, p).value, 0.5 * (eu + ev) * (1.0 + 1e-12));
    }
  }
}

TEST(DirichletEnergy, RejectsBadParameters) {
  auto m = models::square_mesh(2);
  std::vector<double> u(static_cast<std::size_t>(m.num_vertices()), 0.0);
  EXPECT_THROW(dirichlet_energy(m, u, 1.0), ParameterError);
  EXPECT_THROW(dirichlet_energy(m, u, 0.5), ParameterError);
  EXPECT_THROW(dirichlet_energy(m, u, 2.0, -1e-3), ParameterError);
  std::vector<double> wrong(3, 0.0);
  EXPECT_THROW(dirichlet_energy(m, wrong, 2.0), ParameterError);
}

TEST(DirichletEnergy, RegionRestrictionAddsUp) {
  std::mt19937_64 rng(5);
  auto m = models::square_mesh(6);
  auto u = oracle::uniform_values(rng, static_cast<std::size_t>(m.num_vertices()));
  std::vector<Index> a, b;
  for (Index e = 0; e < m.num_elements(); ++e) (e % 2 ? a : b).push_back(e);
  auto ra = make_region(m, "a", a), rb = make_region(m, "b", b);
  const double sum = dirichlet_energy(m, u, 3.0, 0.0, &ra).value + dirichlet_energy(m, u, 3.0, 0.0, &rb).value;
  EXPECT_NEAR(sum, dirichlet_energy(m, u, 3.0).value, 1e-12 * sum);
}

TEST(EnergyGradient, MatchesCentralDifferences) {
  std::mt19937_64 rng(2024);
  auto m = models::annulus_mesh(0.5, 1.0, 0);
  const auto n = static_cast<std::size_t>(m.num_vertices());
  const double eps = 1e-8;
  for (double p : {1.5, 2.0, 3.0}) {
    auto u = make_field(oracle::uniform_values(rng, n));
    auto g = energy_gradient(m, u, p, eps);
    auto f = [&](const std::vector<double>& v) { return dirichlet_energy(m, v, p, eps).value; };
    double err = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double fd = oracle::central_difference(f, u.values, i);
      err = std::max(err, std::abs(fd - g[i]));
      scale = std::max(scale, std::abs(g[i]));
    }
    EXPECT_LE(err, 1e-6 * scale) << "p = " << p;
  }
}

TEST(EnergyGradient, ConstantFieldGivesZero) {
  auto m = models::disk_mesh(1.0, 2);
  for (double p : {1.5, 2.0, 4.0})
    for (double g : energy_gradient(m, constant_field(m, -2.5), p, 0.0)) EXPECT_EQ(g, 0.0);
}

TEST(EnergyGradient, QuadraticCaseIsCotangentStiffness) {
  std::mt19937_64 rng(3);
  auto m = models::disk_mesh(1.0, 2);
  const auto n = static_cast<std::size_t>(m.num_vertices());
  auto u = make_field(oracle::uniform_values(rng, n));
  auto g = energy_gradient(m, u, 2.0, 0.0);
  Eigen::VectorXd uv = Eigen::Map<const Eigen::VectorXd>(u.values.data(), static_cast<Eigen::Index>(n));
  Eigen::VectorXd ku = 2.0 * (oracle::cotangent_stiffness(m) * uv);
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(g[i], ku(static_cast<Eigen::Index>(i)), 1e-12);
}

TEST(WeakResidual, LinearFieldsOnFlatMeshes) {
  for (const auto& m : {models::square_mesh(7), models::disk_mesh(1.0, 2), models::annulus_mesh(0.3, 1.0, 1)}) {
    auto u = sample(m, [](const Point& v) { return 0.7 * v(0) - 1.3 * v(1) + 2.0; });
    const auto test = interior_mask(m);
    for (double p : {1.2, 1.5, 2.0, 3.0, 4.0}) EXPECT_LE(weak_residual(m, u, p, test), 1e-12) << "p = " << p;
  }
}

TEST(WeakResidual, EmptyTestSpaceIsAnError) {
  auto m = models::square_mesh(3);
  std::vector<double> u(static_cast<std::size_t>(m.num_vertices()), 1.0);
  NodeMask none(u.size(), 0);
  EXPECT_THROW(weak_residual(m, u, 2.0, none), ParameterError);
}

TEST(WeakResidual, RadialSolutionResidualShrinksUnderRefinement) {
  // Closed-form p = 3 solution on r < |x| < R in the plane is affine in sqrt(rho).
  const double r = 0.5, R = 1.0;
  auto exact = [&](const Point& x) {
    const double q = 0.5;
    return (std::pow(R, q) - std::pow(x.norm(), q)) / (std::pow(R, q) - std::pow(r, q));
  };
  double prev = std::numeric_limits<double>::infinity();
  for (int level = 1; level <= 3; ++level) {
    auto m = models::annulus_mesh(r, R, level);
    const double res = weak_residual(m, sample(m, exact), 3.0, interior_mask(m));
    EXPECT_LT(res, prev) << "level " << level;
    prev = res;
  }
}

TEST(EnergyReport, JsonCarriesParameters) {
  auto m = models::square_mesh(2);
  auto j = to_json(dirichlet_energy(m, constant_field(m, 1.0), 2.5, 1e-4));
  for (const char* k : {"value", "p", "epsilon", "region", "tolerance"}) EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j["p"], 2.5);
}
