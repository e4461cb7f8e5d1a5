#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "pcap/capacity.hpp"
#include "pcap/models.hpp"
#include "pcap/radial_oracle.hpp"

using namespace pcap;

TEST(Annulus, LabelsAndArea) {
  auto m0 = models::annulus_mesh(0.5, 1.0, 0);
  EXPECT_FALSE(m0.node_label("inner").empty());
  EXPECT_EQ(m0.boundary_nodes(), m0.node_label("inner"));
  EXPECT_EQ(m0.truncation_nodes(), m0.node_label("outer"));

  auto m3 = models::annulus_mesh(0.5, 1.0, 3);
  const double area = std::numbers::pi * (1.0 - 0.25);
  EXPECT_NEAR(total_volume(m3), area, 0.01 * area);
  auto m4 = models::annulus_mesh(0.5, 1.0, 4);
  EXPECT_EQ(m4.num_elements(), 4 * m3.num_elements());

  models::AnnulusOptions both;
  both.outer_is_boundary = true;
  auto mb = models::annulus_mesh(0.5, 1.0, 0, both);
  EXPECT_TRUE(mb.truncation_nodes().empty());
  EXPECT_EQ(mb.boundary_nodes().size(), m0.boundary_nodes().size() + m0.truncation_nodes().size());
}

TEST(Annulus, RejectsBadRadii) {
  EXPECT_THROW(models::annulus_mesh(1.0, 1.0, 0), ParameterError);
  EXPECT_THROW(models::annulus_mesh(2.0, 1.0, 0), ParameterError);
  EXPECT_THROW(models::annulus_mesh(0.0, 1.0, 0), ParameterError);
  EXPECT_THROW(models::disk_mesh(-1.0, 0), ParameterError);
  EXPECT_THROW(models::half_plane_mesh(4.0, 0.0, 0), ParameterError);
}

TEST(HalfPlane, AreaAndBoundaryCount) {
  auto a = models::half_plane_mesh(16.0, 4.0, 1);
  auto b = models::half_plane_mesh(32.0, 4.0, 1);
  EXPECT_NEAR(total_volume(a), 64.0, 1e-12);
  EXPECT_NEAR(total_volume(b), 128.0, 1e-12);
  // Interior bottom nodes only: 2 * 16 * 2 - 1 and 2 * 32 * 2 - 1.
  EXPECT_EQ(a.boundary_nodes().size(), 31u);
  EXPECT_EQ(b.boundary_nodes().size(), 63u);
}

TEST(Revolution, CylinderVolumeAndBadProfile) {
  const double L = 2.0;
  auto cyl = models::revolution_manifold(models::sampled_profile(0.0, L, 8, 64, [](double) { return 1.0; }));
  EXPECT_NEAR(total_volume(cyl), 2.0 * std::numbers::pi * L, 0.01 * 2.0 * std::numbers::pi * L);
  EXPECT_THROW(models::revolution_manifold(models::sampled_profile(0.0, 1.0, 4, 8, [](double t) { return t - 0.5; })),
               ParameterError);
}

TEST(Revolution, AngleIndependentFieldsSeeOnlyTheProfileDirection) {
  auto m = models::revolution_manifold(models::sampled_profile(1.0, 3.0, 10, 16, [](double t) { return 0.5 + t * t; }));
  std::vector<double> u;
  for (const auto& x : m.vertices()) u.push_back(x(0) * x(0));
  auto g = element_gradient(m, u);
  for (Index e = 0; e < m.num_elements(); ++e) {
    const auto i = static_cast<std::size_t>(e);
    EXPECT_NEAR(g.chart_gradient[i](1), 0.0, 1e-12);
    EXPECT_NEAR(g.norm[i], std::abs(g.chart_gradient[i](0)), 1e-12);
  }
}

TEST(Revolution, FlatConeCapacityIsPlanar) {
  const double T = 8.0;
  auto m = models::revolution_manifold(models::sampled_profile(1.0, T, 112, 96, [](double t) { return t; }));
  SolverParams params;
  std::vector<double> psi(static_cast<std::size_t>(m.num_vertices()), 1.0);
  auto est = capacity_compact(m, m.boundary_nodes(), full_region(m), psi, params);
  const double expect = 2.0 * std::numbers::pi / std::log(T);
  EXPECT_NEAR(est.value, expect, 0.03 * expect);
}

TEST(RadialOracle, ClosedFormsAndDegenerateData) {
  auto two = models::radial_oracle(2, 2.0, 0.5, 1.0, 1.0, 0.0);
  EXPECT_NEAR(two.capacity, 2.0 * std::numbers::pi / std::log(2.0), 1e-6 * two.capacity);
  auto three = models::radial_oracle(3, 2.0, 1.0, 2.0, 1.0, 0.0);
  EXPECT_NEAR(three.capacity, 8.0 * std::numbers::pi, 1e-6 * three.capacity);
  for (double p : {1.5, 3.0}) {
    auto o = models::radial_oracle(2, p, 0.5, 1.0, 1.0, 0.0);
    EXPECT_NEAR(o.capacity, oracle::shell_capacity(2, p, 0.5, 1.0), 1e-6 * o.capacity) << "p = " << p;
  }
  auto flat = models::radial_oracle(2, 3.0, 0.5, 1.0, 0.7, 0.7);
  EXPECT_EQ(flat.capacity, 0.0);
  for (double v : flat.values) EXPECT_EQ(v, 0.7);
}

TEST(RadialOracle, ScalingAndMonotonicity) {
  const double p = 2.5;
  auto unit = models::radial_oracle(2, p, 0.5, 1.0, 1.0, 0.0);
  auto big = models::radial_oracle(2, p, 0.5, 1.0, 3.0, -1.0);
  EXPECT_NEAR(big.capacity, std::pow(4.0, p) * unit.capacity, 1e-9 * big.capacity);
  auto wider = models::radial_oracle(2, p, 0.5, 2.0, 1.0, 0.0);
  auto thinner = models::radial_oracle(2, p, 0.25, 1.0, 1.0, 0.0);
  EXPECT_LT(wider.capacity, unit.capacity);
  EXPECT_LT(thinner.capacity, unit.capacity);
}

TEST(RadialOracle, RejectsCoarseGridsAndBadInput) {
  EXPECT_THROW(models::radial_oracle(2, 2.0, 0.5, 1.0, 1.0, 0.0, 100), ParameterError);
  EXPECT_THROW(models::radial_oracle(2, 1.0, 0.5, 1.0, 1.0, 0.0), ParameterError);
  EXPECT_THROW(models::radial_oracle(2, 2.0, 1.0, 0.5, 1.0, 0.0), ParameterError);
}

TEST(RadialOracle, FiniteElementProfileConverges) {
  auto prof = models::radial_oracle(2, 2.0, 0.5, 1.0, 1.0, 0.0);
  SolverParams params;
  std::vector<double> errs;
  for (int level = 1; level <= 3; ++level) {
    auto m = models::annulus_mesh(0.5, 1.0, level);
    std::vector<double> psi(static_cast<std::size_t>(m.num_vertices()), 1.0);
    auto est = capacity_compact(m, m.node_label("inner"), full_region(m), psi, params);
    double err = 0.0;
    for (Index v = 0; v < m.num_vertices(); ++v)
      err = std::max(err, std::abs(est.minimizer.values[static_cast<std::size_t>(v)] - prof(m.vertex(v).norm())));
    errs.push_back(err);
  }
  for (std::size_t i = 1; i < errs.size(); ++i) EXPECT_LT(errs[i], 0.6 * errs[i - 1]);
}
