#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "pcap/models.hpp"
#include "pcap/poincare.hpp"

using namespace pcap;

namespace {

// Elements of the unit square inside the centred square of the given side.
Region centred(const MeshManifold& m, double side) {
  std::vector<Index> els;
  const double lo = 0.5 - 0.5 * side - 1e-12, hi = 0.5 + 0.5 * side + 1e-12;
  for (Index e = 0; e < m.num_elements(); ++e) {
    bool in = true;
    for (Index v : m.simplex(e)) in = in && m.vertex(v).minCoeff() >= lo && m.vertex(v).maxCoeff() <= hi;
    if (in) els.push_back(e);
  }
  return make_region(m, "centre", els);
}

}  // namespace

TEST(Poincare, UnitSquareMeanForm) {
  auto m = models::square_mesh(32);
  auto G = full_region(m);
  auto est = poincare_constant(m, 2.0, G, G, PoincareForm::kMean);
  const double expect = 1.0 / (std::numbers::pi * std::numbers::pi);
  EXPECT_NEAR(est.constant, expect, 0.05 * expect);
  EXPECT_TRUE(est.certified);
  EXPECT_EQ(est.label, "certified");
}

TEST(Poincare, ConstantFieldWithMeanRemoved) {
  auto m = models::square_mesh(8);
  auto G = full_region(m);
  std::vector<double> c(static_cast<std::size_t>(m.num_vertices()), 3.0);
  for (double p : {1.5, 2.0, 3.0}) {
    auto s = poincare_sides(m, c, p, G, G, PoincareForm::kMean);
    EXPECT_NEAR(s.lhs, 0.0, 1e-12);
    EXPECT_GE(s.rhs, 0.0);
  }
}

TEST(Poincare, CertifiedInequalityHoldsOnRandomFields) {
  std::mt19937_64 rng(77);
  auto m = models::square_mesh(12);
  auto G = full_region(m);
  auto omega = centred(m, 0.5);
  for (auto form : {PoincareForm::kMean, PoincareForm::kIntegral}) {
    auto est = poincare_constant(m, 2.0, G, omega, form);
    for (int k = 0; k < 100; ++k) {
      auto u = oracle::uniform_values(rng, static_cast<std::size_t>(m.num_vertices()), -1.0, 1.0);
      if (k % 2) {
        // Smooth fields come closer to the extremal than white noise.
        const double a = std::uniform_real_distribution<double>(0.5, 3.0)(rng);
        for (Index v = 0; v < m.num_vertices(); ++v)
          u[static_cast<std::size_t>(v)] = std::cos(a * m.vertex(v)(0)) + 0.01 * u[static_cast<std::size_t>(v)];
      }
      auto s = poincare_sides(m, u, 2.0, G, omega, form);
      EXPECT_LE(s.lhs, est.constant * s.rhs * (1.0 + 1e-10)) << to_string(form) << " field " << k;
    }
    auto ext = poincare_sides(m, est.extremal, 2.0, G, omega, form);
    EXPECT_NEAR(ext.lhs / ext.rhs, est.constant, 1e-8 * est.constant);
  }
}

TEST(Poincare, IntegralFormOnWholeRegionIsOneForConstants) {
  auto m = models::square_mesh(8);
  auto G = full_region(m);
  auto est = poincare_constant(m, 2.0, G, G, PoincareForm::kIntegral);
  // A constant field has no gradient and |int u|^2 = int u^2 on a unit-area region.
  EXPECT_GE(est.constant, 1.0 - 1e-10);
}

TEST(Poincare, GrowsAsOmegaShrinks) {
  auto m = models::square_mesh(16);
  auto G = full_region(m);
  for (auto form : {PoincareForm::kMean, PoincareForm::kIntegral}) {
    double prev = 0.0;
    for (double side : {1.0, 0.75, 0.5, 0.25}) {
      const double c = poincare_constant(m, 2.0, G, centred(m, side), form).constant;
      EXPECT_GE(c, prev * (1.0 - 1e-10)) << to_string(form) << " side " << side;
      prev = c;
    }
  }
}

TEST(Poincare, OtherExponentsAreLowerBoundEstimates) {
  auto m = models::square_mesh(10);
  auto G = full_region(m);
  auto p2 = poincare_constant(m, 2.0, G, G);
  auto est = poincare_constant(m, 3.0, G, G);
  EXPECT_FALSE(est.certified);
  EXPECT_EQ(est.label, "lower bound estimate");
  EXPECT_GT(est.constant, 0.0);
  auto at_end = poincare_sides(m, est.extremal, 3.0, G, G, PoincareForm::kMean);
  EXPECT_NEAR(at_end.lhs / at_end.rhs, est.constant, 1e-9 * est.constant);
  auto at_start = poincare_sides(m, p2.extremal, 3.0, G, G, PoincareForm::kMean);
  EXPECT_GE(est.constant, at_start.lhs / at_start.rhs * (1.0 - 1e-12));
}

TEST(Poincare, RejectsBadRegions) {
  auto m = models::square_mesh(8);
  auto G = centred(m, 0.5);
  EXPECT_THROW(poincare_constant(m, 2.0, G, full_region(m)), ParameterError);
  EXPECT_THROW(poincare_constant(m, 2.0, full_region(m), make_region(m, "none", {})), ParameterError);
  EXPECT_THROW(poincare_constant(m, 1.0, full_region(m), full_region(m)), ParameterError);
}

TEST(Poincare, JsonFields) {
  auto m = models::square_mesh(4);
  auto j = to_json(poincare_constant(m, 2.0, full_region(m), full_region(m)));
  for (const char* k : {"value", "p", "epsilon", "region", "tolerance", "label", "certified"}) EXPECT_TRUE(j.contains(k)) << k;
}
