#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "pcap/criterion.hpp"
#include "pcap/models.hpp"
#include "pcap/radial_oracle.hpp"

using namespace pcap;

namespace {

SolverParams with_p(double p) {
  SolverParams s;
  s.p = p;
  return s;
}

MeshManifold exterior_disk(double R) {
  models::AnnulusOptions opt;
  opt.grading = models::RadialGrading::kLogarithmic;
  opt.n_theta = 36;
  opt.n_r = 20;
  return models::annulus_mesh(1.0, R, 0, opt);
}

ScalarField one_on_boundary(const MeshManifold& m) {
  std::vector<double> h(static_cast<std::size_t>(m.num_vertices()), 0.0);
  for (Index v : m.boundary_nodes()) h[static_cast<std::size_t>(v)] = 1.0;
  return make_field(std::move(h));
}

}  // namespace

TEST(Criterion, ConstantDataHasTrivialWitness) {
  auto m = exterior_disk(16.0);
  auto exh = exhaustion(m, radius_rule(2.0));
  auto h = constant_field(m, 2.0);
  auto v = criterion_check(m, h, exh, with_p(2.0), WitnessFamily{});
  EXPECT_EQ(v.verdict, Verdict::kFiniteWitnessFound);
  ASSERT_TRUE(v.solution.has_value());
  for (double u : v.solution->u.values) EXPECT_NEAR(u, 2.0, 1e-12);
  ASSERT_TRUE(v.c_star.has_value());
  EXPECT_DOUBLE_EQ(*v.c_star, 2.0);
}

TEST(Criterion, ExteriorDiskWithZeroWitness) {
  const double R = 16.0;
  auto m = exterior_disk(R);
  auto exh = exhaustion(m, radius_rule(2.0));
  WitnessFamily fam;
  fam.constants = false;
  fam.zero = true;
  auto v = criterion_check(m, one_on_boundary(m), exh, with_p(2.0), fam);
  ASSERT_EQ(v.verdict, Verdict::kFiniteWitnessFound) << v.reason;
  const auto& seq = v.witnesses[*v.best].sequence;
  for (const auto& l : seq.levels) {
    const double expect = 2.0 * std::numbers::pi / std::log(l.size);
    EXPECT_NEAR(l.estimate.value, expect, 0.05 * expect);
  }
  const auto& s = *v.solution;
  EXPECT_TRUE(s.converged);
  EXPECT_LE(s.residual, s.tolerance);
  EXPECT_TRUE(s.dirichlet_exact);
  EXPECT_TRUE(std::isfinite(s.energy));
  auto prof = models::radial_oracle(2, 2.0, 1.0, R, 1.0, 0.0);
  double err = 0.0;
  for (Index i = 0; i < m.num_vertices(); ++i)
    err = std::max(err, std::abs(s.u.values[static_cast<std::size_t>(i)] - prof(m.vertex(i).norm())));
  EXPECT_LE(err, 0.02);
}

TEST(Criterion, NeumannWitnessOfConstantData) {
  auto m = exterior_disk(16.0);
  auto exh = exhaustion(m, radius_rule(2.0));
  WitnessFamily fam;
  fam.constants = false;
  fam.neumann = true;
  auto v = criterion_check(m, constant_field(m, 1.0), exh, with_p(2.0), fam);
  ASSERT_EQ(v.witnesses.size(), 1u);
  EXPECT_EQ(v.witnesses[0].kind, "neumann");
  EXPECT_EQ(v.verdict, Verdict::kFiniteWitnessFound);
  EXPECT_NEAR(v.witnesses[0].sequence.levels.back().estimate.value, 0.0, 1e-10);
}

TEST(Criterion, UserFieldWitness) {
  auto m = exterior_disk(16.0);
  auto exh = exhaustion(m, radius_rule(2.0));
  WitnessFamily fam;
  fam.constants = false;
  fam.fields.emplace_back("one", constant_field(m, 1.0));
  auto v = criterion_check(m, one_on_boundary(m), exh, with_p(2.0), fam);
  ASSERT_EQ(v.witnesses.size(), 1u);
  EXPECT_EQ(v.witnesses[0].name, "one");
  EXPECT_EQ(v.verdict, Verdict::kFiniteWitnessFound);
}

TEST(Criterion, HalfPlaneSineHasNoConstantWitness) {
  auto m = models::half_plane_mesh(32.0, 8.0, 1);
  auto exh = exhaustion(m, abs_coordinate_rule(0, std::numbers::pi));
  auto h = sample_field(m, [](const Point& x) { return std::sin(x(0)); });
  auto v = criterion_check(m, h, exh, with_p(2.0), WitnessFamily{});
  EXPECT_EQ(v.verdict, Verdict::kNoWitnessFoundInFamily) << v.reason;
  EXPECT_FALSE(v.solution.has_value());
  ASSERT_TRUE(v.headline.has_value());
  EXPECT_EQ(v.witnesses[*v.headline].name, "c_star");
}

TEST(Criterion, ShortExhaustionIsInconclusive) {
  auto m = exterior_disk(4.0);
  auto exh = exhaustion(m, radius_rule(2.0));
  ASSERT_EQ(exh.size(), 2u);
  auto v = criterion_check(m, one_on_boundary(m), exh, with_p(2.0), WitnessFamily{});
  EXPECT_EQ(v.verdict, Verdict::kInconclusive);
}

TEST(Criterion, RejectsEmptyFamilyAndBadData) {
  auto m = exterior_disk(8.0);
  auto exh = exhaustion(m, radius_rule(2.0));
  WitnessFamily none;
  none.constants = false;
  EXPECT_THROW(criterion_check(m, one_on_boundary(m), exh, with_p(2.0), none), ParameterError);
  auto h = one_on_boundary(m);
  h.values[static_cast<std::size_t>(m.boundary_nodes()[0])] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(criterion_check(m, h, exh, with_p(2.0), WitnessFamily{}), ParameterError);
}

TEST(Criterion, ReportCarriesRuleAndSequences) {
  auto m = exterior_disk(16.0);
  auto exh = exhaustion(m, radius_rule(2.0));
  WitnessFamily fam;
  fam.constants = false;
  fam.zero = true;
  auto v = criterion_check(m, one_on_boundary(m), exh, with_p(2.0), fam);
  auto j = to_json(v);
  EXPECT_EQ(j["verdict"], "finite-witness-found");
  EXPECT_TRUE(j.contains("decision_rule"));
  EXPECT_EQ(j["decision_rule"]["bounded_relative_change"], 0.01);
  EXPECT_EQ(j["witnesses"][0]["sequence"]["levels"].size(), exh.size());
  const auto csv = to_csv(v);
  EXPECT_EQ(csv.rfind("witness,level,size,capacity\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), static_cast<long>(exh.size()) + 1);
}
