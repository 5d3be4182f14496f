#include "causalflow/causal_lp.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace causalflow;

namespace {

BipartiteDistribution zero_dist() {
  BipartiteDistribution d;
  d.p.assign(16, rational(0));
  return d;
}

}  // namespace

TEST_CASE("feasibility solver on tiny systems") {
  // x1 + x2 = 1, x1 - x2 = 0 -> x = (1/2, 1/2)
  auto r = solve_feasibility({{1, 1}, {1, -1}}, {1, 0});
  REQUIRE(r.feasible);
  REQUIRE(r.x[0] == rational(1, 2));
  REQUIRE(r.x[1] == rational(1, 2));

  // x1 = 1, x1 = 2 infeasible with a certificate
  auto bad = solve_feasibility({{1}, {1}}, {1, 2});
  REQUIRE_FALSE(bad.feasible);
  REQUIRE(bad.farkas.size() == 2);
}

TEST_CASE("one-way signalling distributions are causal with extreme weight") {
  // P(x=0, y=a | a, b) = 1: A's setting fixes B's outcome
  auto d = zero_dist();
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) d.at(0, a, a, b) = 1;
  auto res = is_causal_distribution(d);
  REQUIRE(res.causal);
  REQUIRE(res.decomposition.has_value());
  REQUIRE(res.decomposition->q == rational(1));
}

TEST_CASE("product distributions are causal with any weight") {
  auto d = zero_dist();
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 2; ++y)
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) d.at(x, y, a, b) = rational(1, 4);
  auto res = is_causal_distribution(d);
  REQUIRE(res.causal);
}

TEST_CASE("deterministic two-way signalling is certified infeasible") {
  // P(x = b, y = a | a, b) = 1: both directions signal perfectly
  auto d = zero_dist();
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) d.at(b, a, a, b) = 1;
  auto res = is_causal_distribution(d);
  REQUIRE_FALSE(res.causal);
  REQUIRE_FALSE(res.farkas.empty());
  // at least one certificate entry is nonzero
  bool nz = false;
  for (const auto& v : res.farkas)
    if (v != 0) nz = true;
  REQUIRE(nz);
}

TEST_CASE("mixtures of the two one-way extremes are causal") {
  auto d = zero_dist();
  // 0.3 of (y=a) + 0.7 of (x=b)
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      d.at(0, a, a, b) += rational(3, 10);
      d.at(b, 0, a, b) += rational(7, 10);
    }
  auto res = is_causal_distribution(d);
  REQUIRE(res.causal);
  REQUIRE(res.decomposition->q >= rational(0));
  REQUIRE(res.decomposition->q <= rational(1));
}

TEST_CASE("double-to-rational conversion repairs normalization") {
  std::vector<double> vals(16, 1.0 / 16 * 4);  // each context sums to 1
  auto d = distribution_from_doubles(vals, 2, 2, 2, 2);
  REQUIRE_NOTHROW(d.validate_normalized());
}
