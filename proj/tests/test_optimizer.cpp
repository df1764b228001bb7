#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "orbit/optimizer.hpp"

using namespace orbit;

namespace {

DistortionTable two_tiles() {
  DistortionTable t;
  t.tiles = {{{32, 1, 9, 9}, {22, 3, 1, 1}}, {{32, 1, 9, 9}, {22, 3, 1, 1}}};
  return t;
}

const TileWeights kHalf = weights_from_raw({1.0, 1.0});

}  // namespace

TEST(TileWeights, InverseSquareDistanceNormalizedOverTiles) {
  const TileGrid g(4, 8, ErpPlane(256, 128));
  const auto w = tile_weights(g, {{1, 3}});
  EXPECT_DOUBLE_EQ(w.raw[g.flat({1, 3})], 1.0);
  EXPECT_DOUBLE_EQ(w.raw[g.flat({1, 5})], 0.2);
  EXPECT_DOUBLE_EQ(w.raw[g.flat({2, 4})], 1.0 / 3.0);
  double sum = 0.0;
  for (double v : w.normalized) sum += v;
  EXPECT_NEAR(sum, 1.0, 1e-12);
  EXPECT_THROW(weights_from_raw({1.0, 0.0}), Error);
}

TEST(Evaluate, TwoTileExample) {
  const auto t = two_tiles();
  const auto r = evaluate(Allocation{{0, 1}}, t, kHalf, 1.0);
  EXPECT_DOUBLE_EQ(r.lambda, 5.0);
  EXPECT_DOUBLE_EQ(r.xi, 4.0);
  EXPECT_DOUBLE_EQ(r.total, 9.0);
  EXPECT_DOUBLE_EQ(r.rate_used, 4.0);
  EXPECT_DOUBLE_EQ(r.k[0][0], 4.0);
  EXPECT_DOUBLE_EQ(r.l[0][1], 0.0);
  EXPECT_DOUBLE_EQ(r.l[1][1], 4.0);
  EXPECT_THROW(evaluate(Allocation{{0, 2}}, t, kHalf, 1.0), Error);
}

TEST(SolveExact, TwoTileExampleAcrossNu) {
  const auto t = two_tiles();
  // nu = 0: mixed allocation, lower Lambda; ties broken lexicographically
  EXPECT_EQ(solve_exact(t, kHalf, 0.0, 4.0).choice, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(solve_exact(t, kHalf, 0.5, 4.0).choice, (std::vector<std::size_t>{0, 1}));
  // nu = 1: both give 9, the cheaper allocation wins
  EXPECT_EQ(solve_exact(t, kHalf, 1.0, 4.0).choice, (std::vector<std::size_t>{0, 0}));
  // nu = 2: uniform quality preferred
  EXPECT_EQ(solve_exact(t, kHalf, 2.0, 4.0).choice, (std::vector<std::size_t>{0, 0}));
  EXPECT_EQ(solve_exact(t, kHalf, 2.0, 6.0).choice, (std::vector<std::size_t>{1, 1}));
  // viewport weight 0.8 on tile 0: it gets the better representation
  EXPECT_EQ(solve_exact(t, weights_from_raw({0.8, 0.2}), 0.0, 4.0).choice, (std::vector<std::size_t>{1, 0}));
  EXPECT_EQ(solve_heuristic(t, weights_from_raw({0.8, 0.2}), 0.0, 4.0).choice, (std::vector<std::size_t>{1, 0}));
}

TEST(Evaluate, HandExamples) {
  DistortionTable t;
  t.tiles = {{{22, 1, 10, 10}}, {{22, 1, 0, 0}}};
  const auto r = evaluate(Allocation{{0, 0}}, t, kHalf, 0.5);
  EXPECT_DOUBLE_EQ(r.lambda, 5.0);
  EXPECT_DOUBLE_EQ(r.xi, 5.0);
  EXPECT_DOUBLE_EQ(r.total, 7.5);
  t.tiles = {{{22, 1, 5, 5}}, {{22, 1, 5, 5}}, {{22, 1, 5, 5}}};
  const auto u = evaluate(Allocation{{0, 0, 0}}, t, weights_from_raw({0.1, 0.5, 0.9}), 3.0);
  EXPECT_DOUBLE_EQ(u.lambda, 5.0);
  EXPECT_DOUBLE_EQ(u.xi, 0.0);
}

TEST(Evaluate, XiNonNegativeAndZeroOnlyForEqualDistortion) {
  Rng rng(4);
  for (int inst = 0; inst < 200; ++inst) {
    const auto t = oracle::random_table(rng, 4, 3);
    const auto w = weights_from_raw(oracle::random_weights(rng, 4));
    Allocation a{{rng.index(t.tiles[0].size()), rng.index(t.tiles[1].size()), rng.index(t.tiles[2].size()),
                  rng.index(t.tiles[3].size())}};
    const auto r = evaluate(a, t, w, 1.0);
    EXPECT_GE(r.xi, 0.0);
    bool equal = true;
    for (std::size_t i = 1; i < 4; ++i) equal = equal && t.tiles[i][a.choice[i]].corrected == t.tiles[0][a.choice[0]].corrected;
    EXPECT_EQ(r.xi == 0.0, equal);
  }
}

TEST(SolveHeuristic, SingleRepresentationLadder) {
  DistortionTable t;
  t.tiles = {{{22, 5, 3, 3}}, {{22, 5, 4, 4}}};
  EXPECT_EQ(solve_heuristic(t, kHalf, 0.5, 10.0).choice, (std::vector<std::size_t>{0, 0}));
}

TEST(SolveExact, InfeasibleBudgetReportsNeed) {
  try {
    solve_exact(two_tiles(), kHalf, 0.0, 1.5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Infeasible);
    EXPECT_NE(std::string(e.what()).find("needs 2 bps"), std::string::npos) << e.what();
  }
  EXPECT_THROW(solve_heuristic(two_tiles(), kHalf, 0.0, 1.5), Error);
}

TEST(SolveExact, RejectsOversizedSearchAndNegativeNu) {
  DistortionTable t;
  for (int i = 0; i < 12; ++i) t.tiles.push_back({{32, 1, 9, 9}, {27, 2, 5, 5}, {22, 3, 1, 1}, {17, 4, 0.5, 0.5}});
  const auto w = weights_from_raw(std::vector<double>(12, 1.0));
  try {
    solve_exact(t, w, 0.0, 100.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidArgument);
  }
  EXPECT_THROW(solve_exact(two_tiles(), kHalf, -1.0, 4.0), Error);
}

TEST(SolveExact, MatchesEnumerationOnRandomInstances) {
  Rng rng(2024);
  for (int inst = 0; inst < 1000; ++inst) {
    const std::size_t n = 1 + rng.index(8);
    const auto t = oracle::random_table(rng, n, 3);
    const auto w = weights_from_raw(oracle::random_weights(rng, n));
    double lo = 0.0, hi = 0.0;
    for (const auto& l : t.tiles) {
      lo += l.front().rate;
      hi += l.back().rate;
    }
    const double budget = lo + rng.uniform(0.0, 1.0) * (hi - lo);
    const double nu = inst % 4 == 0 ? 0.0 : rng.uniform(0.0, 3.0);
    const auto want = oracle::enumerate(t, w.normalized, nu, budget);
    ASSERT_TRUE(want.found);
    const auto got = solve_exact(t, w, nu, budget);
    const auto rep = evaluate(got, t, w, nu);
    EXPECT_LE(rep.rate_used, budget);
    EXPECT_NEAR(rep.total, want.total, 1e-9 * std::max(1.0, want.total)) << "instance " << inst;
  }
}

TEST(SolveHeuristic, ExactAtZeroNuAndCloseOtherwise) {
  Rng rng(77);
  double worst = 0.0;
  for (int inst = 0; inst < 300; ++inst) {
    const std::size_t n = 2 + rng.index(7);
    const auto t = oracle::random_table(rng, n, 3);
    const auto w = weights_from_raw(oracle::random_weights(rng, n));
    double lo = 0.0, hi = 0.0;
    for (const auto& l : t.tiles) {
      lo += l.front().rate;
      hi += l.back().rate;
    }
    const double budget = lo + rng.uniform(0.0, 1.0) * (hi - lo);
    const auto exact0 = evaluate(solve_exact(t, w, 0.0, budget), t, w, 0.0);
    const auto heur0 = evaluate(solve_heuristic(t, w, 0.0, budget), t, w, 0.0);
    EXPECT_NEAR(heur0.total, exact0.total, 1e-9 * exact0.total);
    const double nu = rng.uniform(0.1, 2.0);
    const auto exact = evaluate(solve_exact(t, w, nu, budget), t, w, nu);
    const auto heur = evaluate(solve_heuristic(t, w, nu, budget), t, w, nu);
    EXPECT_LE(heur.rate_used, budget);
    EXPECT_GE(heur.total, exact.total * (1 - 1e-12));
    worst = std::max(worst, heur.total / exact.total - 1.0);
  }
  EXPECT_LE(worst, 0.05);
}

TEST(SolveExact, MoreBudgetNeverHurts) {
  Rng rng(5);
  for (int inst = 0; inst < 100; ++inst) {
    const auto t = oracle::random_table(rng, 6, 3);
    const auto w = weights_from_raw(oracle::random_weights(rng, 6));
    const double nu = rng.uniform(0.0, 2.0);
    double lo = 0.0;
    for (const auto& l : t.tiles) lo += l.front().rate;
    double prev = INFINITY;
    for (double extra : {0.0, 100.0, 300.0, 700.0, 1500.0, 5000.0}) {
      const double total = evaluate(solve_exact(t, w, nu, lo + extra), t, w, nu).total;
      EXPECT_LE(total, prev + 1e-12);
      prev = total;
    }
  }
}

TEST(SolveExact, InvariantUnderWeightAndRateScaling) {
  Rng rng(8);
  for (int inst = 0; inst < 100; ++inst) {
    auto t = oracle::random_table(rng, 5, 3);
    const auto raw = oracle::random_weights(rng, 5);
    const double nu = rng.uniform(0.0, 2.0);
    double lo = 0.0, hi = 0.0;
    for (const auto& l : t.tiles) {
      lo += l.front().rate;
      hi += l.back().rate;
    }
    const double budget = (lo + hi) / 2;
    const auto base = solve_exact(t, weights_from_raw(raw), nu, budget);
    auto scaled_raw = raw;
    for (auto& v : scaled_raw) v *= 4.0;  // power of two keeps normalization exact
    EXPECT_EQ(solve_exact(t, weights_from_raw(scaled_raw), nu, budget), base);
    for (auto& l : t.tiles)
      for (auto& r : l) r.rate *= 8.0;
    EXPECT_EQ(solve_exact(t, weights_from_raw(raw), nu, budget * 8.0), base);
    for (auto& l : t.tiles)
      for (auto& r : l) r.corrected *= 16.0;
    EXPECT_EQ(solve_exact(t, weights_from_raw(raw), nu, budget * 8.0), base);
  }
}

TEST(MinimumRateAllocation, PicksCheapestEverywhere) {
  const auto a = minimum_rate_allocation(two_tiles());
  EXPECT_EQ(a.choice, (std::vector<std::size_t>{0, 0}));
}

TEST(ExportQcp, TwoTileModelIsWellFormed) {
  const std::string lp = export_qcp(two_tiles(), kHalf, 1.0, 4.0);
  const auto m = oracle::parse_lp(lp);
  EXPECT_TRUE(m.ended);
  EXPECT_EQ(m.binaries.size(), 4u);
  EXPECT_TRUE(m.bounds.count("Lambda"));
  // lambda_def, rate, 2 onehot, 3 rows per (i, j)
  EXPECT_EQ(m.rows.size(), 2u + 2u + 3u * 4u);
  EXPECT_NE(lp.find(" rate: 1 a_0_0 + 3 a_0_1 + 1 a_1_0 + 3 a_1_1 <= 4\n"), std::string::npos) << lp;
  EXPECT_NE(lp.find(" prod_1_1: l_1_1 - [ k_1_1 * a_1_1 ] = 0\n"), std::string::npos);
}

TEST(ExportQcp, SingleTileSingleRepresentation) {
  DistortionTable t;
  t.tiles = {{{22, 5, 3, 3}}};
  const auto m = oracle::parse_lp(export_qcp(t, weights_from_raw({1.0}), 0.5, 10.0));
  EXPECT_EQ(m.binaries, (std::vector<std::string>{"a_0_0"}));
  const auto x = oracle::lp_point(t, {1.0}, {0});
  EXPECT_LE(oracle::max_violation(m, x), 0.0);
  EXPECT_DOUBLE_EQ(oracle::eval_expr(m.objective, x), 3.0);
}

TEST(ExportQcp, SolutionPointsSatisfyRowsAndReproduceObjective) {
  Rng rng(31);
  for (int inst = 0; inst < 200; ++inst) {
    const std::size_t n = 1 + rng.index(6);
    const auto t = oracle::random_table(rng, n, 3);
    const auto w = weights_from_raw(oracle::random_weights(rng, n));
    double lo = 0.0, hi = 0.0;
    for (const auto& l : t.tiles) {
      lo += l.front().rate;
      hi += l.back().rate;
    }
    const double budget = lo + rng.uniform(0.0, 1.0) * (hi - lo);
    const double nu = rng.uniform(0.0, 2.0);
    const auto m = oracle::parse_lp(export_qcp(t, w, nu, budget));
    ASSERT_EQ(m.binaries.size(), [&] {
      std::size_t c = 0;
      for (const auto& l : t.tiles) c += l.size();
      return c;
    }());

    // the model's optimum over feasible binaries equals the exact solver
    double lp_best = INFINITY;
    std::vector<std::size_t> c(n, 0);
    while (true) {
      const auto x = oracle::lp_point(t, w.normalized, c);
      double rate = 0.0;
      for (std::size_t i = 0; i < n; ++i) rate += t.tiles[i][c[i]].rate;
      const double viol = oracle::max_violation(m, x);
      if (rate <= budget) {
        EXPECT_LE(viol, 1e-9);
        lp_best = std::min(lp_best, oracle::eval_expr(m.objective, x));
      } else {
        EXPECT_GT(viol, 0.0);
      }
      std::size_t i = 0;
      while (i < n && ++c[i] == t.tiles[i].size()) c[i++] = 0;
      if (i == n) break;
    }
    const auto exact = evaluate(solve_exact(t, w, nu, budget), t, w, nu);
    EXPECT_NEAR(lp_best, exact.total, 1e-9 * std::max(1.0, exact.total));

    const auto x = oracle::lp_point(t, w.normalized, solve_exact(t, w, nu, budget).choice);
    EXPECT_NEAR(oracle::eval_expr(m.objective, x), exact.total, 1e-9 * std::max(1.0, exact.total));
  }
}
