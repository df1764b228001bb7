#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "orbit/fixtures.hpp"
#include "orbit/simulation.hpp"
#include "orbit/synthetic.hpp"

using namespace orbit;

namespace {

Manifest small_manifest(std::size_t segments = 12, std::uint64_t seed = 3) {
  synth::ManifestParams mp;
  mp.segments = segments;
  return synth::make_manifest(mp, seed);
}

HeadTrace viewer(std::uint64_t seed, double duration = 13.0) {
  return io::exploration_traces(1, duration, seed).front();
}

double min_ladder_rate(const DistortionTable& t) {
  double r = 0.0;
  for (const auto& l : t.tiles) r += l.front().rate;
  return r;
}

void expect_same(const SessionStats& a, const SessionStats& b) {
  ASSERT_EQ(a.segments.size(), b.segments.size());
  EXPECT_EQ(a.mean_ws_psnr, b.mean_ws_psnr);
  EXPECT_EQ(a.total_bits, b.total_bits);
  EXPECT_EQ(a.rebuffer_time, b.rebuffer_time);
  EXPECT_EQ(a.startup_delay, b.startup_delay);
  EXPECT_EQ(a.log, b.log);
  for (std::size_t k = 0; k < a.segments.size(); ++k) {
    EXPECT_EQ(a.segments[k].allocation.choice, b.segments[k].allocation.choice);
    EXPECT_EQ(a.segments[k].download_time, b.segments[k].download_time);
    EXPECT_EQ(a.segments[k].ws_psnr, b.segments[k].ws_psnr);
    EXPECT_EQ(a.segments[k].buffer_after, b.segments[k].buffer_after);
  }
}

}  // namespace

TEST(TargetRate, HarmonicMeanExamples) {
  const BufferState mid{2.0, 4.0};
  const double flat[] = {10e6, 10e6, 10e6};
  EXPECT_DOUBLE_EQ(estimate_target_rate(flat, mid, 4e6), 10e6);
  const double mixed[] = {5e6, 10e6, 10e6};
  EXPECT_NEAR(estimate_target_rate(mixed, mid, 4e6), 7.5e6, 1e-6);
  EXPECT_NEAR(estimate_target_rate(mixed, BufferState{0.0, 4.0}, 4e6), 3.75e6, 1e-6);
  EXPECT_NEAR(estimate_target_rate(mixed, BufferState{3.5, 4.0}, 4e6), 8.25e6, 1e-6);
  // only the last three samples count
  const double longer[] = {1e6, 5e6, 10e6, 10e6};
  EXPECT_NEAR(estimate_target_rate(longer, mid, 4e6), 7.5e6, 1e-6);
  EXPECT_EQ(estimate_target_rate({}, mid, 4e6), 4e6);
  // occupancy band edges
  EXPECT_DOUBLE_EQ(estimate_target_rate(flat, BufferState{1.0, 4.0}, 4e6), 10e6);
  EXPECT_DOUBLE_EQ(estimate_target_rate(flat, BufferState{3.0, 4.0}, 4e6), 10e6);
}

TEST(ThroughputTrace, DownloadTimeAcrossSteps) {
  const ThroughputTrace tr{{0.0, 1.0}, {1e6, 2e6}};
  EXPECT_DOUBLE_EQ(tr.download_time(0.0, 3e6), 2.0);
  EXPECT_DOUBLE_EQ(tr.download_time(0.5, 0.5e6), 0.5);
  EXPECT_DOUBLE_EQ(tr.download_time(5.0, 4e6), 2.0);
  EXPECT_EQ(ThroughputTrace::constant(std::numeric_limits<double>::infinity()).download_time(3.0, 1e9), 0.0);
  EXPECT_THROW((ThroughputTrace{{0.0, 0.0}, {1e6, 1e6}}.validate()), Error);
  EXPECT_THROW((ThroughputTrace{{0.0}, {0.0}}.validate()), Error);
  EXPECT_THROW((ThroughputTrace{{0.0}, {std::nan("")}}.validate()), Error);
}

TEST(Monolithic, HighestCommonLevelThatFits) {
  const auto m = small_manifest(1);
  const auto t = m.table(0);
  double r2 = 0.0, r3 = 0.0;
  for (const auto& l : t.tiles) {
    r2 += l[2].rate;
    r3 += l[3].rate;
  }
  bool fb = true;
  auto a = monolithic_allocation(t, (r2 + r3) / 2, &fb);
  EXPECT_FALSE(fb);
  for (auto c : a.choice) EXPECT_EQ(c, 2u);
  a = monolithic_allocation(t, min_ladder_rate(t) / 2, &fb);
  EXPECT_TRUE(fb);
  for (auto c : a.choice) EXPECT_EQ(c, 0u);
}

TEST(Session, InfiniteCapacityDeliversTopRepresentation) {
  const auto m = small_manifest(6);
  const auto hm = viewer(1, 7.0);
  const auto link = ThroughputTrace::constant(std::numeric_limits<double>::infinity());
  OraclePredictor oracle;
  for (double nu : {0.0, 0.5}) {
    for (auto p : {StreamPolicy::Monolithic, StreamPolicy::TiledNoPred, StreamPolicy::TiledPred}) {
      SessionConfig cfg;
      cfg.policy = p;
      cfg.predictor = &oracle;
      cfg.nu = nu;
      cfg.startup_rate = std::numeric_limits<double>::infinity();
      const auto st = run_session(m, link, hm, cfg);
      ASSERT_EQ(st.segments.size(), 6u);
      for (const auto& s : st.segments) {
        for (std::size_t n = 0; n < s.allocation.choice.size(); ++n)
          EXPECT_EQ(s.allocation.choice[n], m.segments[s.index][n].size() - 1) << to_string(p) << " nu " << nu;
        const auto table = m.table(s.index);
        Allocation top{std::vector<std::size_t>(m.grid.size(), 4)};
        EXPECT_EQ(s.ws_psnr, score_segment(m, s.index, table, top, hm, cfg));
        EXPECT_EQ(s.rebuffer, 0.0);
      }
    }
  }
}

TEST(Session, ConservationOfBits) {
  const auto m = small_manifest();
  const auto hm = viewer(2);
  const auto link = io::wandering_link(30.0, 4);
  for (auto p : {StreamPolicy::Monolithic, StreamPolicy::TiledNoPred}) {
    SessionConfig cfg;
    cfg.policy = p;
    const auto st = run_session(m, link, hm, cfg);
    double total = 0.0;
    for (const auto& s : st.segments) {
      const auto t = m.table(s.index);
      double r = 0.0;
      for (std::size_t n = 0; n < t.size(); ++n) r += t.tiles[n][s.allocation.choice[n]].rate;
      EXPECT_EQ(s.bits, r * m.segment_duration);
      total += r * m.segment_duration;
    }
    EXPECT_EQ(st.total_bits, total);
  }
}

TEST(Session, BufferBoundsAndRateConstraint) {
  const auto m = small_manifest(20, 5);
  OraclePredictor oracle;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto hm = viewer(seed, 21.0);
    for (double mbps : {1.5, 3.0, 6.0, 16.0}) {
      const auto link = ThroughputTrace::constant(mbps * 1e6);
      for (auto p : {StreamPolicy::Monolithic, StreamPolicy::TiledNoPred, StreamPolicy::TiledPred}) {
        SessionConfig cfg;
        cfg.policy = p;
        cfg.predictor = &oracle;
        const auto st = run_session(m, link, hm, cfg);
        double rebuf = 0.0;
        for (const auto& s : st.segments) {
          EXPECT_GE(s.buffer_after, 0.0);
          EXPECT_LE(s.buffer_after, cfg.buffer_capacity + 1e-12);
          EXPECT_GE(s.rebuffer, 0.0);
          rebuf += s.rebuffer;
          const double floor = min_ladder_rate(m.table(s.index));
          if (floor <= s.target_rate) {
            EXPECT_FALSE(s.fallback);
            EXPECT_LE(s.rate_used, s.target_rate);
          } else {
            EXPECT_TRUE(s.fallback);
            EXPECT_EQ(s.rate_used, floor);
          }
        }
        EXPECT_EQ(st.rebuffer_time, rebuf);
        EXPECT_GE(st.rebuffer_ratio, 0.0);
      }
    }
  }
}

TEST(Session, InfeasibleBudgetFallsBackAndLogs) {
  const auto m = small_manifest(4);
  SessionConfig cfg;
  cfg.startup_rate = 1e3;
  const auto st = run_session(m, ThroughputTrace::constant(8e6), viewer(3, 5.0), cfg);
  ASSERT_TRUE(st.segments[0].fallback);
  ASSERT_FALSE(st.log.empty());
  EXPECT_NE(st.log.front().find("minimum representations"), std::string::npos);
  for (auto c : st.segments[0].allocation.choice) EXPECT_EQ(c, 0u);
}

TEST(Session, ShortHeadTraceTruncatesWithWarning) {
  const auto m = small_manifest(12);
  const auto st = run_session(m, ThroughputTrace::constant(8e6), viewer(4, 5.0), SessionConfig{});
  EXPECT_EQ(st.segments.size(), 5u);
  ASSERT_FALSE(st.log.empty());
  EXPECT_NE(st.log.front().find("5 of 12 segments"), std::string::npos);
  EXPECT_THROW(run_session(m, ThroughputTrace::constant(8e6), viewer(4, 0.5), SessionConfig{}), Error);
}

TEST(Session, DeterministicReplay) {
  const auto m = small_manifest();
  const auto hm = viewer(6);
  const auto link = io::wandering_link(30.0, 6);
  PolicyPredictor lin(Policy::LinReg);
  for (auto p : {StreamPolicy::Monolithic, StreamPolicy::TiledNoPred, StreamPolicy::TiledPred}) {
    SessionConfig cfg;
    cfg.policy = p;
    cfg.predictor = &lin;
    expect_same(run_session(m, link, hm, cfg), run_session(m, link, hm, cfg));
  }
}

TEST(Session, PolicyOrderingOnFixture) {
  const auto m = small_manifest(20, 8);
  OraclePredictor oracle;
  std::size_t strict = 0, points = 0;
  for (std::uint64_t seed = 1; seed <= 2; ++seed) {
    const auto hm = viewer(seed, 21.0);
    for (double mbps : {6.0, 10.0, 16.0}) {
      const auto link = ThroughputTrace::constant(mbps * 1e6);
      SessionConfig cfg;
      cfg.predictor = &oracle;
      cfg.policy = StreamPolicy::Monolithic;
      const double mono = run_session(m, link, hm, cfg).mean_ws_psnr;
      cfg.policy = StreamPolicy::TiledNoPred;
      const double tiled = run_session(m, link, hm, cfg).mean_ws_psnr;
      cfg.policy = StreamPolicy::TiledPred;
      const double pred = run_session(m, link, hm, cfg).mean_ws_psnr;
      EXPECT_GT(tiled, mono) << mbps;
      EXPECT_GE(pred, tiled) << mbps;
      ++points;
      if (pred > tiled) ++strict;
    }
  }
  EXPECT_GE(strict, points / 2);
}

TEST(Session, FrameScoringTracksLadderScoring) {
  synth::ManifestParams mp;
  mp.segments = 4;
  mp.frames = true;
  const auto m = synth::make_manifest(mp, 11);
  const auto hm = viewer(7, 5.0);
  SessionConfig cfg;
  const auto on_frames = run_session(m, ThroughputTrace::constant(8e6), hm, cfg);
  cfg.use_frames = false;
  const auto on_ladder = run_session(m, ThroughputTrace::constant(8e6), hm, cfg);
  ASSERT_EQ(on_frames.segments.size(), on_ladder.segments.size());
  for (std::size_t k = 0; k < on_frames.segments.size(); ++k) {
    EXPECT_EQ(on_frames.segments[k].allocation.choice, on_ladder.segments[k].allocation.choice);
    // degraded tiles hit the ladder MSE in expectation, not exactly
    EXPECT_NEAR(on_frames.segments[k].ws_psnr, on_ladder.segments[k].ws_psnr, 0.5);
  }
}

TEST(Session, ConfigErrors) {
  const auto m = small_manifest(3);
  const auto hm = viewer(1, 4.0);
  SessionConfig cfg;
  cfg.policy = StreamPolicy::TiledPred;
  EXPECT_THROW(run_session(m, ThroughputTrace::constant(8e6), hm, cfg), Error);
  cfg.policy = StreamPolicy::TiledNoPred;
  cfg.buffer_capacity = 0.5;
  EXPECT_THROW(run_session(m, ThroughputTrace::constant(8e6), hm, cfg), Error);
  EXPECT_EQ(parse_stream_policy("tiled-no-pred"), StreamPolicy::TiledNoPred);
  EXPECT_THROW(parse_stream_policy("greedy"), Error);
  auto bad = m;
  std::swap(bad.segments[1][3][0], bad.segments[1][3][1]);
  try {
    bad.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("segment 1 tile 3"), std::string::npos);
  }
}

TEST(Sweep, RowOrderAndDuplicateRates) {
  const auto m = small_manifest(6);
  const std::vector<HeadTrace> folds{viewer(1, 7.0), viewer(2, 7.0)};
  OraclePredictor oracle;
  const std::vector<SweepPolicy> pols{{StreamPolicy::Monolithic, "", {}},
                                      {StreamPolicy::TiledNoPred, "", {}},
                                      {StreamPolicy::TiledPred, "oracle", {&oracle}}};
  const std::vector<double> rates{6.0, 8.0, 6.0};
  const auto rows = sweep_rates(m, rates, folds, pols, SessionConfig{});
  ASSERT_EQ(rows.size(), 18u);
  EXPECT_EQ(rows[0].policy, "monolithic");
  EXPECT_EQ(rows[6].policy, "tiled");
  EXPECT_EQ(rows[17].policy, "oracle");
  for (std::size_t p = 0; p < 3; ++p)
    for (std::size_t f = 0; f < 2; ++f) {
      const auto& a = rows[p * 6 + f];
      const auto& b = rows[p * 6 + 4 + f];
      EXPECT_EQ(a.rate_mbps, 6.0);
      EXPECT_EQ(a.fold, f);
      expect_same(a.stats, b.stats);
    }
  EXPECT_THROW(sweep_rates(m, std::vector<double>{}, folds, pols, SessionConfig{}), Error);
  EXPECT_THROW(sweep_rates(m, std::vector<double>{-1.0}, folds, pols, SessionConfig{}), Error);
}

TEST(Sweep, QualityNonDecreasingInRate) {
  const auto m = small_manifest(10, 2);
  const std::vector<HeadTrace> folds{viewer(3, 11.0)};
  const std::vector<SweepPolicy> pols{{StreamPolicy::Monolithic, "", {}}, {StreamPolicy::TiledNoPred, "", {}}};
  const std::vector<double> rates{6, 8, 10, 12, 14, 16};
  const auto rows = sweep_rates(m, rates, folds, pols, SessionConfig{});
  for (std::size_t p = 0; p < 2; ++p)
    for (std::size_t r = 1; r < rates.size(); ++r)
      EXPECT_GE(rows[p * 6 + r].stats.mean_ws_psnr, rows[p * 6 + r - 1].stats.mean_ws_psnr - 1e-9) << rows[p * 6].policy;
}
