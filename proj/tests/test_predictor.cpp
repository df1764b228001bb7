#include <gtest/gtest.h>

#include <cmath>

#include "orbit/predictor.hpp"
#include "orbit/synthetic.hpp"
#include "orbit/training.hpp"

using namespace orbit;

namespace {

HeadTrace rolling_trace(std::uint64_t seed, double duration = 6.0) {
  synth::SceneParams sp;
  sp.duration = duration;
  return synth::make_scene(synth::Family::Saccade, sp, seed).trace;
}

// History-only model whose output head is zero: forecasts hold the state.
PredictorModel neutral_model() {
  FusionSpec spec;
  spec.layout.cues.clear();
  nn::Network core(branch_input_shape(spec.layout, 0), spec.history_core, 1);
  std::vector<nn::FusionModel::Branch> b;
  b.push_back({"history", std::move(core)});
  nn::FusionModel m(std::move(b), spec.layout.history_steps, spec.head(), 1);
  for (auto& l : m.trunk().layers()) std::fill(l->params.begin(), l->params.end(), 0.0);
  return {std::move(m), spec.layout};
}

}  // namespace

TEST(Predict, NonePolicyRepeatsCurrentState) {
  const auto tr = rolling_trace(1);
  const auto w = std::span(tr.samples).subspan(100, 21);
  const auto r = predict({w, 0.5}, Policy::None);
  ASSERT_EQ(r.states.size(), 40u);
  for (std::size_t k = 0; k < r.states.size(); ++k) {
    EXPECT_EQ(r.states[k].pan, w.back().pan);
    EXPECT_EQ(r.states[k].tilt, w.back().tilt);
    EXPECT_EQ(r.states[k].roll, w.back().roll);
    EXPECT_NEAR(r.states[k].t, w.back().t + (k + 1) * kDefaultStep, 1e-12);
  }
}

TEST(Predict, HorizonLengthAndBounds) {
  const auto tr = rolling_trace(2);
  const auto w = std::span(tr.samples).subspan(0, 21);
  for (double tau : {0.1, 0.25, 0.5, 1.0}) EXPECT_EQ(predict({w, tau}, Policy::LinReg).states.size(), horizon_steps(tau, kDefaultStep));
  EXPECT_THROW(predict({w, 1.5}, Policy::None), Error);
  EXPECT_THROW(predict({w, 0.0}, Policy::None), Error);
  EXPECT_THROW(predict({{}, 0.5}, Policy::None), Error);
}

TEST(Predict, ModelPoliciesNeedModelAndCues) {
  const auto tr = rolling_trace(3);
  const auto w = std::span(tr.samples).subspan(0, 21);
  EXPECT_THROW(predict({w, 0.5}, Policy::HOnly), Error);
  EXPECT_THROW(predict({w, 0.5}, Policy::FusionMax), Error);
  const auto m = neutral_model();
  // a history-only model has no saliency branch
  EXPECT_THROW(predict({w, 0.5}, Policy::FusionMax, {}, &m), Error);
  EXPECT_NO_THROW(predict({w, 0.5}, Policy::HOnly, {}, &m));
  EXPECT_THROW(predict({w.first(10), 0.5}, Policy::HOnly, {}, &m), Error);
}

TEST(Predict, ZeroOutputModelHoldsState) {
  const auto tr = rolling_trace(4);
  const auto m = neutral_model();
  const auto w = std::span(tr.samples).subspan(50, 21);
  const auto r = predict({w, 1.0}, Policy::HOnly, {}, &m);
  ASSERT_EQ(r.states.size(), 80u);
  for (const auto& s : r.states) {
    EXPECT_DOUBLE_EQ(s.pan, w.back().pan);
    EXPECT_DOUBLE_EQ(s.tilt, w.back().tilt);
  }
}

TEST(Predict, RollHeldExactlyUnderModifiedPolicy) {
  const auto m = neutral_model();
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto tr = rolling_trace(seed);
    for (std::size_t now = 20; now < tr.size(); now += 37) {
      const auto w = std::span(tr.samples).subspan(now - 20, 21);
      for (Policy p : {Policy::None, Policy::LinReg, Policy::HOnly})
        for (const auto& s : predict({w, 0.7}, p, {}, &m).states) EXPECT_EQ(s.roll, w.back().roll);
    }
  }
}

TEST(Predict, LinRegPredictsRollWhenNotHeld) {
  std::vector<HeadState> w;
  for (int k = 0; k <= 20; ++k) w.push_back({k * kDefaultStep, 0.0, 0.0, 0.5 * k});
  PredictionRequest req{w, 0.5};
  req.hold_roll = false;
  EXPECT_NEAR(predict(req, Policy::LinReg).states.back().roll, 0.5 * 60, 1e-6);
  req.hold_roll = true;
  EXPECT_EQ(predict(req, Policy::LinReg).states.back().roll, 10.0);
}

TEST(PolicyPredictor, RollErrorEqualsNonePolicyOnEveryTrace) {
  const auto m = neutral_model();
  const std::vector<double> horizons{0.1, 0.3, 0.5, 0.8, 1.0};
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    const auto tr = rolling_trace(seed);
    for (Policy p : {Policy::None, Policy::LinReg, Policy::HOnly}) {
      PolicyPredictor pred(p, 20, p == Policy::HOnly ? &m : nullptr);
      const auto e = evaluate_predictor(pred, tr, horizons, 20, 5);
      for (std::size_t k = 0; k < horizons.size(); ++k) EXPECT_EQ(e.roll_mae[k], e.none_roll_mae[k]);
    }
  }
}

TEST(PolicyPredictor, NoneErrorOnConstantVelocityIsVelocityTimesHorizon) {
  const double vp = 24.0, vt = 6.0;
  const auto tr = synth::constant_velocity_trace(vp, vt, 10.0);
  const std::vector<double> horizons{0.1, 0.25, 0.5, 1.0};
  const auto e = evaluate_predictor(PolicyPredictor(Policy::None), tr, horizons, 0, 1);
  for (std::size_t k = 0; k < horizons.size(); ++k) {
    // angular error averages pan and tilt
    EXPECT_NEAR(e.mae[k], 0.5 * (vp + vt) * horizons[k], 1e-9);
    EXPECT_DOUBLE_EQ(e.compensation[k], 0.0);
  }
  const auto lin = evaluate_predictor(PolicyPredictor(Policy::LinReg), tr, horizons, 20, 1);
  for (std::size_t k = 0; k < horizons.size(); ++k) EXPECT_NEAR(lin.compensation[k], 1.0, 1e-6);
}

TEST(PolicyPredictor, ShortHistoryHolds) {
  const auto tr = synth::constant_velocity_trace(20.0, 0.0, 2.0);
  const auto f = PolicyPredictor(Policy::LinReg).forecast(tr, 5, 10);
  for (const auto& s : f) EXPECT_EQ(s.pan, tr[5].pan);
}

TEST(OraclePredictor, PerfectForecast) {
  const auto tr = rolling_trace(5);
  const std::vector<double> horizons{0.5};
  const auto e = evaluate_predictor(OraclePredictor(), tr, horizons, 20, 10);
  EXPECT_EQ(e.mae[0], 0.0);
  EXPECT_EQ(e.compensation[0], 1.0);
  EXPECT_THROW(evaluate_predictor(OraclePredictor(), tr, horizons, tr.size() - 10, 1), Error);
}

TEST(PolicyNames, RoundTrip) {
  for (Policy p : {Policy::None, Policy::LinReg, Policy::HOnly, Policy::FusionMax, Policy::FusionCentroid})
    EXPECT_EQ(parse_policy(to_string(p)), p);
  EXPECT_THROW(parse_policy("kalman"), Error);
}

TEST(CueTimeline, LatestMapNotAfterTime) {
  std::vector<GrayMap> maps(3, GrayMap(16, 8));
  maps[0].at(8, 4) = 1.0;
  maps[1].at(12, 4) = 1.0;
  maps[2].at(4, 4) = 1.0;
  const CueTimeline tl({0.0, 0.05, 0.10}, maps);
  EXPECT_EQ(tl.index_at(0.0), 0u);
  EXPECT_EQ(tl.index_at(0.049), 0u);
  EXPECT_EQ(tl.index_at(0.05), 1u);
  EXPECT_EQ(tl.index_at(5.0), 2u);
  const auto cue = tl.cue(CueSource::SaliencyMax, 0.1, HeadState{}, 8, kDefaultStep);
  EXPECT_EQ(cue.offsets.size(), 9u);
  EXPECT_DOUBLE_EQ(cue.offsets.back()[0], -0.5);
  EXPECT_THROW(CueTimeline({0.0, 0.0, 0.1}, maps), Error);
  SceneCues none;
  const CueSource want[] = {CueSource::SaliencyMax};
  EXPECT_THROW(none.collect(want, 0.0, HeadState{}, 4, kDefaultStep), Error);
}

TEST(MakeSamples, ShapesAndTargets) {
  Recording rec{synth::constant_velocity_trace(16.0, 0.0, 3.0), {}};
  PredictorLayout layout;
  const auto s = make_samples(rec, layout, 10);
  ASSERT_FALSE(s.empty());
  EXPECT_EQ(s.size(), (rec.trace.size() - 40 - 20 + 9) / 10);
  EXPECT_EQ(s[0].inputs.size(), 1u);
  EXPECT_EQ(s[0].inputs[0].shape, (nn::Shape{1, 20, 2}));
  ASSERT_EQ(s[0].target.size(), 80u);
  for (std::size_t k = 0; k < 80; k += 2) {
    EXPECT_NEAR(s[0].target[k], 1.0, 1e-9);
    EXPECT_EQ(s[0].target[k + 1], 0.0);
  }
}

TEST(MakeSamples, CueBranchesNeedMaps) {
  synth::SceneParams sp;
  sp.duration = 3.0;
  auto recs = synth::recordings(1, sp, 9);
  PredictorLayout layout;
  layout.cues = {CueSource::SaliencyMax, CueSource::SaliencyCentroid};
  const auto s = make_samples(recs[0], layout, 20);
  ASSERT_FALSE(s.empty());
  EXPECT_EQ(s[0].inputs.size(), 3u);
  EXPECT_EQ(s[0].inputs[1].shape, (nn::Shape{1, 40, 4}));
  for (const auto& x : s)
    for (std::size_t b = 1; b < 3; ++b)
      for (double v : x.inputs[b].v) EXPECT_LE(std::abs(v), 1.0);
  layout.cues = {CueSource::MotionMax};
  EXPECT_THROW(make_samples(recs[0], layout, 20), Error);
}

TEST(Training, TinyCrossValidationRuns) {
  synth::SceneParams sp;
  sp.duration = 3.0;
  const auto recs = synth::recordings(5, sp, 3);
  FusionSpec spec;
  spec.layout.cues = {CueSource::SaliencyMax};
  spec.history_core = "gru:4";
  spec.cue_core = "gru:3";
  spec.trunk = "gru:4,dense:8:relu";
  nn::TrainConfig cfg;
  cfg.learning_rate = 3e-3;
  cfg.batch_size = 16;
  cfg.max_epochs = 3;
  cfg.patience = 2;
  cfg.folds = 2;
  const std::vector<double> horizons{0.25, 0.5};
  const auto cv = cross_validate(spec, recs, cfg, 8, horizons);
  ASSERT_EQ(cv.folds.size(), 2u);
  EXPECT_EQ(cv.best.layout.cues.size(), 1u);
  EXPECT_EQ(cv.best.net.branches().size(), 2u);
  for (const auto& b : cv.best.net.branches()) EXPECT_TRUE(b.core.frozen());
  for (const auto& f : cv.folds) {
    EXPECT_EQ(f.test.size(), 1u);
    EXPECT_EQ(f.eval.mae.size(), 2u);
    EXPECT_TRUE(std::isfinite(f.eval.mae[1]));
    // roll is held: identical to the none policy
    EXPECT_EQ(f.eval.roll_mae[1], f.eval.none_roll_mae[1]);
  }
  // rerun gives the same model
  const auto again = cross_validate(spec, recs, cfg, 8, horizons);
  EXPECT_EQ(again.best.net.trunk().layers().back()->params, cv.best.net.trunk().layers().back()->params);
}
