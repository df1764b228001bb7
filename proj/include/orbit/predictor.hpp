#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "orbit/common.hpp"
#include "orbit/neural.hpp"
#include "orbit/prediction.hpp"

namespace orbit {

/// Input/output arrangement of a trained forecaster.
struct PredictorLayout {
  std::size_t history_steps = 20;  // differences in the history window (W / dt)
  std::size_t cue_steps = 40;      // differences in the cue window (W_c / dt)
  std::size_t horizon_steps = 40;  // forecast steps produced by the network
  bool hold_roll = true;           // roll forecast = current roll
  std::vector<CueSource> cues;     // branches after the head-motion branch
  double min_output_scale = 0.0;   // degrees per step; floor of the forecast scale

  /// Per-axis scale of the network's forecast differences.
  AxisVec output_scale(const AxisVec& norm_scale) const {
    AxisVec s = norm_scale;
    for (auto& v : s) v = std::max(v, min_output_scale);
    return s;
  }

  std::size_t axes() const { return hold_roll ? 2 : 3; }
  std::size_t output_size() const { return horizon_steps * axes(); }
};

/// A fusion network together with the layout used to build its inputs.
struct PredictorModel {
  nn::FusionModel net;
  PredictorLayout layout;
};

/// Network input of the head-motion branch: (1, history_steps, axes).
inline nn::Tensor history_tensor(const DiffWindow& w, const PredictorLayout& layout) {
  require(w.diffs.size() == layout.history_steps, ErrorCode::ShapeMismatch,
          "history window has " + std::to_string(w.diffs.size()) + " differences, model expects " +
              std::to_string(layout.history_steps));
  nn::Tensor t({1, layout.history_steps, layout.axes()});
  for (std::size_t k = 0; k < w.diffs.size(); ++k)
    for (std::size_t a = 0; a < layout.axes(); ++a) t.at(0, k, a) = w.diffs[k][a];
  return t;
}

/// Network input of a cue branch: (1, cue_steps, 4) holding the differenced
/// trajectory and the matching relative offsets.
inline nn::Tensor cue_tensor(const SemanticCue& cue, const PredictorLayout& layout) {
  require(cue.trajectory.size() == layout.cue_steps && cue.offsets.size() == layout.cue_steps + 1,
          ErrorCode::ShapeMismatch,
          "cue has " + std::to_string(cue.trajectory.size()) + " steps, model expects " +
              std::to_string(layout.cue_steps));
  nn::Tensor t({1, layout.cue_steps, 4});
  for (std::size_t k = 0; k < layout.cue_steps; ++k) {
    t.at(0, k, 0) = cue.trajectory[k][0];
    t.at(0, k, 1) = cue.trajectory[k][1];
    t.at(0, k, 2) = cue.offsets[k + 1][0];
    t.at(0, k, 3) = cue.offsets[k + 1][1];
  }
  return t;
}

inline std::vector<nn::Tensor> model_inputs(const DiffWindow& w, std::span<const SemanticCue> cues,
                                            const PredictorLayout& layout) {
  std::vector<nn::Tensor> in{history_tensor(w, layout)};
  for (CueSource src : layout.cues) {
    const auto it = std::find_if(cues.begin(), cues.end(), [&](const SemanticCue& c) { return c.source == src; });
    require(it != cues.end(), ErrorCode::InvalidArgument, std::string("missing cue: ") + to_string(src));
    in.push_back(cue_tensor(*it, layout));
  }
  return in;
}

/// Normalized future differences used as the training target.
inline std::vector<double> future_target(std::span<const HeadState> future, const HeadState& current,
                                         const DiffWindow& w, const PredictorLayout& layout) {
  require(future.size() >= layout.horizon_steps, ErrorCode::ShapeMismatch, "future shorter than horizon");
  std::vector<double> t;
  const AxisVec scale = layout.output_scale(w.norm_scale);
  HeadState prev = current;
  for (std::size_t k = 0; k < layout.horizon_steps; ++k) {
    const auto d = axis_delta(prev, future[k]);
    for (std::size_t a = 0; a < layout.axes(); ++a) t.push_back(scale[a] > 0.0 ? d[a] / scale[a] : 0.0);
    prev = future[k];
  }
  return t;
}

/// Runs the network and remaps its clamped output to absolute orientations.
inline std::vector<HeadState> model_forecast(const PredictorModel& model, const DiffWindow& w,
                                             std::span<const SemanticCue> cues, const HeadState& current, double dt) {
  const auto& layout = model.layout;
  const nn::Tensor y = model.net.forward(model_inputs(w, cues, layout));
  require(y.v.size() == layout.output_size(), ErrorCode::ShapeMismatch, "model output size does not match its layout");
  std::vector<AxisVec> diffs(layout.horizon_steps, AxisVec{0.0, 0.0, 0.0});
  for (std::size_t k = 0; k < layout.horizon_steps; ++k)
    for (std::size_t a = 0; a < layout.axes(); ++a)
      diffs[k][a] = std::clamp(y.v[k * layout.axes() + a], -1.0, 1.0);
  return remap(diffs, current, layout.output_scale(w.norm_scale), dt);
}

enum class Policy { None, LinReg, HOnly, FusionMax, FusionCentroid };

inline const char* to_string(Policy p) {
  switch (p) {
    case Policy::None: return "none";
    case Policy::LinReg: return "linreg";
    case Policy::HOnly: return "h-only";
    case Policy::FusionMax: return "fusion-max";
    default: return "fusion-centroid";
  }
}

inline Policy parse_policy(const std::string& s) {
  for (Policy p : {Policy::None, Policy::LinReg, Policy::HOnly, Policy::FusionMax, Policy::FusionCentroid})
    if (s == to_string(p)) return p;
  fail(ErrorCode::InvalidArgument, "unknown prediction policy '" + s + "'");
}

struct PredictionRequest {
  std::span<const HeadState> window;  // history, oldest first; back() is the current state
  double horizon = 0.5;               // seconds, in [0.1, 1.0]
  double dt = kDefaultStep;
  bool hold_roll = true;
};

struct PredictionResult {
  std::vector<HeadState> states;  // one per dt step up to the horizon
};

inline std::size_t horizon_steps(double horizon, double dt) {
  return static_cast<std::size_t>(std::lround(horizon / dt));
}

/// Extends a forecast to `steps` entries by holding its last state.
inline void pad_forecast(std::vector<HeadState>& f, const HeadState& current, std::size_t steps, double dt) {
  if (f.size() > steps) f.resize(steps);
  while (f.size() < steps) {
    HeadState s = f.empty() ? current : f.back();
    s.t = current.t + static_cast<double>(f.size() + 1) * dt;
    f.push_back(s);
  }
}

/// Forecast under one policy. Model policies run the network over the last
/// history window (and cues); forecasts longer than the network's horizon
/// hold the final state.
inline PredictionResult predict(const PredictionRequest& req, Policy policy,
                                std::span<const SemanticCue> cues = {}, const PredictorModel* model = nullptr) {
  require(!req.window.empty(), ErrorCode::InvalidArgument, "empty history window");
  require(req.dt > 0.0, ErrorCode::InvalidArgument, "sampling period must be positive");
  require(req.horizon > 0.0 && req.horizon <= 1.0 + 1e-9, ErrorCode::InvalidArgument, "horizon must lie in (0, 1] s");
  const HeadState& cur = req.window.back();
  const std::size_t steps = horizon_steps(req.horizon, req.dt);
  PredictionResult r;
  switch (policy) {
    case Policy::None:
      r.states = hold_forecast(cur, steps, req.dt);
      break;
    case Policy::LinReg:
      r.states = linreg_forecast(req.window, steps, req.dt);
      break;
    default: {
      require(model != nullptr, ErrorCode::InvalidArgument, std::string("policy ") + to_string(policy) + " needs a model");
      const auto& layout = model->layout;
      if (policy == Policy::FusionMax || policy == Policy::FusionCentroid) {
        const CueSource want = policy == Policy::FusionMax ? CueSource::SaliencyMax : CueSource::SaliencyCentroid;
        const CueSource other = want == CueSource::SaliencyMax ? CueSource::SaliencyCentroid : CueSource::SaliencyMax;
        const auto has = [&](CueSource c) { return std::find(layout.cues.begin(), layout.cues.end(), c) != layout.cues.end(); };
        require(has(want) || !has(other), ErrorCode::InvalidArgument,
                std::string("model has no ") + to_string(want) + " branch");
        require(!layout.cues.empty(), ErrorCode::InvalidArgument, "fusion policy needs a model with cue branches");
        require(!cues.empty(), ErrorCode::InvalidArgument, "fusion policy needs semantic cues");
      }
      require(req.window.size() >= layout.history_steps + 1, ErrorCode::InvalidArgument,
              "history window too short for the model");
      const auto hist = req.window.subspan(req.window.size() - layout.history_steps - 1);
      r.states = model_forecast(*model, to_diff_window(hist), cues, cur, req.dt);
      break;
    }
  }
  pad_forecast(r.states, cur, steps, req.dt);
  if (req.hold_roll)
    for (auto& s : r.states) s.roll = cur.roll;
  return r;
}

/// Policy matching a model's branches.
inline Policy model_policy(const PredictorLayout& layout) {
  if (layout.cues.empty()) return Policy::HOnly;
  const bool centroid = std::find(layout.cues.begin(), layout.cues.end(), CueSource::SaliencyCentroid) != layout.cues.end();
  const bool max = std::find(layout.cues.begin(), layout.cues.end(), CueSource::SaliencyMax) != layout.cues.end();
  return centroid && !max ? Policy::FusionCentroid : Policy::FusionMax;
}

/// Per-map cue targets on a timeline, sampled onto the trace grid.
class CueTimeline {
 public:
  CueTimeline() = default;
  /// `frame_heads` non-empty marks head-centered maps (motion maps).
  CueTimeline(std::vector<double> times, std::vector<GrayMap> maps, std::vector<HeadState> frame_heads = {})
      : times_(std::move(times)), heads_(std::move(frame_heads)) {
    require(!times_.empty() && times_.size() == maps.size(), ErrorCode::InvalidArgument,
            "cue timeline needs one time per map");
    require(heads_.empty() || heads_.size() == maps.size(), ErrorCode::InvalidArgument,
            "cue timeline needs one head state per map");
    for (std::size_t i = 1; i < times_.size(); ++i)
      require(times_[i] > times_[i - 1], ErrorCode::DataError, "map timestamps not strictly increasing");
    for (const auto& m : maps) {
      max_.push_back(map_target(m, CueSource::SaliencyMax));
      centroid_.push_back(map_target(m, CueSource::SaliencyCentroid));
    }
  }

  bool empty() const { return times_.empty(); }
  bool head_centered() const { return !heads_.empty(); }
  std::size_t size() const { return times_.size(); }
  const std::vector<double>& times() const { return times_; }
  const std::vector<HeadState>& heads() const { return heads_; }

  /// Map index shown at time t (latest map not after t).
  std::size_t index_at(double t) const {
    const auto it = std::upper_bound(times_.begin(), times_.end(), t + 1e-9);
    return it == times_.begin() ? 0 : static_cast<std::size_t>(it - times_.begin() - 1);
  }

  /// Cue over `steps` differences ending at time `now`.
  SemanticCue cue(CueSource source, double now, const HeadState& current, std::size_t steps, double dt) const {
    std::vector<CueTarget> targets;
    std::vector<HeadState> heads;
    for (std::size_t k = 0; k <= steps; ++k) {
      const double t = now - static_cast<double>(steps - k) * dt;
      const std::size_t i = index_at(t);
      targets.push_back(source == CueSource::SaliencyCentroid ? centroid_[i] : max_[i]);
      if (head_centered()) heads.push_back(heads_[i]);
    }
    return cue_from_targets(source, targets, current, heads);
  }

 private:
  std::vector<double> times_;
  std::vector<HeadState> heads_;
  std::vector<CueTarget> max_, centroid_;
};

/// Scene information available to a forecaster for one recording.
struct SceneCues {
  std::shared_ptr<const CueTimeline> saliency;
  std::shared_ptr<const CueTimeline> motion;

  std::vector<SemanticCue> collect(std::span<const CueSource> sources, double now, const HeadState& current,
                                   std::size_t steps, double dt) const {
    std::vector<SemanticCue> out;
    for (CueSource s : sources) {
      const CueTimeline* tl = s == CueSource::MotionMax ? motion.get() : saliency.get();
      require(tl != nullptr, ErrorCode::InvalidArgument, std::string("no maps for cue ") + to_string(s));
      out.push_back(tl->cue(s, now, current, steps, dt));
    }
    return out;
  }
};

/// Forecasts the head trajectory from a recording up to sample `now`.
class ViewportPredictor {
 public:
  virtual ~ViewportPredictor() = default;
  virtual std::string name() const = 0;
  /// One state per dt step of `trace`, `steps` long. Must only read
  /// samples <= now (the oracle excepted).
  virtual std::vector<HeadState> forecast(const HeadTrace& trace, std::size_t now, std::size_t steps) const = 0;
};

class PolicyPredictor final : public ViewportPredictor {
 public:
  PolicyPredictor(Policy policy, std::size_t history_steps = 20, const PredictorModel* model = nullptr,
                  SceneCues scene = {}, bool hold_roll = true)
      : policy_(policy), history_(history_steps), model_(model), scene_(scene), hold_roll_(hold_roll) {
    if (model_) history_ = model_->layout.history_steps;
  }

  std::string name() const override { return to_string(policy_); }

  std::vector<HeadState> forecast(const HeadTrace& trace, std::size_t now, std::size_t steps) const override {
    const HeadState& cur = trace[now];
    if (policy_ != Policy::None && now < history_) {
      // not enough history yet
      return hold_forecast(cur, steps, trace.dt);
    }
    const std::size_t first = policy_ == Policy::None ? now : now - history_;
    PredictionRequest req{std::span(trace.samples).subspan(first, now - first + 1), 1.0, trace.dt, hold_roll_};
    std::vector<SemanticCue> cues;
    if (model_ && !model_->layout.cues.empty()) {
      const std::size_t cs = model_->layout.cue_steps;
      cues = scene_.collect(model_->layout.cues, cur.t, cur, cs, trace.dt);
    }
    // The request horizon is capped at one second; longer forecasts hold.
    req.horizon = std::min(1.0, static_cast<double>(std::max<std::size_t>(steps, 1)) * trace.dt);
    auto r = predict(req, policy_, cues, model_).states;
    pad_forecast(r, cur, steps, trace.dt);
    return r;
  }

 private:
  Policy policy_;
  std::size_t history_;
  const PredictorModel* model_;
  SceneCues scene_;
  bool hold_roll_;
};

/// Ground-truth future (the upper bound used in streaming comparisons).
class OraclePredictor final : public ViewportPredictor {
 public:
  std::string name() const override { return "oracle"; }
  std::vector<HeadState> forecast(const HeadTrace& trace, std::size_t now, std::size_t steps) const override {
    std::vector<HeadState> out;
    for (std::size_t k = 1; k <= steps; ++k) out.push_back(trace[std::min(trace.size() - 1, now + k)]);
    return out;
  }
};

/// Ground truth for the `steps` samples after `now` (clamped at the end).
inline std::vector<HeadState> future_of(const HeadTrace& trace, std::size_t now, std::size_t steps) {
  return OraclePredictor().forecast(trace, now, steps);
}

struct PredictionEval {
  std::vector<double> horizons;  // seconds
  std::vector<double> mae, rmse, none_mae, roll_mae, none_roll_mae, compensation;
  double mean_compensation = 0.0;
};

/// Slides over a trace and accumulates per-horizon errors of `predictor`
/// and of the no-prediction baseline.
inline PredictionEval evaluate_predictor(const ViewportPredictor& predictor, const HeadTrace& trace,
                                         std::span<const double> horizons, std::size_t first, std::size_t stride) {
  require(!horizons.empty() && stride > 0, ErrorCode::InvalidArgument, "bad evaluation parameters");
  std::size_t max_steps = 0;
  for (double h : horizons) max_steps = std::max(max_steps, horizon_steps(h, trace.dt));
  require(trace.size() > first + max_steps, ErrorCode::InvalidArgument, "trace too short for the requested horizons");
  HorizonErrors pred(max_steps), none(max_steps);
  for (std::size_t now = first; now + max_steps < trace.size(); now += stride) {
    const auto truth = future_of(trace, now, max_steps);
    pred.add(predictor.forecast(trace, now, max_steps), truth);
    none.add(hold_forecast(trace[now], max_steps, trace.dt), truth);
  }
  PredictionEval e;
  double acc = 0.0;
  for (double h : horizons) {
    const std::size_t k = horizon_steps(h, trace.dt) - 1;
    e.horizons.push_back(h);
    e.mae.push_back(pred.mae(k));
    e.rmse.push_back(pred.rmse(k));
    e.none_mae.push_back(none.mae(k));
    e.roll_mae.push_back(pred.roll_mae(k));
    e.none_roll_mae.push_back(none.roll_mae(k));
    e.compensation.push_back(compensation_rate(pred.mae(k), none.mae(k)));
    acc += e.compensation.back();
  }
  e.mean_compensation = acc / static_cast<double>(horizons.size());
  return e;
}

/// Aggregate of per-trace evaluations weighted by sample count is not needed
/// here; traces are merged by summing errors through HorizonErrors instead.
struct PooledEval {
  HorizonErrors pred, none;
};

inline void accumulate_eval(PooledEval& pool, const ViewportPredictor& predictor, const HeadTrace& trace,
                            std::size_t first, std::size_t stride) {
  const std::size_t steps = pool.pred.steps();
  for (std::size_t now = first; now + steps < trace.size(); now += stride) {
    const auto truth = future_of(trace, now, steps);
    pool.pred.add(predictor.forecast(trace, now, steps), truth);
    pool.none.add(hold_forecast(trace[now], steps, trace.dt), truth);
  }
}

/// One recording prepared for dataset construction.
struct Recording {
  HeadTrace trace;
  SceneCues scene;
};

/// Windows of a recording turned into training samples, every `stride`
/// samples.
inline std::vector<nn::Sample> make_samples(const Recording& rec, const PredictorLayout& layout, std::size_t stride) {
  require(stride > 0, ErrorCode::InvalidArgument, "stride must be positive");
  std::vector<nn::Sample> out;
  const auto& tr = rec.trace;
  const std::size_t first = std::max(layout.history_steps, layout.cues.empty() ? 0 : layout.cue_steps);
  for (std::size_t now = first; now + layout.horizon_steps < tr.size(); now += stride) {
    const auto hist = std::span(tr.samples).subspan(now - layout.history_steps, layout.history_steps + 1);
    const DiffWindow w = to_diff_window(hist);
    const auto& cur = tr[now];
    const auto cues = rec.scene.collect(layout.cues, cur.t, cur, layout.cue_steps, tr.dt);
    nn::Sample s;
    s.inputs = model_inputs(w, cues, layout);
    s.target = future_target(std::span(tr.samples).subspan(now + 1, layout.horizon_steps), cur, w, layout);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace orbit
