#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "orbit/common.hpp"

namespace orbit {

/// Head orientation at time t: pan (theta), tilt (phi), roll (psi), degrees.
struct HeadState {
  double t = 0.0;
  double pan = 0.0;
  double tilt = 0.0;
  double roll = 0.0;

  /// Pan and roll wrapped to [-180, 180), tilt clamped to [-90, 90].
  HeadState normalized() const { return {t, wrap180(pan), std::clamp(tilt, -90.0, 90.0), wrap180(roll)}; }

  friend bool operator==(const HeadState&, const HeadState&) = default;
};

inline constexpr double kDefaultStep = 0.0125;     // 12.5 ms
inline constexpr double kHistoryWindow = 0.250;    // W
inline constexpr double kCueWindow = 0.500;        // W_c

/// Number of samples spanning `seconds` at period `dt`, endpoints included.
inline std::size_t samples_for(double seconds, double dt) {
  return static_cast<std::size_t>(std::lround(seconds / dt)) + 1;
}

/// Uniformly sampled head-motion recording.
struct HeadTrace {
  double dt = kDefaultStep;
  std::vector<HeadState> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  const HeadState& operator[](std::size_t i) const { return samples[i]; }
  double duration() const { return samples.empty() ? 0.0 : samples.back().t - samples.front().t; }

  void validate() const {
    require(dt > 0.0, ErrorCode::InvalidArgument, "trace sampling period must be positive");
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& s = samples[i];
      require(std::isfinite(s.t) && std::isfinite(s.pan) && std::isfinite(s.tilt) && std::isfinite(s.roll),
              ErrorCode::NonFinite, "trace sample " + std::to_string(i) + " is not finite");
      require(s.tilt >= -90.0 && s.tilt <= 90.0, ErrorCode::DataError,
              "trace sample " + std::to_string(i) + " tilt outside [-90, 90]");
      if (i == 0) continue;
      const double step = s.t - samples[i - 1].t;
      require(step > 0.0, ErrorCode::DataError, "trace timestamps not strictly increasing at sample " + std::to_string(i));
      require(std::abs(step - dt) <= 0.01 * dt, ErrorCode::DataError,
              "trace sampling period deviates by more than 1% at sample " + std::to_string(i));
    }
  }

  /// Index of the last sample with timestamp <= t (clamped to the trace).
  std::size_t index_at(double t) const {
    require(!samples.empty(), ErrorCode::InvalidArgument, "empty trace");
    const double k = std::floor((t - samples.front().t) / dt + 1e-9);
    if (k <= 0.0) return 0;
    return std::min(samples.size() - 1, static_cast<std::size_t>(k));
  }

  /// Linear interpolation with shortest-arc pan/roll handling.
  HeadState at(double t) const {
    require(!samples.empty(), ErrorCode::InvalidArgument, "empty trace");
    if (t <= samples.front().t) return samples.front();
    if (t >= samples.back().t) return samples.back();
    const std::size_t i = index_at(t);
    if (i + 1 >= samples.size()) return samples.back();
    const auto& a = samples[i];
    const auto& b = samples[i + 1];
    const double f = (t - a.t) / (b.t - a.t);
    return HeadState{t, a.pan + f * shortest_arc(a.pan, b.pan), a.tilt + f * (b.tilt - a.tilt),
                     a.roll + f * shortest_arc(a.roll, b.roll)}
        .normalized();
  }
};

inline constexpr std::size_t kAxes = 3;  // pan, tilt, roll
using AxisVec = std::array<double, kAxes>;

inline AxisVec axis_delta(const HeadState& from, const HeadState& to) {
  return {shortest_arc(from.pan, to.pan), to.tilt - from.tilt, shortest_arc(from.roll, to.roll)};
}

/// Normalized first differences of a history window and their per-axis scale.
struct DiffWindow {
  std::vector<AxisVec> diffs;  // in [-1, 1]
  AxisVec norm_scale{};        // max |difference| per axis, degrees per step
};

/// First differences with shortest-arc wrapping, divided per axis by the
/// largest absolute difference in the window. A motionless axis keeps
/// zeros and a zero scale.
inline DiffWindow to_diff_window(std::span<const HeadState> window, std::size_t min_samples = 2) {
  require(window.size() >= std::max<std::size_t>(2, min_samples), ErrorCode::InvalidArgument,
          "window too short: " + std::to_string(window.size()) + " samples, need " +
              std::to_string(std::max<std::size_t>(2, min_samples)));
  DiffWindow w;
  w.diffs.resize(window.size() - 1);
  for (std::size_t i = 1; i < window.size(); ++i) w.diffs[i - 1] = axis_delta(window[i - 1], window[i]);
  for (std::size_t a = 0; a < kAxes; ++a) {
    double m = 0.0;
    for (const auto& d : w.diffs) m = std::max(m, std::abs(d[a]));
    w.norm_scale[a] = m;
    for (auto& d : w.diffs) d[a] = m > 0.0 ? d[a] / m : 0.0;
  }
  return w;
}

/// Inverse of the normalization: cumulative sum of denormalized differences
/// added to the current state.
inline std::vector<HeadState> remap(std::span<const AxisVec> forecast, const HeadState& current,
                                    const AxisVec& norm_scale, double dt) {
  std::vector<HeadState> out;
  out.reserve(forecast.size());
  double pan = current.pan, tilt = current.tilt, roll = current.roll;
  for (std::size_t k = 0; k < forecast.size(); ++k) {
    pan += forecast[k][0] * norm_scale[0];
    tilt += forecast[k][1] * norm_scale[1];
    roll += forecast[k][2] * norm_scale[2];
    out.push_back(HeadState{current.t + static_cast<double>(k + 1) * dt, pan, tilt, roll}.normalized());
  }
  return out;
}

/// Normalized scalar field: a saliency map S(x, y) or motion map M(x, y).
/// Pixel (x, y) samples pan -180 + 360 x / width and tilt 90 - 180 y / height,
/// so the pixel (width/2, height/2) looks at (0, 0).
struct GrayMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> values;

  GrayMap() = default;
  GrayMap(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), values(w * h, fill) {
    require(w > 0 && h > 0, ErrorCode::InvalidArgument, "map dimensions must be positive");
  }

  double at(std::size_t x, std::size_t y) const { return values[y * width + x]; }
  double& at(std::size_t x, std::size_t y) { return values[y * width + x]; }

  double pan_of(double x) const { return -180.0 + x * 360.0 / static_cast<double>(width); }
  double tilt_of(double y) const { return 90.0 - y * 180.0 / static_cast<double>(height); }
};

struct MapPoint {
  double x, y;
};

/// Location of the maximum; ties resolve to the lowest row-major index.
inline std::optional<MapPoint> map_argmax(const GrayMap& m) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < m.values.size(); ++i)
    if (m.values[i] > m.values[best]) best = i;
  if (m.values.empty() || m.values[best] <= 0.0) return std::nullopt;
  return MapPoint{static_cast<double>(best % m.width), static_cast<double>(best / m.width)};
}

/// Raw image moment m_pq = sum x^p y^q S(x, y).
inline double image_moment(const GrayMap& m, int p, int q) {
  double acc = 0.0;
  for (std::size_t y = 0; y < m.height; ++y)
    for (std::size_t x = 0; x < m.width; ++x)
      acc += std::pow(static_cast<double>(x), p) * std::pow(static_cast<double>(y), q) * m.at(x, y);
  return acc;
}

/// Centroid (m10 / m00, m01 / m00); empty when m00 = 0.
inline std::optional<MapPoint> map_centroid(const GrayMap& m) {
  double m00 = 0.0, m10 = 0.0, m01 = 0.0;
  for (std::size_t y = 0; y < m.height; ++y)
    for (std::size_t x = 0; x < m.width; ++x) {
      const double v = m.at(x, y);
      m00 += v;
      m10 += static_cast<double>(x) * v;
      m01 += static_cast<double>(y) * v;
    }
  if (!(m00 > 0.0)) return std::nullopt;
  return MapPoint{m10 / m00, m01 / m00};
}

enum class CueSource { SaliencyMax, SaliencyCentroid, MotionMax };

inline const char* to_string(CueSource s) {
  switch (s) {
    case CueSource::SaliencyMax: return "saliency-max";
    case CueSource::SaliencyCentroid: return "saliency-centroid";
    default: return "motion-max";
  }
}

/// Pan/tilt target (degrees) per map; nullopt for maps without a target.
struct CueTarget {
  std::optional<std::array<double, 2>> angles;
};

/// Scene cue relative to the current head orientation. `offsets` holds the
/// relative (pan, tilt) of each map's target over 180 degrees; `trajectory`
/// holds its shortest-arc first differences on the same scale.
struct SemanticCue {
  CueSource source = CueSource::SaliencyMax;
  std::vector<std::array<double, 2>> offsets;
  std::vector<std::array<double, 2>> trajectory;
  std::vector<bool> flagged;  // map had no usable target
};

inline CueTarget map_target(const GrayMap& m, CueSource source) {
  const auto p = source == CueSource::SaliencyCentroid ? map_centroid(m) : map_argmax(m);
  if (!p) return {};
  return {std::array<double, 2>{wrap180(m.pan_of(p->x)), m.tilt_of(p->y)}};
}

/// Builds a cue from per-map targets. `frame_heads`, when given, holds the
/// head state each map was rendered at (head-centered maps); targets are
/// then offsets from that head state.
inline SemanticCue cue_from_targets(CueSource source, std::span<const CueTarget> targets, const HeadState& current,
                                    std::span<const HeadState> frame_heads = {}) {
  require(!targets.empty(), ErrorCode::InvalidArgument, "cue needs at least one map");
  require(frame_heads.empty() || frame_heads.size() == targets.size(), ErrorCode::ShapeMismatch,
          "one head state per head-centered map required");
  SemanticCue cue;
  cue.source = source;
  std::vector<std::array<double, 2>> rel;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const auto& t = targets[k].angles;
    cue.flagged.push_back(!t.has_value());
    if (!t) {
      rel.push_back({0.0, 0.0});
      continue;
    }
    double pan = (*t)[0], tilt = (*t)[1];
    if (!frame_heads.empty()) {
      pan += frame_heads[k].pan;
      tilt += frame_heads[k].tilt;
    }
    rel.push_back({shortest_arc(current.pan, pan), std::clamp(tilt, -90.0, 90.0) - current.tilt});
  }
  for (const auto& r : rel) cue.offsets.push_back({r[0] / 180.0, r[1] / 180.0});
  for (std::size_t k = 1; k < rel.size(); ++k)
    cue.trajectory.push_back({shortest_arc(rel[k - 1][0], rel[k][0]) / 180.0, (rel[k][1] - rel[k - 1][1]) / 180.0});
  return cue;
}

inline SemanticCue maps_cue(CueSource source, std::span<const GrayMap> maps, const HeadState& current) {
  require(!maps.empty(), ErrorCode::InvalidArgument, "cue needs at least one map");
  std::vector<CueTarget> targets;
  for (const auto& m : maps) targets.push_back(map_target(m, source));
  return cue_from_targets(source, targets, current);
}

/// Argmax of each saliency map in the window, relative to the head.
inline SemanticCue saliency_max_cue(std::span<const GrayMap> maps, const HeadState& current) {
  return maps_cue(CueSource::SaliencyMax, maps, current);
}

/// Image-moment centroid of each saliency map, relative to the head.
inline SemanticCue saliency_centroid_cue(std::span<const GrayMap> maps, const HeadState& current) {
  return maps_cue(CueSource::SaliencyCentroid, maps, current);
}

/// Argmax of head-centered motion maps, re-expressed relative to `current`.
inline SemanticCue motion_max_cue(std::span<const GrayMap> maps, std::span<const HeadState> frame_heads,
                                  const HeadState& current) {
  std::vector<CueTarget> targets;
  for (const auto& m : maps) targets.push_back(map_target(m, CueSource::MotionMax));
  return cue_from_targets(CueSource::MotionMax, targets, current, frame_heads);
}

/// Constant extrapolation: every step repeats the current state.
inline std::vector<HeadState> hold_forecast(const HeadState& current, std::size_t steps, double dt) {
  std::vector<HeadState> out;
  for (std::size_t k = 0; k < steps; ++k) {
    HeadState s = current;
    s.t = current.t + static_cast<double>(k + 1) * dt;
    out.push_back(s);
  }
  return out;
}

/// Per-axis least-squares line through the (unwrapped) window, evaluated
/// at the next `steps` sampling instants.
inline std::vector<HeadState> linreg_forecast(std::span<const HeadState> window, std::size_t steps, double dt) {
  require(window.size() >= 2, ErrorCode::InvalidArgument, "linear regression needs at least two samples");
  const std::size_t n = window.size();
  std::array<std::vector<double>, kAxes> y;
  for (auto& v : y) v.resize(n);
  y[0][0] = window[0].pan;
  y[1][0] = window[0].tilt;
  y[2][0] = window[0].roll;
  for (std::size_t i = 1; i < n; ++i) {
    const auto d = axis_delta(window[i - 1], window[i]);
    for (std::size_t a = 0; a < kAxes; ++a) y[a][i] = y[a][i - 1] + d[a];
  }
  const double t0 = window.back().t;
  double st = 0.0, stt = 0.0;
  for (const auto& s : window) {
    st += s.t - t0;
    stt += (s.t - t0) * (s.t - t0);
  }
  const double nn = static_cast<double>(n);
  const double denom = nn * stt - st * st;
  std::array<double, kAxes> slope{}, icpt{};
  for (std::size_t a = 0; a < kAxes; ++a) {
    double sy = 0.0, sty = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sy += y[a][i];
      sty += (window[i].t - t0) * y[a][i];
    }
    slope[a] = (nn * sty - st * sy) / denom;
    icpt[a] = (sy - slope[a] * st) / nn;
  }
  std::vector<HeadState> out;
  for (std::size_t k = 1; k <= steps; ++k) {
    const double h = static_cast<double>(k) * dt;
    out.push_back(HeadState{t0 + h, icpt[0] + slope[0] * h, icpt[1] + slope[1] * h, icpt[2] + slope[2] * h}
                      .normalized());
  }
  return out;
}

/// Angular error between two head states: mean absolute shortest-arc error
/// over pan and tilt.
inline double angular_error(const HeadState& a, const HeadState& b) {
  return 0.5 * (std::abs(shortest_arc(a.pan, b.pan)) + std::abs(a.tilt - b.tilt));
}

inline double roll_error(const HeadState& a, const HeadState& b) { return std::abs(shortest_arc(a.roll, b.roll)); }

/// Fraction of the no-prediction error removed: 1 - e_pred / e_none.
inline double compensation_rate(double predicted_error, double baseline_error) {
  require(predicted_error >= 0.0 && baseline_error >= 0.0, ErrorCode::InvalidArgument, "errors must be non-negative");
  if (baseline_error == 0.0) {
    require(predicted_error == 0.0, ErrorCode::Degenerate, "degenerate trace: baseline error is zero");
    return 1.0;
  }
  return std::min(1.0, 1.0 - predicted_error / baseline_error);
}

struct CompensationReport {
  std::vector<double> per_horizon;
  double mean = 0.0;
};

/// Per-step compensation rate of one forecast against the truth and the
/// no-prediction baseline, and its mean over steps.
inline CompensationReport compensation_rate(std::span<const HeadState> predicted, std::span<const HeadState> truth,
                                            std::span<const HeadState> baseline) {
  require(predicted.size() == truth.size() && baseline.size() == truth.size() && !truth.empty(),
          ErrorCode::ShapeMismatch, "forecast horizons are not aligned");
  CompensationReport r;
  for (std::size_t k = 0; k < truth.size(); ++k)
    r.per_horizon.push_back(compensation_rate(angular_error(predicted[k], truth[k]), angular_error(baseline[k], truth[k])));
  double acc = 0.0;
  for (double v : r.per_horizon) acc += v;
  r.mean = acc / static_cast<double>(r.per_horizon.size());
  return r;
}

/// Running per-horizon error statistics.
class HorizonErrors {
 public:
  explicit HorizonErrors(std::size_t steps = 0) : abs_(steps, 0.0), sq_(steps, 0.0), roll_(steps, 0.0) {}

  void add(std::span<const HeadState> forecast, std::span<const HeadState> truth) {
    require(forecast.size() >= abs_.size() && truth.size() >= abs_.size(), ErrorCode::ShapeMismatch,
            "forecast shorter than the evaluated horizon");
    for (std::size_t k = 0; k < abs_.size(); ++k) {
      const double e = angular_error(forecast[k], truth[k]);
      abs_[k] += e;
      sq_[k] += e * e;
      roll_[k] += roll_error(forecast[k], truth[k]);
    }
    ++count_;
  }

  std::size_t steps() const { return abs_.size(); }
  std::size_t count() const { return count_; }
  double mae(std::size_t k) const { return count_ ? abs_[k] / static_cast<double>(count_) : 0.0; }
  double rmse(std::size_t k) const { return count_ ? std::sqrt(sq_[k] / static_cast<double>(count_)) : 0.0; }
  double roll_mae(std::size_t k) const { return count_ ? roll_[k] / static_cast<double>(count_) : 0.0; }

 private:
  std::vector<double> abs_, sq_, roll_;
  std::size_t count_ = 0;
};

}  // namespace orbit
