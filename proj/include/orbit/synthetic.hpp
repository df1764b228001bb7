#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "orbit/common.hpp"
#include "orbit/geometry.hpp"
#include "orbit/prediction.hpp"
#include "orbit/predictor.hpp"
#include "orbit/quality.hpp"
#include "orbit/simulation.hpp"

namespace orbit {

/// Seeded generators for desk-scale experiments: head traces, salient
/// objects that a viewer follows, saliency maps, frames and ladders.
namespace synth {

enum class Family { Sinusoid, ConstantVelocity, Saccade };

inline const char* to_string(Family f) {
  switch (f) {
    case Family::Sinusoid: return "sinusoid";
    case Family::ConstantVelocity: return "constant-velocity";
    default: return "saccade";
  }
}

inline Family parse_family(const std::string& s) {
  for (Family f : {Family::Sinusoid, Family::ConstantVelocity, Family::Saccade})
    if (s == to_string(f)) return f;
  fail(ErrorCode::InvalidArgument, "unknown trace family '" + s + "'");
}

/// n = round(duration / dt) samples at t = k * dt.
inline std::size_t sample_count(double duration, double dt) {
  require(duration > 0.0 && dt > 0.0, ErrorCode::InvalidArgument, "duration and period must be positive");
  return static_cast<std::size_t>(std::lround(duration / dt));
}

inline HeadTrace sinusoid_trace(double amplitude, double period, double duration, double dt = kDefaultStep,
                                double phase = 0.0, double tilt_amplitude = 0.0) {
  require(period > 0.0, ErrorCode::InvalidArgument, "period must be positive");
  HeadTrace tr{dt, {}};
  const std::size_t n = sample_count(duration, dt);
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * dt;
    const double a = 2.0 * kPi * t / period + phase;
    tr.samples.push_back(HeadState{t, amplitude * std::sin(a), tilt_amplitude * std::sin(0.5 * a), 0.0}.normalized());
  }
  return tr;
}

inline HeadTrace constant_velocity_trace(double pan_speed, double tilt_speed, double duration,
                                         double dt = kDefaultStep, double pan0 = 0.0) {
  HeadTrace tr{dt, {}};
  const std::size_t n = sample_count(duration, dt);
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * dt;
    tr.samples.push_back(HeadState{t, pan0 + pan_speed * t, std::clamp(tilt_speed * t, -60.0, 60.0), 0.0}.normalized());
  }
  return tr;
}

/// Angular path of a salient object, sampled on the trace grid.
struct ObjectPath {
  double dt = kDefaultStep;
  std::vector<std::array<double, 2>> pos;  // pan (unwrapped), tilt

  std::array<double, 2> at(double t) const {
    if (pos.empty()) return {0.0, 0.0};
    const double k = std::clamp(t / dt, 0.0, static_cast<double>(pos.size() - 1));
    const std::size_t i = static_cast<std::size_t>(std::floor(k));
    const std::size_t j = std::min(pos.size() - 1, i + 1);
    const double f = k - static_cast<double>(i);
    return {pos[i][0] + f * (pos[j][0] - pos[i][0]), pos[i][1] + f * (pos[j][1] - pos[i][1])};
  }
};

inline double smoothstep(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3.0 - 2.0 * x);
}

/// Ranges the per-family path parameters are drawn from.
struct PathParams {
  double saccade_min = 0.0, saccade_max = 70.0;  // pan jump magnitude, degrees
  double dwell_min = 0.5, dwell_max = 2.0;       // seconds between jumps
};

/// Random object motion of one family. Parameters are drawn from `rng`.
inline ObjectPath object_path(Family family, double duration, double dt, Rng& rng, const PathParams& pp = {}) {
  ObjectPath p{dt, {}};
  const std::size_t n = sample_count(duration, dt);
  const double pan0 = rng.uniform(-180.0, 180.0);
  switch (family) {
    case Family::Sinusoid: {
      const double amp = rng.uniform(20.0, 60.0), period = rng.uniform(2.0, 6.0), ph = rng.uniform(0.0, 2.0 * kPi);
      const double tamp = rng.uniform(5.0, 20.0), tper = rng.uniform(3.0, 8.0), tph = rng.uniform(0.0, 2.0 * kPi);
      for (std::size_t k = 0; k < n; ++k) {
        const double t = static_cast<double>(k) * dt;
        p.pos.push_back({pan0 + amp * std::sin(2.0 * kPi * t / period + ph),
                         tamp * std::sin(2.0 * kPi * t / tper + tph)});
      }
      break;
    }
    case Family::ConstantVelocity: {
      // piecewise constant velocity, direction reversals every few seconds
      double pan = pan0, tilt = rng.uniform(-20.0, 20.0);
      double v = rng.uniform(10.0, 40.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
      double vt = rng.uniform(-5.0, 5.0);
      double next = rng.uniform(2.0, 5.0);
      for (std::size_t k = 0; k < n; ++k) {
        const double t = static_cast<double>(k) * dt;
        if (t >= next) {
          v = rng.uniform(10.0, 40.0) * (v > 0.0 ? -1.0 : 1.0);
          vt = rng.uniform(-5.0, 5.0);
          next = t + rng.uniform(2.0, 5.0);
        }
        pan += v * dt;
        tilt = std::clamp(tilt + vt * dt, -45.0, 45.0);
        p.pos.push_back({pan, tilt});
      }
      break;
    }
    case Family::Saccade: {
      double from_pan = pan0, from_tilt = rng.uniform(-20.0, 20.0);
      double to_pan = from_pan, to_tilt = from_tilt;
      double move_start = 0.0, move_len = 0.25, next = rng.uniform(pp.dwell_min, pp.dwell_max);
      for (std::size_t k = 0; k < n; ++k) {
        const double t = static_cast<double>(k) * dt;
        if (t >= next) {
          from_pan = to_pan;
          from_tilt = to_tilt;
          const double jump = rng.uniform(pp.saccade_min, pp.saccade_max);
          to_pan = from_pan + (rng.uniform() < 0.5 ? -jump : jump);
          to_tilt = std::clamp(from_tilt + rng.uniform(-25.0, 25.0), -45.0, 45.0);
          move_start = t;
          move_len = rng.uniform(0.2, 0.4);
          next = t + move_len + rng.uniform(pp.dwell_min, pp.dwell_max);
        }
        const double s = smoothstep((t - move_start) / move_len);
        p.pos.push_back({from_pan + s * (to_pan - from_pan), from_tilt + s * (to_tilt - from_tilt)});
      }
      break;
    }
  }
  return p;
}

struct ViewerModel {
  double lag = 0.35;         // seconds the head trails the object
  double jitter = 1.0;       // degrees of slow wobble around the object
  double roll_amplitude = 3.0;
};

/// Head trace of a viewer who keeps a salient object centered with a
/// reaction lag.
inline HeadTrace follow_trace(const ObjectPath& obj, const ViewerModel& viewer, Rng& rng) {
  HeadTrace tr{obj.dt, {}};
  const double jp = rng.uniform(0.0, 2.0 * kPi), jt = rng.uniform(0.0, 2.0 * kPi), jr = rng.uniform(0.0, 2.0 * kPi);
  for (std::size_t k = 0; k < obj.pos.size(); ++k) {
    const double t = static_cast<double>(k) * obj.dt;
    const auto o = obj.at(t - viewer.lag);
    tr.samples.push_back(HeadState{t, o[0] + viewer.jitter * std::sin(2.0 * kPi * 0.37 * t + jp),
                                   std::clamp(o[1] + viewer.jitter * std::sin(2.0 * kPi * 0.29 * t + jt), -90.0, 90.0),
                                   viewer.roll_amplitude * std::sin(2.0 * kPi * 0.13 * t + jr)}
                             .normalized());
  }
  return tr;
}

/// Map of Gaussian blobs (angular sigma in degrees, pan wraps).
struct Blob {
  double pan = 0.0, tilt = 0.0, sigma = 8.0, peak = 1.0;
};

inline GrayMap blob_map(std::size_t width, std::size_t height, std::span<const Blob> blobs) {
  GrayMap m(width, height);
  for (std::size_t y = 0; y < height; ++y) {
    const double tilt = m.tilt_of(static_cast<double>(y));
    for (std::size_t x = 0; x < width; ++x) {
      const double pan = m.pan_of(static_cast<double>(x));
      double v = 0.0;
      for (const auto& b : blobs) {
        const double dp = shortest_arc(b.pan, pan), dtl = tilt - b.tilt;
        v = std::max(v, b.peak * std::exp(-0.5 * (dp * dp + dtl * dtl) / (b.sigma * b.sigma)));
      }
      m.values[y * width + x] = v;
    }
  }
  return m;
}

/// Saliency maps at `fps` for an object path, with one weaker distractor.
struct MapSequence {
  std::vector<double> times;
  std::vector<GrayMap> maps;
};

inline MapSequence saliency_maps(const ObjectPath& obj, double duration, double fps, std::size_t width,
                                 std::size_t height, Rng& rng) {
  require(fps > 0.0, ErrorCode::InvalidArgument, "map rate must be positive");
  MapSequence s;
  const Blob distractor{rng.uniform(-180.0, 180.0), rng.uniform(-40.0, 40.0), 12.0, 0.45};
  const std::size_t n = static_cast<std::size_t>(std::floor(duration * fps + 1e-9));
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) / fps;
    const auto o = obj.at(t);
    const Blob blobs[] = {{wrap180(o[0]), o[1], 8.0, 1.0}, distractor};
    s.times.push_back(t);
    s.maps.push_back(blob_map(width, height, blobs));
  }
  return s;
}

/// Textured ERP frame with a bright block at (bx, by); `shift` rotates the
/// whole image horizontally by whole pixels.
inline LumaFrame textured_frame(std::size_t width, std::size_t height, std::uint64_t seed, long shift = 0) {
  Rng rng(seed);
  // low-frequency texture: sum of a few random plane waves
  struct Wave {
    double fx, fy, ph, amp;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < 6; ++i)
    waves.push_back({static_cast<double>(1 + rng.index(6)), rng.uniform(0.5, 4.0), rng.uniform(0.0, 2.0 * kPi),
                     rng.uniform(10.0, 30.0)});
  LumaFrame f(width, height);
  const long W = static_cast<long>(width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      long sx = (static_cast<long>(x) - shift) % W;
      if (sx < 0) sx += W;
      double v = 128.0;
      for (const auto& w : waves)
        v += w.amp * std::sin(2.0 * kPi * (w.fx * static_cast<double>(sx) / static_cast<double>(width) +
                                           w.fy * static_cast<double>(y) / static_cast<double>(height)) +
                              w.ph);
      f.samples[y * width + x] = static_cast<std::uint16_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  return f;
}

/// Draws a filled square of side `size` with top-left (x0, y0), wrapping in x.
inline void draw_block(LumaFrame& f, long x0, long y0, std::size_t size, std::uint16_t value) {
  const long W = static_cast<long>(f.width);
  for (long y = y0; y < y0 + static_cast<long>(size); ++y) {
    if (y < 0 || y >= static_cast<long>(f.height)) continue;
    for (long x = x0; x < x0 + static_cast<long>(size); ++x) {
      long xx = x % W;
      if (xx < 0) xx += W;
      f.samples[static_cast<std::size_t>(y) * f.width + static_cast<std::size_t>(xx)] = value;
    }
  }
}

/// Reconstruction of `original` with additive noise of the given MSE
/// inside `rect` (deterministic in `seed`).
inline void degrade(LumaFrame& out, const LumaFrame& original, const PixelRect& r, double mse, std::uint64_t seed) {
  Rng rng(seed);
  const double sd = std::sqrt(std::max(0.0, mse));
  for (std::size_t y = r.y0; y < r.y1; ++y)
    for (std::size_t x = r.x0; x < r.x1; ++x) {
      const double v = static_cast<double>(original.at(x, y)) + sd * rng.normal();
      out.samples[y * out.width + x] =
          static_cast<std::uint16_t>(std::clamp(std::lround(v), 0L, static_cast<long>(original.max_value)));
    }
}

struct SceneParams {
  double duration = 20.0;
  double dt = kDefaultStep;
  double map_fps = 20.0;
  std::size_t map_width = 128, map_height = 64;
  ViewerModel viewer;
  PathParams path;
};

/// A viewer following a moving object, with the object's saliency maps.
struct Scene {
  ObjectPath object;
  HeadTrace trace;
  MapSequence saliency;
};

inline Scene make_scene(Family family, const SceneParams& p, std::uint64_t seed) {
  Rng rng(seed);
  Scene s;
  s.object = object_path(family, p.duration, p.dt, rng, p.path);
  s.trace = follow_trace(s.object, p.viewer, rng);
  s.saliency = saliency_maps(s.object, p.duration, p.map_fps, p.map_width, p.map_height, rng);
  return s;
}

inline Recording to_recording(const Scene& s) {
  Recording r;
  r.trace = s.trace;
  r.scene.saliency = std::make_shared<CueTimeline>(s.saliency.times, s.saliency.maps);
  return r;
}

/// Recordings cycling through the three families.
inline std::vector<Recording> recordings(std::size_t count, const SceneParams& p, std::uint64_t seed) {
  std::vector<Recording> out;
  const Family fams[] = {Family::Sinusoid, Family::ConstantVelocity, Family::Saccade};
  for (std::size_t i = 0; i < count; ++i) out.push_back(to_recording(make_scene(fams[i % 3], p, seed * 7919 + i)));
  return out;
}

struct LadderParams {
  std::vector<int> qps{22, 27, 32, 37, 42};
  double top_rate = 1.2e6;        // bits/s of a tile at the lowest QP and unit complexity
  double top_distortion = 2.0;    // MSE at the lowest QP
  double complexity_lo = 0.6, complexity_hi = 1.4;
};

/// Per-tile ladders: rate halves and distortion doubles per QP step,
/// scaled by a per-tile complexity factor.
inline std::vector<std::vector<Representation>> ladder(std::size_t tiles, const LadderParams& p, Rng& rng) {
  require(!p.qps.empty(), ErrorCode::InvalidArgument, "ladder needs at least one QP");
  std::vector<std::vector<Representation>> out(tiles);
  for (auto& l : out) {
    const double cx = rng.uniform(p.complexity_lo, p.complexity_hi);
    for (std::size_t b = 0; b < p.qps.size(); ++b) {
      Representation r;
      r.qp = p.qps[b];
      r.rate = std::round(p.top_rate * cx / std::pow(2.0, static_cast<double>(b)));
      r.distortion = p.top_distortion * cx * std::pow(2.0, static_cast<double>(b));
      l.push_back(r);
    }
    std::sort(l.begin(), l.end(), [](const auto& a, const auto& b) { return a.rate < b.rate; });
  }
  return out;
}

struct ManifestParams {
  std::size_t segments = 60;
  std::size_t rows = 4, cols = 8;
  std::size_t width = 256, height = 128;
  double segment_duration = 1.0;
  double segment_jitter = 0.1;  // relative per-segment variation of tile complexity
  bool frames = false;
  LadderParams ladder;
};

/// Manifest with a fixed per-tile complexity and mild per-segment
/// variation; optionally with original and per-QP reconstructed frames
/// whose tile MSE matches the ladder distortion in expectation.
inline Manifest make_manifest(const ManifestParams& p, std::uint64_t seed) {
  Rng rng(seed);
  Manifest m;
  m.video_id = "synthetic-" + std::to_string(seed);
  m.grid = TileGrid(p.rows, p.cols, ErpPlane(p.width, p.height));
  m.segment_duration = p.segment_duration;
  const auto base = ladder(m.grid.size(), p.ladder, rng);
  for (std::size_t k = 0; k < p.segments; ++k) {
    std::vector<std::vector<Representation>> seg = base;
    for (auto& l : seg) {
      const double j = 1.0 + rng.uniform(-p.segment_jitter, p.segment_jitter);
      for (auto& r : l) {
        r.rate = std::round(r.rate * j);
        r.distortion *= j;
      }
    }
    m.segments.push_back(std::move(seg));
  }
  if (p.frames) {
    for (std::size_t k = 0; k < p.segments; ++k) {
      SegmentFrames f;
      f.original = textured_frame(p.width, p.height, seed * 1315423911ULL + k);
      for (std::size_t b = 0; b < p.ladder.qps.size(); ++b) {
        LumaFrame rec = f.original;
        for (std::size_t n = 0; n < m.grid.size(); ++n)
          degrade(rec, f.original, m.grid.pixels(m.grid.unflat(n)), m.segments[k][n][b].distortion,
                  seed ^ (k * 1000003ULL + n * 101ULL + b));
        f.reconstructed.emplace(m.segments[k][0][b].qp, std::move(rec));
      }
      m.frames.push_back(std::move(f));
    }
  }
  return m;
}

}  // namespace synth
}  // namespace orbit
