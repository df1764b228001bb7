#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "orbit/common.hpp"
#include "orbit/geometry.hpp"
#include "orbit/optimizer.hpp"
#include "orbit/parallel.hpp"
#include "orbit/prediction.hpp"
#include "orbit/predictor.hpp"
#include "orbit/quality.hpp"

namespace orbit {

/// Original and per-QP reconstructed luma of one segment, used to score
/// delivered quality pixel by pixel.
struct SegmentFrames {
  LumaFrame original;
  std::map<int, LumaFrame> reconstructed;  // keyed by QP
};

struct Manifest {
  std::string video_id = "video";
  TileGrid grid;
  double segment_duration = 1.0;
  /// segments[k][n] = ladder of tile n in segment k.
  std::vector<std::vector<std::vector<Representation>>> segments;
  std::vector<SegmentFrames> frames;  // empty or one entry per segment

  std::size_t segment_count() const { return segments.size(); }

  void validate() const {
    require(segment_duration > 0.0, ErrorCode::DataError, "segment duration must be positive");
    require(!segments.empty(), ErrorCode::DataError, "manifest has no segments");
    for (std::size_t k = 0; k < segments.size(); ++k) {
      require(segments[k].size() == grid.size(), ErrorCode::DataError,
              "segment " + std::to_string(k) + " has " + std::to_string(segments[k].size()) + " tile ladders, grid has " +
                  std::to_string(grid.size()));
      for (std::size_t n = 0; n < segments[k].size(); ++n) {
        const auto& l = segments[k][n];
        require(!l.empty(), ErrorCode::DataError,
                "segment " + std::to_string(k) + " tile " + std::to_string(n) + " has an empty ladder");
        for (std::size_t b = 1; b < l.size(); ++b)
          require(l[b].rate > l[b - 1].rate && l[b].distortion < l[b - 1].distortion, ErrorCode::DataError,
                  "segment " + std::to_string(k) + " tile " + std::to_string(n) +
                      " ladder is not monotone (rate must increase as distortion decreases)");
      }
    }
    require(frames.empty() || frames.size() == segments.size(), ErrorCode::DataError,
            "frames must be given for every segment or none");
    for (std::size_t k = 0; k < frames.size(); ++k) {
      const auto& f = frames[k];
      require(f.original.width == grid.plane().width && f.original.height == grid.plane().height,
              ErrorCode::DataError, "segment " + std::to_string(k) + " frame does not match the ERP plane");
      for (const auto& rep : segments[k][0])
        require(f.reconstructed.count(rep.qp) > 0, ErrorCode::DataError,
                "segment " + std::to_string(k) + " has no reconstructed frame for qp " + std::to_string(rep.qp));
    }
  }

  /// Ladders of segment k with spherical correction applied.
  DistortionTable table(std::size_t k, std::vector<std::string>* warnings = nullptr) const {
    const auto c = spherical_corrections(grid);
    return make_distortion_table(segments.at(k), c, warnings);
  }
};

/// Piecewise-constant link capacity: capacity bps[i] holds from t[i] until
/// t[i+1]; the last value holds forever. Capacity may be +infinity.
struct ThroughputTrace {
  std::vector<double> t;
  std::vector<double> bps;

  static ThroughputTrace constant(double bps) { return {{0.0}, {bps}}; }

  void validate() const {
    require(!t.empty() && t.size() == bps.size(), ErrorCode::DataError, "throughput trace needs matching t and bps");
    require(t.front() <= 0.0, ErrorCode::DataError, "throughput trace must start at or before t = 0");
    for (std::size_t i = 0; i < t.size(); ++i) {
      require(std::isfinite(t[i]), ErrorCode::NonFinite, "throughput row " + std::to_string(i) + ": t is not finite");
      require(!std::isnan(bps[i]), ErrorCode::NonFinite, "throughput row " + std::to_string(i) + ": bps is NaN");
      require(bps[i] > 0.0, ErrorCode::DataError, "throughput row " + std::to_string(i) + ": capacity must be positive");
      if (i) require(t[i] > t[i - 1], ErrorCode::DataError, "throughput timestamps not strictly increasing at row " + std::to_string(i));
    }
  }

  /// Seconds to transfer `bits` starting at wall time `start`.
  double download_time(double start, double bits) const {
    if (bits <= 0.0) return 0.0;
    std::size_t i = static_cast<std::size_t>(std::upper_bound(t.begin(), t.end(), start) - t.begin());
    i = i == 0 ? 0 : i - 1;
    double now = start, left = bits;
    for (;; ++i) {
      const double cap = bps[i];
      const double end = i + 1 < t.size() ? t[i + 1] : std::numeric_limits<double>::infinity();
      if (std::isinf(cap)) return now - start;
      const double fits = (end - now) * cap;
      if (left <= fits) return now + left / cap - start;
      left -= fits;
      now = end;
    }
  }
};

struct BufferState {
  double level = 0.0;     // seconds of media
  double capacity = 4.0;  // seconds
};

/// Target bitrate: harmonic mean of the last `window` measured throughputs,
/// scaled by a buffer factor (0.5 below 25 % occupancy, 1.0 up to 75 %,
/// 1.1 above). Without history the startup rate is used.
inline double estimate_target_rate(std::span<const double> throughputs, const BufferState& buffer,
                                   double startup_rate, std::size_t window = 3) {
  require(buffer.capacity > 0.0, ErrorCode::InvalidArgument, "buffer capacity must be positive");
  if (throughputs.empty()) return startup_rate;
  const std::size_t k = std::min(window, throughputs.size());
  double inv = 0.0;
  for (std::size_t i = throughputs.size() - k; i < throughputs.size(); ++i) inv += 1.0 / throughputs[i];
  const double hm = static_cast<double>(k) / inv;
  const double occ = buffer.level / buffer.capacity;
  const double f = occ < 0.25 ? 0.5 : (occ <= 0.75 ? 1.0 : 1.1);
  return hm * f;
}

enum class StreamPolicy { Monolithic, TiledNoPred, TiledPred };

inline const char* to_string(StreamPolicy p) {
  switch (p) {
    case StreamPolicy::Monolithic: return "monolithic";
    case StreamPolicy::TiledNoPred: return "tiled";
    default: return "tiled-pred";
  }
}

inline StreamPolicy parse_stream_policy(const std::string& s) {
  if (s == "monolithic") return StreamPolicy::Monolithic;
  if (s == "tiled" || s == "tiled-no-pred") return StreamPolicy::TiledNoPred;
  if (s == "tiled-pred") return StreamPolicy::TiledPred;
  fail(ErrorCode::InvalidArgument, "unknown streaming policy '" + s + "'");
}

struct SessionConfig {
  StreamPolicy policy = StreamPolicy::TiledNoPred;
  const ViewportPredictor* predictor = nullptr;  // tiled-pred only
  double nu = 0.5;
  double buffer_capacity = 4.0;
  double startup_rate = 4e6;
  std::size_t throughput_window = 3;
  std::size_t score_samples = 4;  // viewport samples per segment
  double fov_h = 90.0, fov_v = 90.0;
  QualityOptions quality;
  bool use_frames = true;  // score on frames when the manifest has them
  std::uint64_t seed = 0;  // replay tag; the simulation itself is deterministic
};

struct SegmentRecord {
  std::size_t index = 0;
  double request_time = 0.0;  // wall clock at download start
  double playhead = 0.0;      // media time at download start
  double target_rate = 0.0;
  double rate_used = 0.0;     // bits per second of media
  double bits = 0.0;
  double download_time = 0.0;
  double rebuffer = 0.0;
  double buffer_after = 0.0;
  std::size_t viewport_tiles = 0;
  bool fallback = false;
  Allocation allocation;
  double ws_psnr = 0.0;
};

struct SessionStats {
  std::string policy;
  std::vector<SegmentRecord> segments;
  double mean_ws_psnr = 0.0;
  double total_bits = 0.0;
  double rebuffer_time = 0.0;
  double rebuffer_ratio = 0.0;
  double startup_delay = 0.0;
  std::vector<std::string> log;

  /// Recomputes the aggregates from the per-segment records.
  void aggregate(double segment_duration) {
    total_bits = 0.0;
    rebuffer_time = 0.0;
    double q = 0.0;
    for (const auto& s : segments) {
      total_bits += s.bits;
      rebuffer_time += s.rebuffer;
      q += s.ws_psnr;
    }
    mean_ws_psnr = segments.empty() ? 0.0 : q / static_cast<double>(segments.size());
    const double media = segment_duration * static_cast<double>(segments.size());
    rebuffer_ratio = media > 0.0 ? rebuffer_time / media : 0.0;
  }
};

inline Viewport viewport_of(const HeadState& h, double fov_h, double fov_v) {
  return Viewport{wrap180(h.pan), std::clamp(h.tilt, -90.0, 90.0), fov_h, fov_v};
}

/// Highest common representation index whose total rate fits the budget.
inline Allocation monolithic_allocation(const DistortionTable& table, double budget, bool* fallback = nullptr) {
  std::size_t levels = std::numeric_limits<std::size_t>::max();
  for (const auto& l : table.tiles) levels = std::min(levels, l.size());
  std::size_t best = 0;
  bool fits = false;
  for (std::size_t b = 0; b < levels; ++b) {
    double r = 0.0;
    for (const auto& l : table.tiles) r += l[b].rate;
    if (r <= budget) {
      best = b;
      fits = true;
    }
  }
  if (fallback) *fallback = !fits;
  return Allocation{std::vector<std::size_t>(table.size(), best)};
}

/// Viewport WS-PSNR of what was delivered for segment k, averaged in dB
/// over `score_samples` instants of the true head trace.
inline double score_segment(const Manifest& m, std::size_t k, const DistortionTable& table, const Allocation& alloc,
                            const HeadTrace& truth, const SessionConfig& cfg) {
  const auto& plane = m.grid.plane();
  const bool frames = cfg.use_frames && !m.frames.empty();
  LumaFrame composite;
  if (frames) {
    const auto& f = m.frames[k];
    composite = f.original;
    for (std::size_t n = 0; n < m.grid.size(); ++n) {
      const auto& rec = f.reconstructed.at(table.tiles[n][alloc.choice[n]].qp);
      const PixelRect r = m.grid.pixels(m.grid.unflat(n));
      for (std::size_t y = r.y0; y < r.y1; ++y)
        for (std::size_t x = r.x0; x < r.x1; ++x) composite.at(x, y) = rec.at(x, y);
    }
  }
  std::vector<double> d(m.grid.size());
  for (std::size_t n = 0; n < d.size(); ++n) d[n] = table.tiles[n][alloc.choice[n]].distortion;
  double acc = 0.0;
  const double D = m.segment_duration;
  for (std::size_t j = 0; j < cfg.score_samples; ++j) {
    const double t = (static_cast<double>(k) + (static_cast<double>(j) + 0.5) / static_cast<double>(cfg.score_samples)) * D;
    const auto mask = viewport_mask(plane, viewport_of(truth.at(truth.samples.front().t + t), cfg.fov_h, cfg.fov_v));
    if (frames) {
      acc += ws_psnr(m.frames[k].original, composite, mask, plane, cfg.quality);
    } else {
      acc += psnr_from_mse(wmse_from_tiles(m.grid, d, mask), 255.0, cfg.quality.cap_db);
    }
  }
  return acc / static_cast<double>(cfg.score_samples);
}

/// Simulates one DASH-like session. Segment k covers media time
/// [k D, (k+1) D); the head trace is indexed by media time.
inline SessionStats run_session(const Manifest& m, const ThroughputTrace& link, const HeadTrace& hm,
                                const SessionConfig& cfg) {
  m.validate();
  link.validate();
  hm.validate();
  require(hm.size() >= 2, ErrorCode::DataError, "head trace needs at least two samples");
  require(cfg.score_samples > 0, ErrorCode::InvalidArgument, "score_samples must be positive");
  require(cfg.policy != StreamPolicy::TiledPred || cfg.predictor != nullptr, ErrorCode::InvalidArgument,
          "tiled-pred needs a predictor");
  const double D = m.segment_duration;
  SessionStats st;
  st.policy = to_string(cfg.policy);
  if (cfg.policy == StreamPolicy::TiledPred) st.policy += "(" + cfg.predictor->name() + ")";

  std::size_t K = m.segment_count();
  const double covered = hm.duration() + hm.dt;
  const auto by_trace = static_cast<std::size_t>(std::floor(covered / D + 1e-9));
  if (by_trace < K) {
    st.log.push_back("warning: head trace covers " + std::to_string(by_trace) + " of " + std::to_string(K) +
                     " segments; session truncated");
    K = by_trace;
  }
  require(K > 0, ErrorCode::DataError, "head trace shorter than one segment");

  BufferState buf{0.0, cfg.buffer_capacity};
  require(cfg.buffer_capacity >= D, ErrorCode::InvalidArgument, "buffer must hold at least one segment");
  std::vector<double> measured;
  double clock = 0.0;
  bool playing = false;
  const double t0 = hm.samples.front().t;

  for (std::size_t k = 0; k < K; ++k) {
    SegmentRecord rec;
    rec.index = k;
    // wait for room in the buffer
    if (buf.level + D > buf.capacity) {
      const double wait = buf.level + D - buf.capacity;
      clock += wait;
      buf.level -= wait;
    }
    rec.request_time = clock;
    rec.playhead = playing ? static_cast<double>(k) * D - buf.level : 0.0;
    rec.target_rate = estimate_target_rate(measured, buf, cfg.startup_rate, cfg.throughput_window);

    std::vector<std::string> warn;
    const DistortionTable table = m.table(k, &warn);
    for (auto& w : warn) st.log.push_back("segment " + std::to_string(k) + ": " + w);

    const std::size_t now = hm.index_at(t0 + rec.playhead);
    if (cfg.policy == StreamPolicy::Monolithic) {
      rec.allocation = monolithic_allocation(table, rec.target_rate, &rec.fallback);
      rec.viewport_tiles = m.grid.size();
    } else {
      TileSet tiles;
      if (cfg.policy == StreamPolicy::TiledNoPred) {
        tiles = tiles_in_viewport(m.grid, viewport_of(hm[now], cfg.fov_h, cfg.fov_v));
      } else {
        // forecast up to the end of segment k, keep the states inside it
        const double seg_lo = static_cast<double>(k) * D, seg_hi = seg_lo + D;
        const double media_now = hm[now].t - t0;
        const auto steps = static_cast<std::size_t>(std::ceil((seg_hi - media_now) / hm.dt - 1e-9));
        const auto f = cfg.predictor->forecast(hm, now, std::max<std::size_t>(steps, 1));
        std::vector<Viewport> traj;
        if (media_now >= seg_lo) traj.push_back(viewport_of(hm[now], cfg.fov_h, cfg.fov_v));
        for (const auto& s : f) {
          const double mt = s.t - t0;
          if (mt >= seg_lo - 1e-9 && mt < seg_hi - 1e-9) traj.push_back(viewport_of(s, cfg.fov_h, cfg.fov_v));
        }
        if (traj.empty() && !f.empty()) traj.push_back(viewport_of(f.back(), cfg.fov_h, cfg.fov_v));
        tiles = tiles_in_trajectory(m.grid, traj);
      }
      rec.viewport_tiles = tiles.size();
      const TileWeights w = tile_weights(m.grid, tiles);
      try {
        rec.allocation = solve_heuristic(table, w, cfg.nu, rec.target_rate);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::Infeasible) throw;
        rec.allocation = minimum_rate_allocation(table);
        rec.fallback = true;
      }
    }
    if (rec.fallback)
      st.log.push_back("segment " + std::to_string(k) + ": budget " + std::to_string(rec.target_rate) +
                       " bps below the minimum ladder; minimum representations sent");

    rec.rate_used = detail::allocation_rate(table, rec.allocation.choice);
    rec.bits = rec.rate_used * D;
    rec.download_time = link.download_time(clock, rec.bits);
    if (rec.download_time > 0.0) measured.push_back(rec.bits / rec.download_time);
    else measured.push_back(std::numeric_limits<double>::infinity());

    if (playing) {
      buf.level -= rec.download_time;
      if (buf.level < 0.0) {
        rec.rebuffer = -buf.level;
        buf.level = 0.0;
      }
    } else {
      st.startup_delay = rec.download_time;
    }
    clock += rec.download_time;
    buf.level += D;
    playing = true;
    rec.buffer_after = buf.level;
    rec.ws_psnr = score_segment(m, k, table, rec.allocation, hm, cfg);
    st.segments.push_back(std::move(rec));
  }
  st.aggregate(D);
  return st;
}

struct SweepPolicy {
  StreamPolicy policy = StreamPolicy::TiledNoPred;
  std::string name;
  /// One predictor per fold (tiled-pred only); may be shared.
  std::vector<const ViewportPredictor*> predictors;
};

struct SweepRow {
  std::string policy;
  double rate_mbps = 0.0;
  std::size_t fold = 0;
  SessionStats stats;
};

/// One session per (policy, rate, fold) over constant-capacity links.
/// Rows come back in (policy, rate, fold) order regardless of threading.
inline std::vector<SweepRow> sweep_rates(const Manifest& m, std::span<const double> rates_mbps,
                                         std::span<const HeadTrace> folds, std::span<const SweepPolicy> policies,
                                         const SessionConfig& base) {
  require(!rates_mbps.empty(), ErrorCode::InvalidArgument, "no rates to sweep");
  require(!folds.empty(), ErrorCode::InvalidArgument, "no head traces to sweep");
  for (double r : rates_mbps) require(r > 0.0, ErrorCode::InvalidArgument, "rates must be positive");
  std::vector<SweepRow> rows(policies.size() * rates_mbps.size() * folds.size());
  parallel_for(rows.size(), [&](std::size_t i) {
    const std::size_t f = i % folds.size();
    const std::size_t r = (i / folds.size()) % rates_mbps.size();
    const std::size_t p = i / (folds.size() * rates_mbps.size());
    SessionConfig cfg = base;
    cfg.policy = policies[p].policy;
    if (cfg.policy == StreamPolicy::TiledPred) {
      const auto& preds = policies[p].predictors;
      require(!preds.empty(), ErrorCode::InvalidArgument, "tiled-pred needs a predictor");
      cfg.predictor = preds[std::min(f, preds.size() - 1)];
    }
    SweepRow row{policies[p].name.empty() ? to_string(cfg.policy) : policies[p].name, rates_mbps[r], f, {}};
    row.stats = run_session(m, ThroughputTrace::constant(rates_mbps[r] * 1e6), folds[f], cfg);
    rows[i] = std::move(row);
  });
  return rows;
}

}  // namespace orbit
