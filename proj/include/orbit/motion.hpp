#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "orbit/common.hpp"
#include "orbit/prediction.hpp"
#include "orbit/quality.hpp"

namespace orbit {

/// Dense displacement field: pixel p of the previous frame moves to p + d.
struct FlowField {
  std::size_t width = 0, height = 0;
  std::vector<double> dx, dy;

  double magnitude(std::size_t i) const { return std::hypot(dx[i], dy[i]); }
};

struct FlowOptions {
  std::size_t block = 8;
  int search = 4;       // radius around zero at every level, pixels
  int refine = 1;       // radius around the coarse vector at finer levels
  std::size_t levels = 3;
};

namespace detail {

struct Plane {
  std::size_t w = 0, h = 0;
  std::vector<double> v;
  double at_wrap(long x, long y) const {
    const long W = static_cast<long>(w);
    x %= W;
    if (x < 0) x += W;
    return v[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
  }
};

inline Plane to_plane(const LumaFrame& f) {
  Plane p{f.width, f.height, std::vector<double>(f.samples.begin(), f.samples.end())};
  return p;
}

inline Plane downsample(const Plane& p) {
  Plane q{std::max<std::size_t>(1, p.w / 2), std::max<std::size_t>(1, p.h / 2), {}};
  q.v.resize(q.w * q.h);
  for (std::size_t y = 0; y < q.h; ++y)
    for (std::size_t x = 0; x < q.w; ++x) {
      double acc = 0.0;
      int n = 0;
      for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t b = 0; b < 2; ++b) {
          const std::size_t yy = std::min(p.h - 1, 2 * y + a), xx = std::min(p.w - 1, 2 * x + b);
          acc += p.v[yy * p.w + xx];
          ++n;
        }
      q.v[y * q.w + x] = acc / n;
    }
  return q;
}

// Block flow on one level. Candidates are the window of `radius` around
// `guess` (per-pixel, this level's units) and the window of `base` around
// zero, so a wrong coarse vector cannot hide a small true motion.
inline FlowField match_blocks(const Plane& prev, const Plane& curr, const FlowField* guess, std::size_t block,
                              int radius, int base) {
  FlowField f{prev.w, prev.h, std::vector<double>(prev.w * prev.h, 0.0), std::vector<double>(prev.w * prev.h, 0.0)};
  std::vector<std::pair<long, long>> cand;
  for (std::size_t by = 0; by < prev.h; by += block) {
    for (std::size_t bx = 0; bx < prev.w; bx += block) {
      const std::size_t ex = std::min(prev.w, bx + block), ey = std::min(prev.h, by + block);
      long gx = 0, gy = 0;
      if (guess) {
        const std::size_t cx = (bx + ex) / 2, cy = (by + ey) / 2;
        gx = std::lround(guess->dx[cy * f.width + cx]);
        gy = std::lround(guess->dy[cy * f.width + cx]);
      }
      cand.clear();
      for (long dy = -base; dy <= base; ++dy)
        for (long dx = -base; dx <= base; ++dx) cand.emplace_back(dx, dy);
      for (long dy = gy - radius; dy <= gy + radius; ++dy)
        for (long dx = gx - radius; dx <= gx + radius; ++dx)
          if (std::max(std::abs(dx), std::abs(dy)) > base) cand.emplace_back(dx, dy);
      double best = std::numeric_limits<double>::infinity();
      long best_dx = 0, best_dy = 0, best_norm = std::numeric_limits<long>::max();
      for (const auto& [dx, dy] : cand) {
        if (static_cast<long>(by) + dy < 0 || static_cast<long>(ey) - 1 + dy >= static_cast<long>(prev.h)) continue;
        double sad = 0.0;
        for (std::size_t y = by; y < ey && sad <= best; ++y)
          for (std::size_t x = bx; x < ex; ++x)
            sad += std::abs(prev.v[y * prev.w + x] - curr.at_wrap(static_cast<long>(x) + dx, static_cast<long>(y) + dy));
        const long norm = dx * dx + dy * dy;
        if (sad < best || (sad == best && (norm < best_norm || (norm == best_norm && std::pair(dy, dx) < std::pair(best_dy, best_dx))))) {
          best = sad;
          best_dx = dx;
          best_dy = dy;
          best_norm = norm;
        }
      }
      for (std::size_t y = by; y < ey; ++y)
        for (std::size_t x = bx; x < ex; ++x) {
          f.dx[y * f.width + x] = static_cast<double>(best_dx);
          f.dy[y * f.width + x] = static_cast<double>(best_dy);
        }
    }
  }
  return f;
}

inline FlowField upsample(const FlowField& coarse, std::size_t w, std::size_t h) {
  FlowField f{w, h, std::vector<double>(w * h), std::vector<double>(w * h)};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t cx = std::min(coarse.width - 1, x / 2), cy = std::min(coarse.height - 1, y / 2);
      f.dx[y * w + x] = 2.0 * coarse.dx[cy * coarse.width + cx];
      f.dy[y * w + x] = 2.0 * coarse.dy[cy * coarse.width + cx];
    }
  return f;
}

}  // namespace detail

/// Coarse-to-fine block-matching flow (SAD, horizontal wrap-around for the
/// ERP seam). Ties prefer the shortest displacement.
inline FlowField estimate_flow(const LumaFrame& prev, const LumaFrame& curr, const FlowOptions& opt = {}) {
  require_same_shape(prev, curr);
  require(opt.block > 0 && opt.levels > 0, ErrorCode::InvalidArgument, "bad flow options");
  std::vector<detail::Plane> pa{detail::to_plane(prev)}, pb{detail::to_plane(curr)};
  for (std::size_t l = 1; l < opt.levels; ++l) {
    if (pa.back().w < 2 * opt.block || pa.back().h < 2 * opt.block) break;
    pa.push_back(detail::downsample(pa.back()));
    pb.push_back(detail::downsample(pb.back()));
  }
  FlowField f;
  for (std::size_t l = pa.size(); l-- > 0;) {
    if (l + 1 == pa.size()) {
      f = detail::match_blocks(pa[l], pb[l], nullptr, opt.block, 0, opt.search);
    } else {
      const FlowField g = detail::upsample(f, pa[l].w, pa[l].h);
      f = detail::match_blocks(pa[l], pb[l], &g, opt.block, opt.refine, opt.search);
    }
  }
  return f;
}

/// Image shift induced by a head rotation between two head-centered ERP
/// renders: panning right moves the scene left, tilting up moves it down.
inline std::array<double, 2> ego_shift(const HeadState& from, const HeadState& to, std::size_t width,
                                       std::size_t height) {
  const double dpan = shortest_arc(from.pan, to.pan);
  const double dtilt = to.tilt - from.tilt;
  return {-dpan * static_cast<double>(width) / 360.0, dtilt * static_cast<double>(height) / 180.0};
}

/// Separable Gaussian blur; wraps horizontally, clamps vertically.
inline GrayMap gaussian_blur(const GrayMap& m, double sigma) {
  if (sigma <= 0.0) return m;
  const long r = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double ks = 0.0;
  for (long i = -r; i <= r; ++i) {
    k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    ks += k[static_cast<std::size_t>(i + r)];
  }
  for (auto& v : k) v /= ks;
  const long W = static_cast<long>(m.width), H = static_cast<long>(m.height);
  GrayMap tmp(m.width, m.height), out(m.width, m.height);
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      double acc = 0.0;
      for (long i = -r; i <= r; ++i) {
        long xx = (x + i) % W;
        if (xx < 0) xx += W;
        acc += k[static_cast<std::size_t>(i + r)] * m.values[static_cast<std::size_t>(y * W + xx)];
      }
      tmp.values[static_cast<std::size_t>(y * W + x)] = acc;
    }
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      double acc = 0.0;
      for (long i = -r; i <= r; ++i) {
        const long yy = std::clamp(y + i, 0L, H - 1);
        acc += k[static_cast<std::size_t>(i + r)] * tmp.values[static_cast<std::size_t>(yy * W + x)];
      }
      out.values[static_cast<std::size_t>(y * W + x)] = acc;
    }
  return out;
}

struct MotionMapOptions {
  FlowOptions flow;
  double sigma = 5.0;
};

/// Residual flow magnitude after removing the head-induced shift,
/// smoothed and scaled to [0, 1]. Returns the raw (pre-subtraction) mean
/// flow magnitude and residual mean through the optional out-params.
inline GrayMap motion_map(const LumaFrame& prev, const LumaFrame& curr, const HeadState& head_prev,
                          const HeadState& head_curr, const MotionMapOptions& opt = {}, double* raw_mean = nullptr,
                          double* residual_mean = nullptr) {
  require_same_shape(prev, curr);
  const FlowField flow = estimate_flow(prev, curr, opt.flow);
  const auto ego = ego_shift(head_prev, head_curr, prev.width, prev.height);
  GrayMap m(prev.width, prev.height);
  double raw = 0.0, res = 0.0;
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    raw += flow.magnitude(i);
    m.values[i] = std::hypot(flow.dx[i] - ego[0], flow.dy[i] - ego[1]);
    res += m.values[i];
  }
  const double n = static_cast<double>(m.values.size());
  if (raw_mean) *raw_mean = raw / n;
  if (residual_mean) *residual_mean = res / n;
  m = gaussian_blur(m, opt.sigma);
  double mx = 0.0;
  for (double v : m.values) mx = std::max(mx, v);
  if (mx > 0.0)
    for (double& v : m.values) v /= mx;
  else
    std::fill(m.values.begin(), m.values.end(), 0.0);
  return m;
}

}  // namespace orbit
