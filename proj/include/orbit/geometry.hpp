#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "orbit/common.hpp"

namespace orbit {

/// Equirectangular image plane, 360 x 180 degrees.
struct ErpPlane {
  std::size_t width = 0;
  std::size_t height = 0;

  ErpPlane() = default;
  ErpPlane(std::size_t w, std::size_t h) : width(w), height(h) {
    require(w > 0 && h > 0, ErrorCode::InvalidArgument, "ERP plane dimensions must be positive");
    require(w == 2 * h, ErrorCode::InvalidArgument,
            "ERP plane must be 2:1, got " + std::to_string(w) + "x" + std::to_string(h));
  }

  /// Angular position of a pixel center.
  double pan_of(double x) const { return -180.0 + (x + 0.5) * 360.0 / static_cast<double>(width); }
  double tilt_of(double y) const { return 90.0 - (y + 0.5) * 180.0 / static_cast<double>(height); }

  /// Continuous pixel coordinates of an angle (inverse of pan_of/tilt_of).
  double x_of(double pan) const { return (wrap180(pan) + 180.0) * static_cast<double>(width) / 360.0 - 0.5; }
  double y_of(double tilt) const { return (90.0 - tilt) * static_cast<double>(height) / 180.0 - 0.5; }
};

struct TileIndex {
  std::size_t row = 0;
  std::size_t col = 0;

  friend auto operator<=>(const TileIndex&, const TileIndex&) = default;
};

using TileSet = std::set<TileIndex>;

struct PixelRect {
  std::size_t x0, y0, x1, y1;  // half-open
};

/// rows x cols tiling of an ERP plane. Row 0 is the top (north) row,
/// col 0 starts at pan -180.
class TileGrid {
 public:
  TileGrid() : TileGrid(4, 8, ErpPlane(256, 128)) {}

  TileGrid(std::size_t rows, std::size_t cols, ErpPlane plane) : rows_(rows), cols_(cols), plane_(plane) {
    require(rows > 0 && cols > 0, ErrorCode::InvalidArgument, "tile grid dimensions must be positive");
    require(plane.width % cols == 0 && plane.height % rows == 0, ErrorCode::InvalidArgument,
            "ERP plane " + std::to_string(plane.width) + "x" + std::to_string(plane.height) +
                " is not divisible by tile grid " + std::to_string(rows) + "x" + std::to_string(cols));
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return rows_ * cols_; }
  const ErpPlane& plane() const { return plane_; }

  double tile_pan_span() const { return 360.0 / static_cast<double>(cols_); }
  double tile_tilt_span() const { return 180.0 / static_cast<double>(rows_); }

  std::size_t flat(TileIndex t) const { return t.row * cols_ + t.col; }
  TileIndex unflat(std::size_t n) const { return {n / cols_, n % cols_}; }

  void check(TileIndex t) const {
    require(t.row < rows_ && t.col < cols_, ErrorCode::InvalidArgument,
            "tile (" + std::to_string(t.row) + "," + std::to_string(t.col) + ") outside grid");
  }

  /// Lower pan / lower tilt corner of a tile, degrees.
  double pan_lo(std::size_t col) const { return -180.0 + static_cast<double>(col) * tile_pan_span(); }
  double tilt_lo(std::size_t row) const { return 90.0 - static_cast<double>(row + 1) * tile_tilt_span(); }

  PixelRect pixels(TileIndex t) const {
    const std::size_t tw = plane_.width / cols_;
    const std::size_t th = plane_.height / rows_;
    return {t.col * tw, t.row * th, (t.col + 1) * tw, (t.row + 1) * th};
  }

  TileIndex tile_of_pixel(std::size_t x, std::size_t y) const {
    return {y / (plane_.height / rows_), x / (plane_.width / cols_)};
  }

 private:
  std::size_t rows_;
  std::size_t cols_;
  ErpPlane plane_;
};

struct Viewport {
  double pan = 0.0;
  double tilt = 0.0;
  double fov_h = 90.0;
  double fov_v = 90.0;

  void validate() const {
    require(std::isfinite(pan) && std::isfinite(tilt), ErrorCode::InvalidArgument, "viewport center not finite");
    require(tilt >= -90.0 && tilt <= 90.0, ErrorCode::InvalidArgument, "viewport tilt outside [-90, 90]");
    require(fov_h > 0.0 && fov_h <= 360.0 && fov_v > 0.0 && fov_v <= 180.0, ErrorCode::InvalidArgument,
            "viewport field of view out of range");
  }
};

namespace detail {
inline bool overlaps(double a0, double a1, double b0, double b1) { return a0 < b1 && b0 < a1; }
}  // namespace detail

/// Tiles whose angular box intersects the viewport box (closed-open
/// intervals, pan wraps at +-180).
inline TileSet tiles_in_viewport(const TileGrid& grid, const Viewport& vp) {
  vp.validate();
  TileSet out;
  const double pan_lo = wrap180(vp.pan) - vp.fov_h / 2.0;
  const double pan_hi = wrap180(vp.pan) + vp.fov_h / 2.0;
  const double tilt_lo = vp.tilt - vp.fov_v / 2.0;
  const double tilt_hi = vp.tilt + vp.fov_v / 2.0;
  const bool full_pan = vp.fov_h >= 360.0;
  for (std::size_t r = 0; r < grid.rows(); ++r) {
    const double t0 = grid.tilt_lo(r);
    const double t1 = t0 + grid.tile_tilt_span();
    if (!detail::overlaps(tilt_lo, tilt_hi, t0, t1)) continue;
    for (std::size_t c = 0; c < grid.cols(); ++c) {
      const double p0 = grid.pan_lo(c);
      const double p1 = p0 + grid.tile_pan_span();
      bool hit = full_pan;
      for (int k = -1; k <= 1 && !hit; ++k) {
        hit = detail::overlaps(pan_lo, pan_hi, p0 + 360.0 * k, p1 + 360.0 * k);
      }
      if (hit) out.insert({r, c});
    }
  }
  return out;
}

/// Union of viewport tiles along a viewport trajectory.
inline TileSet tiles_in_trajectory(const TileGrid& grid, std::span<const Viewport> trajectory) {
  TileSet out;
  for (const auto& vp : trajectory) {
    auto s = tiles_in_viewport(grid, vp);
    out.insert(s.begin(), s.end());
  }
  return out;
}

/// Euclidean distance in tile units from `n` to the nearest viewport tile
/// center, column distance taken around the seam.
inline double tile_distance(const TileGrid& grid, TileIndex n, const TileSet& viewport_tiles) {
  grid.check(n);
  require(!viewport_tiles.empty(), ErrorCode::InvalidArgument, "no viewport tiles");
  double best = INFINITY;
  for (const auto& v : viewport_tiles) {
    const double dr = static_cast<double>(n.row) - static_cast<double>(v.row);
    const std::size_t raw = n.col > v.col ? n.col - v.col : v.col - n.col;
    const double dc = static_cast<double>(std::min(raw, grid.cols() - raw));
    best = std::min(best, std::sqrt(dr * dr + dc * dc));
  }
  return best;
}

/// Ratio of a tile's area on the sphere to its angular area in the ERP
/// plane. Depends only on the tile row; the radius cancels.
inline double spherical_correction(const TileGrid& grid, TileIndex n, double radius = 1.0) {
  require(radius > 0.0, ErrorCode::InvalidArgument, "sphere radius must be positive");
  require(n.row < grid.rows(), ErrorCode::InvalidArgument,
          "tile row " + std::to_string(n.row) + " outside [-pi/2, pi/2]");
  require(n.col < grid.cols(), ErrorCode::InvalidArgument, "tile column outside grid");
  const double d_theta = deg2rad(grid.tile_pan_span());
  const double d_phi = deg2rad(grid.tile_tilt_span());
  const double phi = deg2rad(grid.tilt_lo(n.row));
  // integral of R^2 cos(phi) over the tile, over (R * d_theta)(R * d_phi)
  const double sphere_area = radius * radius * d_theta * (std::sin(phi + d_phi) - std::sin(phi));
  const double plane_area = (radius * d_theta) * (radius * d_phi);
  return sphere_area / plane_area;
}

inline std::vector<double> spherical_corrections(const TileGrid& grid) {
  std::vector<double> c(grid.size());
  for (std::size_t n = 0; n < grid.size(); ++n) c[n] = spherical_correction(grid, grid.unflat(n));
  return c;
}

/// Row-major mask of ERP pixels whose centers fall inside the viewport.
inline std::vector<bool> viewport_mask(const ErpPlane& plane, const Viewport& vp) {
  vp.validate();
  std::vector<bool> mask(plane.width * plane.height, false);
  const double half_h = vp.fov_h / 2.0;
  const double lo_v = vp.tilt - vp.fov_v / 2.0;
  const double hi_v = vp.tilt + vp.fov_v / 2.0;
  for (std::size_t y = 0; y < plane.height; ++y) {
    const double tilt = plane.tilt_of(static_cast<double>(y));
    if (tilt < lo_v || tilt >= hi_v) continue;
    for (std::size_t x = 0; x < plane.width; ++x) {
      const double d = shortest_arc(vp.pan, plane.pan_of(static_cast<double>(x)));
      if (vp.fov_h >= 360.0 || (d >= -half_h && d < half_h)) mask[y * plane.width + x] = true;
    }
  }
  return mask;
}

}  // namespace orbit
