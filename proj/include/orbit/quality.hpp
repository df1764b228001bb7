#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "orbit/common.hpp"
#include "orbit/geometry.hpp"

namespace orbit {

/// Single luma plane, row-major.
struct LumaFrame {
  std::size_t width = 0;
  std::size_t height = 0;
  std::uint32_t max_value = 255;
  std::vector<std::uint16_t> samples;

  LumaFrame() = default;
  LumaFrame(std::size_t w, std::size_t h, std::uint32_t max = 255, std::uint16_t fill = 0)
      : width(w), height(h), max_value(max), samples(w * h, fill) {
    require(w > 0 && h > 0, ErrorCode::InvalidArgument, "frame dimensions must be positive");
  }

  std::uint16_t at(std::size_t x, std::size_t y) const { return samples[y * width + x]; }
  std::uint16_t& at(std::size_t x, std::size_t y) { return samples[y * width + x]; }

  void validate() const {
    require(width > 0 && height > 0 && samples.size() == width * height, ErrorCode::DataError,
            "frame sample count does not match dimensions");
    for (auto s : samples) require(s <= max_value, ErrorCode::DataError, "frame sample exceeds max value");
  }
};

inline void require_same_shape(const LumaFrame& a, const LumaFrame& b) {
  require(a.width == b.width && a.height == b.height, ErrorCode::ShapeMismatch,
          "frame dimension mismatch: " + std::to_string(a.width) + "x" + std::to_string(a.height) + " vs " +
              std::to_string(b.width) + "x" + std::to_string(b.height));
}

/// Mean squared luma error over the whole frame (one tile's worth of pixels).
inline double tile_mse(const LumaFrame& original, const LumaFrame& reconstructed) {
  require_same_shape(original, reconstructed);
  double acc = 0.0;
  for (std::size_t i = 0; i < original.samples.size(); ++i) {
    const double e = static_cast<double>(original.samples[i]) - static_cast<double>(reconstructed.samples[i]);
    acc += e * e;
  }
  return acc / static_cast<double>(original.samples.size());
}

/// Multi-frame tile: mean of per-frame MSE.
inline double tile_mse(std::span<const LumaFrame> original, std::span<const LumaFrame> reconstructed) {
  require(!original.empty() && original.size() == reconstructed.size(), ErrorCode::ShapeMismatch,
          "frame sequence length mismatch");
  double acc = 0.0;
  for (std::size_t f = 0; f < original.size(); ++f) acc += tile_mse(original[f], reconstructed[f]);
  return acc / static_cast<double>(original.size());
}

/// MSE restricted to a pixel rectangle of two full frames.
inline double region_mse(const LumaFrame& original, const LumaFrame& reconstructed, const PixelRect& r) {
  require_same_shape(original, reconstructed);
  require(r.x1 <= original.width && r.y1 <= original.height && r.x0 < r.x1 && r.y0 < r.y1,
          ErrorCode::InvalidArgument, "region outside frame");
  double acc = 0.0;
  for (std::size_t y = r.y0; y < r.y1; ++y)
    for (std::size_t x = r.x0; x < r.x1; ++x) {
      const double e = static_cast<double>(original.at(x, y)) - static_cast<double>(reconstructed.at(x, y));
      acc += e * e;
    }
  return acc / static_cast<double>((r.x1 - r.x0) * (r.y1 - r.y0));
}

inline double corrected_distortion(double d, double c) {
  require(d >= 0.0, ErrorCode::InvalidArgument, "distortion must be non-negative");
  return d * c;
}

/// WS-PSNR latitude weight of pixel row y.
inline double ws_weight(std::size_t y, const ErpPlane& plane) {
  require(y < plane.height, ErrorCode::InvalidArgument, "pixel row outside ERP plane");
  const double h = static_cast<double>(plane.height);
  return std::cos((static_cast<double>(y) - h / 2.0 + 0.5) * kPi / h);
}

struct QualityOptions {
  double cap_db = 99.0;
  bool unit_weights = false;  // plain PSNR
};

/// Weighted MSE over the masked viewport pixels.
inline double wmse(const LumaFrame& original, const LumaFrame& reconstructed, const std::vector<bool>& viewport,
                   const ErpPlane& plane, bool unit_weights = false) {
  require_same_shape(original, reconstructed);
  require(original.width == plane.width && original.height == plane.height, ErrorCode::ShapeMismatch,
          "frame does not match ERP plane");
  require(viewport.size() == plane.width * plane.height, ErrorCode::ShapeMismatch, "viewport mask size mismatch");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t y = 0; y < plane.height; ++y) {
    const double w = unit_weights ? 1.0 : ws_weight(y, plane);
    for (std::size_t x = 0; x < plane.width; ++x) {
      if (!viewport[y * plane.width + x]) continue;
      const double e = static_cast<double>(original.at(x, y)) - static_cast<double>(reconstructed.at(x, y));
      num += e * e * w;
      den += w;
    }
  }
  require(den > 0.0, ErrorCode::InvalidArgument, "empty viewport pixel set");
  return num / den;
}

inline double psnr_from_mse(double mse, double max_value, double cap_db) {
  if (mse <= 0.0) return cap_db;
  return std::min(cap_db, 10.0 * std::log10(max_value * max_value / mse));
}

inline double ws_psnr(const LumaFrame& original, const LumaFrame& reconstructed, const std::vector<bool>& viewport,
                      const ErpPlane& plane, const QualityOptions& opt = {}) {
  const double e = wmse(original, reconstructed, viewport, plane, opt.unit_weights);
  return psnr_from_mse(e, static_cast<double>(original.max_value), opt.cap_db);
}

/// WMSE of a viewport when each tile's squared error is spread uniformly
/// over its pixels: sum_n d_n * W_n / sum_n W_n, W_n the viewport weight
/// mass inside tile n.
inline double wmse_from_tiles(const TileGrid& grid, std::span<const double> tile_mse_values,
                              const std::vector<bool>& viewport) {
  const auto& plane = grid.plane();
  require(tile_mse_values.size() == grid.size(), ErrorCode::ShapeMismatch, "one MSE per tile required");
  require(viewport.size() == plane.width * plane.height, ErrorCode::ShapeMismatch, "viewport mask size mismatch");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t y = 0; y < plane.height; ++y) {
    const double w = ws_weight(y, plane);
    for (std::size_t x = 0; x < plane.width; ++x) {
      if (!viewport[y * plane.width + x]) continue;
      num += w * tile_mse_values[grid.flat(grid.tile_of_pixel(x, y))];
      den += w;
    }
  }
  require(den > 0.0, ErrorCode::InvalidArgument, "empty viewport pixel set");
  return num / den;
}

/// One encoded option of a tile.
struct Representation {
  int qp = 0;
  double rate = 0.0;         // bits per second
  double distortion = 0.0;   // d_nb
  double corrected = 0.0;    // d'_nb
};

/// Per-tile ladders with spherical correction applied. Representations in
/// each ladder are sorted by increasing rate and strictly decreasing
/// distortion.
struct DistortionTable {
  std::vector<std::vector<Representation>> tiles;

  std::size_t size() const { return tiles.size(); }
};

/// Builds a table from raw per-tile ladders: sorts by rate, drops options
/// dominated in both rate and distortion, applies c_n.
inline DistortionTable make_distortion_table(std::vector<std::vector<Representation>> ladders,
                                             std::span<const double> correction,
                                             std::vector<std::string>* warnings = nullptr) {
  require(ladders.size() == correction.size(), ErrorCode::ShapeMismatch, "one correction factor per tile required");
  DistortionTable table;
  table.tiles.reserve(ladders.size());
  for (std::size_t n = 0; n < ladders.size(); ++n) {
    auto& ladder = ladders[n];
    require(!ladder.empty(), ErrorCode::DataError, "tile " + std::to_string(n) + " has an empty ladder");
    for (const auto& r : ladder) {
      require(std::isfinite(r.rate) && std::isfinite(r.distortion), ErrorCode::NonFinite,
              "tile " + std::to_string(n) + " ladder has non-finite rate or distortion");
      require(r.rate >= 0.0 && r.distortion >= 0.0, ErrorCode::DataError,
              "tile " + std::to_string(n) + " ladder has negative rate or distortion");
    }
    std::stable_sort(ladder.begin(), ladder.end(),
                     [](const Representation& a, const Representation& b) { return a.rate < b.rate; });
    std::vector<Representation> kept;
    for (const auto& r : ladder) {
      if (!kept.empty() && (r.rate <= kept.back().rate || r.distortion >= kept.back().distortion)) {
        if (warnings)
          warnings->push_back("tile " + std::to_string(n) + ": dropped dominated representation qp=" +
                              std::to_string(r.qp));
        continue;
      }
      kept.push_back(r);
      kept.back().corrected = corrected_distortion(r.distortion, correction[n]);
    }
    table.tiles.push_back(std::move(kept));
  }
  return table;
}

}  // namespace orbit
