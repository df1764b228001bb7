#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "orbit/common.hpp"
#include "orbit/geometry.hpp"
#include "orbit/quality.hpp"

namespace orbit {

/// Viewport relevance of every tile: w_n = 1 / (delta_n^2 + 1), and the
/// same weights normalized to sum to one over the tiles.
struct TileWeights {
  std::vector<double> raw;
  std::vector<double> normalized;
};

inline TileWeights weights_from_raw(std::vector<double> raw) {
  require(!raw.empty(), ErrorCode::InvalidArgument, "no tiles");
  TileWeights w;
  double sum = 0.0;
  for (double v : raw) {
    require(v > 0.0 && std::isfinite(v), ErrorCode::InvalidArgument, "tile weights must be positive");
    sum += v;
  }
  w.normalized.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) w.normalized[i] = raw[i] / sum;
  w.raw = std::move(raw);
  return w;
}

inline TileWeights tile_weights(const TileGrid& grid, const TileSet& viewport_tiles) {
  std::vector<double> raw(grid.size());
  for (std::size_t n = 0; n < grid.size(); ++n) {
    const double d = tile_distance(grid, grid.unflat(n), viewport_tiles);
    raw[n] = 1.0 / (d * d + 1.0);
  }
  return weights_from_raw(std::move(raw));
}

/// Selected representation per tile; the one-hot matrix a_ij is implied
/// (a_ij = 1 iff choice[i] == j).
struct Allocation {
  std::vector<std::size_t> choice;

  bool selected(std::size_t i, std::size_t j) const { return choice[i] == j; }
  friend bool operator==(const Allocation&, const Allocation&) = default;
};

struct ObjectiveReport {
  double lambda = 0.0;  // weighted distortion
  double xi = 0.0;      // spatial quality variance
  double nu = 0.0;
  double total = 0.0;
  double rate_used = 0.0;
  std::vector<std::vector<double>> k;  // |d'_ij - lambda|
  std::vector<std::vector<double>> l;  // k_ij * a_ij
};

namespace detail {

inline void check_inputs(const DistortionTable& table, const TileWeights& w) {
  require(!table.tiles.empty(), ErrorCode::InvalidArgument, "empty distortion table");
  require(w.normalized.size() == table.size(), ErrorCode::ShapeMismatch,
          "weights and distortion table disagree on tile count");
}

inline double allocation_rate(const DistortionTable& table, const std::vector<std::size_t>& choice) {
  double r = 0.0;
  for (std::size_t i = 0; i < choice.size(); ++i) r += table.tiles[i][choice[i]].rate;
  return r;
}

struct Totals {
  double lambda, xi, total;
};

// Shared by evaluate() and both solvers so that objective values of the same
// allocation are bit-identical regardless of the route.
inline Totals objective_totals(const DistortionTable& table, const std::vector<double>& w,
                               const std::vector<std::size_t>& choice, double nu) {
  double lambda = 0.0;
  for (std::size_t i = 0; i < choice.size(); ++i) lambda += w[i] * table.tiles[i][choice[i]].corrected;
  double xi = 0.0;
  for (std::size_t i = 0; i < choice.size(); ++i)
    xi += w[i] * std::abs(table.tiles[i][choice[i]].corrected - lambda);
  return {lambda, xi, lambda + nu * xi};
}

// Candidate ordering: objective, then rate, then lexicographic choice.
inline bool better(double total_a, double rate_a, const std::vector<std::size_t>& a, double total_b,
                   double rate_b, const std::vector<std::size_t>& b) {
  if (total_a != total_b) return total_a < total_b;
  if (rate_a != rate_b) return rate_a < rate_b;
  return a < b;
}

inline double min_total_rate(const DistortionTable& table) {
  double r = 0.0;
  for (const auto& t : table.tiles) r += t.front().rate;
  return r;
}

inline void check_feasible(const DistortionTable& table, double budget) {
  const double need = min_total_rate(table);
  if (need > budget) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "infeasible: minimum ladder needs %.6g bps, budget is %.6g bps", need, budget);
    fail(ErrorCode::Infeasible, buf);
  }
}

}  // namespace detail

inline void validate_allocation(const Allocation& a, const DistortionTable& table) {
  require(a.choice.size() == table.size(), ErrorCode::ShapeMismatch, "allocation tile count mismatch");
  for (std::size_t i = 0; i < a.choice.size(); ++i)
    require(a.choice[i] < table.tiles[i].size(), ErrorCode::InvalidArgument,
            "allocation selects a missing representation for tile " + std::to_string(i));
}

inline ObjectiveReport evaluate(const Allocation& alloc, const DistortionTable& table, const TileWeights& weights,
                                double nu) {
  detail::check_inputs(table, weights);
  validate_allocation(alloc, table);
  const auto t = detail::objective_totals(table, weights.normalized, alloc.choice, nu);
  ObjectiveReport rep;
  rep.lambda = t.lambda;
  rep.xi = t.xi;
  rep.nu = nu;
  rep.total = t.total;
  rep.rate_used = detail::allocation_rate(table, alloc.choice);
  rep.k.resize(table.size());
  rep.l.resize(table.size());
  for (std::size_t i = 0; i < table.size(); ++i) {
    for (std::size_t j = 0; j < table.tiles[i].size(); ++j) {
      const double k = std::abs(table.tiles[i][j].corrected - t.lambda);
      rep.k[i].push_back(k);
      rep.l[i].push_back(alloc.selected(i, j) ? k : 0.0);
    }
  }
  return rep;
}

inline Allocation minimum_rate_allocation(const DistortionTable& table) {
  return Allocation{std::vector<std::size_t>(table.size(), 0)};
}

inline constexpr double kExactSearchLimit = 1e7;

/// Globally optimal allocation of the nonlinear objective by depth-first
/// branch and bound. The bound is the weighted distortion with every open
/// tile at its least distortion (Xi >= 0), plus rate feasibility.
inline Allocation solve_exact(const DistortionTable& table, const TileWeights& weights, double nu,
                              double budget) {
  detail::check_inputs(table, weights);
  require(nu >= 0.0, ErrorCode::InvalidArgument, "nu must be non-negative");
  double space = 1.0;
  for (const auto& t : table.tiles) space *= static_cast<double>(t.size());
  require(space <= kExactSearchLimit, ErrorCode::InvalidArgument,
          "search space too large for the exact solver; use the heuristic");
  detail::check_feasible(table, budget);

  const std::size_t n = table.size();
  const auto& w = weights.normalized;
  std::vector<double> suffix_rate(n + 1, 0.0);
  std::vector<double> suffix_lambda(n + 1, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    double dmin = INFINITY;
    for (const auto& r : table.tiles[i]) dmin = std::min(dmin, r.corrected);
    suffix_rate[i] = suffix_rate[i + 1] + table.tiles[i].front().rate;
    suffix_lambda[i] = suffix_lambda[i + 1] + w[i] * dmin;
  }

  std::vector<std::size_t> cur(n, 0);
  std::vector<std::size_t> best;
  double best_total = INFINITY;
  double best_rate = INFINITY;
  const double slack = 1e-12;

  auto dfs = [&](auto&& self, std::size_t i, double rate, double lambda_part) -> void {
    if (i == n) {
      const double r = detail::allocation_rate(table, cur);
      if (r > budget) return;
      const auto t = detail::objective_totals(table, w, cur, nu);
      if (best.empty() || detail::better(t.total, r, cur, best_total, best_rate, best)) {
        best = cur;
        best_total = t.total;
        best_rate = r;
      }
      return;
    }
    for (std::size_t j = 0; j < table.tiles[i].size(); ++j) {
      const auto& rep = table.tiles[i][j];
      const double r = rate + rep.rate;
      if (r + suffix_rate[i + 1] > budget * (1.0 + slack)) continue;
      const double lb = lambda_part + w[i] * rep.corrected + suffix_lambda[i + 1];
      if (!best.empty() && lb > best_total * (1.0 + slack) + 1e-300) continue;
      cur[i] = j;
      self(self, i + 1, r, lambda_part + w[i] * rep.corrected);
    }
    cur[i] = 0;
  };
  dfs(dfs, 0, 0.0, 0.0);
  require(!best.empty(), ErrorCode::Infeasible, "infeasible: no allocation satisfies the budget");
  return Allocation{best};
}

/// Exact multiple-choice knapsack: minimize sum_i cost[i][choice_i] subject
/// to sum_i rate[i][choice_i] <= budget. Branch and bound with the LP
/// relaxation (convex-hull greedy) as the lower bound.
class ChoiceKnapsack {
 public:
  ChoiceKnapsack(const DistortionTable& table, std::vector<std::vector<double>> cost, double budget)
      : table_(table), cost_(std::move(cost)), budget_(budget), n_(table.size()) {
    // Options that cost at least as much as a cheaper-rate option are never
    // needed for the optimum; keep the undominated ones per tile.
    options_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) {
      double best_cost = INFINITY;
      for (std::size_t j = 0; j < table.tiles[i].size(); ++j) {
        if (cost_[i][j] < best_cost) {
          options_[i].push_back(j);
          best_cost = cost_[i][j];
        }
      }
    }
    hull_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) hull_[i] = lower_hull(i);
    suffix_rate_.assign(n_ + 1, 0.0);
    for (std::size_t i = n_; i-- > 0;) suffix_rate_[i] = suffix_rate_[i + 1] + rate(i, options_[i].front());
  }

  std::vector<std::size_t> solve(std::size_t node_limit = 20'000'000) {
    cur_.assign(n_, 0);
    best_.clear();
    best_cost_ = INFINITY;
    nodes_ = 0;
    node_limit_ = node_limit;
    seed_incumbent();
    dfs(0, 0.0, 0.0);
    require(!best_.empty(), ErrorCode::Infeasible, "infeasible: no allocation satisfies the budget");
    return best_;
  }

  bool exhausted() const { return nodes_ >= node_limit_; }

 private:
  struct Segment {
    double d_rate, d_cost;
    std::size_t tile;
  };

  double rate(std::size_t i, std::size_t j) const { return table_.tiles[i][j].rate; }

  std::vector<std::size_t> lower_hull(std::size_t i) const {
    std::vector<std::size_t> h;
    for (std::size_t j : options_[i]) {
      while (h.size() >= 2) {
        const std::size_t a = h[h.size() - 2];
        const std::size_t b = h.back();
        const double s_ab = (cost_[i][b] - cost_[i][a]) / (rate(i, b) - rate(i, a));
        const double s_aj = (cost_[i][j] - cost_[i][a]) / (rate(i, j) - rate(i, a));
        if (s_aj <= s_ab) h.pop_back();
        else break;
      }
      h.push_back(j);
    }
    return h;
  }

  // LP relaxation over tiles [from, n) with the given remaining budget.
  double relaxation(std::size_t from, double remaining) const {
    double base = 0.0;
    std::vector<Segment> segs;
    for (std::size_t i = from; i < n_; ++i) {
      const auto& h = hull_[i];
      base += cost_[i][h.front()];
      remaining -= rate(i, h.front());
      for (std::size_t s = 1; s < h.size(); ++s)
        segs.push_back({rate(i, h[s]) - rate(i, h[s - 1]), cost_[i][h[s]] - cost_[i][h[s - 1]], i});
    }
    if (remaining < 0.0) return INFINITY;
    std::sort(segs.begin(), segs.end(), [](const Segment& a, const Segment& b) {
      return a.d_cost * b.d_rate < b.d_cost * a.d_rate;
    });
    for (const auto& s : segs) {
      if (remaining <= 0.0) break;
      if (s.d_rate <= remaining) {
        base += s.d_cost;
        remaining -= s.d_rate;
      } else {
        base += s.d_cost * (remaining / s.d_rate);
        remaining = 0.0;
      }
    }
    return base;
  }

  void offer(const std::vector<std::size_t>& choice) {
    double c = 0.0;
    double r = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      c += cost_[i][choice[i]];
      r += rate(i, choice[i]);
    }
    if (r > budget_) return;
    if (best_.empty() || c < best_cost_) {
      best_ = choice;
      best_cost_ = c;
    }
  }

  // Integral part of the greedy LP solution.
  void seed_incumbent() {
    std::vector<std::size_t> pick(n_);
    std::vector<std::size_t> pos(n_, 0);
    double remaining = budget_;
    std::vector<Segment> segs;
    for (std::size_t i = 0; i < n_; ++i) {
      pick[i] = hull_[i].front();
      remaining -= rate(i, pick[i]);
      for (std::size_t s = 1; s < hull_[i].size(); ++s)
        segs.push_back({rate(i, hull_[i][s]) - rate(i, hull_[i][s - 1]),
                        cost_[i][hull_[i][s]] - cost_[i][hull_[i][s - 1]], i});
    }
    if (remaining < 0.0) return;
    std::stable_sort(segs.begin(), segs.end(), [](const Segment& a, const Segment& b) {
      return a.d_cost * b.d_rate < b.d_cost * a.d_rate;
    });
    for (const auto& s : segs) {
      if (s.d_rate > remaining) continue;
      // segments of one tile are consumed in hull order
      if (hull_[s.tile][pos[s.tile]] != pick[s.tile]) continue;
      remaining -= s.d_rate;
      ++pos[s.tile];
      pick[s.tile] = hull_[s.tile][pos[s.tile]];
    }
    offer(pick);
  }

  void dfs(std::size_t i, double rate_used, double cost_used) {
    if (++nodes_ >= node_limit_) return;
    if (i == n_) {
      offer(cur_);
      return;
    }
    const double tol = 1e-12 * std::max(1.0, std::abs(best_cost_));
    const double bound = cost_used + relaxation(i, budget_ - rate_used);
    if (!best_.empty() && bound >= best_cost_ - tol) return;
    // try cheaper-cost options first
    std::vector<std::size_t> order = options_[i];
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cost_[i][a] < cost_[i][b]; });
    for (std::size_t j : order) {
      const double r = rate_used + rate(i, j);
      if (r + suffix_rate_[i + 1] > budget_ * (1.0 + 1e-12)) continue;
      cur_[i] = j;
      dfs(i + 1, r, cost_used + cost_[i][j]);
    }
  }

  const DistortionTable& table_;
  std::vector<std::vector<double>> cost_;
  double budget_;
  std::size_t n_;
  std::vector<std::vector<std::size_t>> options_;
  std::vector<std::vector<std::size_t>> hull_;
  std::vector<double> suffix_rate_;
  std::vector<std::size_t> cur_;
  std::vector<std::size_t> best_;
  double best_cost_ = INFINITY;
  std::size_t nodes_ = 0;
  std::size_t node_limit_ = 0;
};

/// Scalable solver: alternate between fixing Lambda and solving the then
/// separable knapsack exactly, followed by single-tile improvement moves.
/// Exact for nu = 0.
inline Allocation solve_heuristic(const DistortionTable& table, const TileWeights& weights, double nu,
                                  double budget) {
  detail::check_inputs(table, weights);
  require(nu >= 0.0, ErrorCode::InvalidArgument, "nu must be non-negative");
  detail::check_feasible(table, budget);
  const std::size_t n = table.size();
  const auto& w = weights.normalized;

  std::vector<std::size_t> best;
  double best_total = INFINITY;
  double best_rate = INFINITY;
  auto consider = [&](const std::vector<std::size_t>& c) {
    const double r = detail::allocation_rate(table, c);
    if (r > budget) return;
    const double t = detail::objective_totals(table, w, c, nu).total;
    if (best.empty() || detail::better(t, r, c, best_total, best_rate, best)) {
      best = c;
      best_total = t;
      best_rate = r;
    }
  };

  auto knapsack = [&](double lambda, double nu_eff) {
    std::vector<std::vector<double>> cost(n);
    for (std::size_t i = 0; i < n; ++i)
      for (const auto& rep : table.tiles[i])
        cost[i].push_back(w[i] * rep.corrected + nu_eff * w[i] * std::abs(rep.corrected - lambda));
    return ChoiceKnapsack(table, std::move(cost), budget).solve();
  };

  const auto min_rate = minimum_rate_allocation(table).choice;
  consider(min_rate);
  const auto distortion_optimal = knapsack(0.0, 0.0);
  consider(distortion_optimal);
  if (nu == 0.0) return Allocation{best};

  for (const auto& start : {distortion_optimal, min_rate}) {
    double lambda = detail::objective_totals(table, w, start, nu).lambda;
    for (int it = 0; it < 20; ++it) {
      const auto c = knapsack(lambda, nu);
      consider(c);
      const double next = detail::objective_totals(table, w, c, nu).lambda;
      if (next == lambda) break;
      lambda = next;
    }
  }

  // first-improvement single-tile moves on the true objective
  std::vector<std::size_t> cur = best;
  bool improved = true;
  for (int pass = 0; improved && pass < 50; ++pass) {
    improved = false;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t keep = cur[i];
      for (std::size_t j = 0; j < table.tiles[i].size(); ++j) {
        if (j == keep) continue;
        cur[i] = j;
        const double before = best_total;
        consider(cur);
        if (best_total < before) {
          improved = true;
          break;
        }
        cur[i] = keep;
      }
      cur = best;
    }
  }
  return Allocation{best};
}

namespace detail {
inline std::string fmt_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
inline std::string var(const char* base, std::size_t i, std::size_t j) {
  return std::string(base) + "_" + std::to_string(i) + "_" + std::to_string(j);
}
}  // namespace detail

/// CPLEX-LP style text of the linearized allocation problem: binaries a_ij,
/// continuous Lambda, k_ij >= |d'_ij - Lambda| as two linear rows, and the
/// product rows l_ij = k_ij * a_ij. Objective: Lambda + nu * sum w_i l_ij.
inline std::string export_qcp(const DistortionTable& table, const TileWeights& weights, double nu, double budget) {
  detail::check_inputs(table, weights);
  const auto& w = weights.normalized;
  using detail::fmt_num;
  using detail::var;
  std::ostringstream out;
  out << "\\ tile representation selection, " << table.size() << " tiles\n";
  out << "Minimize\n obj: Lambda";
  for (std::size_t i = 0; i < table.size(); ++i)
    for (std::size_t j = 0; j < table.tiles[i].size(); ++j)
      out << " + " << fmt_num(nu * w[i]) << " " << var("l", i, j);
  out << "\nSubject To\n";
  out << " lambda_def: Lambda";
  for (std::size_t i = 0; i < table.size(); ++i)
    for (std::size_t j = 0; j < table.tiles[i].size(); ++j)
      out << " - " << fmt_num(w[i] * table.tiles[i][j].corrected) << " " << var("a", i, j);
  out << " = 0\n";
  out << " rate:";
  bool first = true;
  for (std::size_t i = 0; i < table.size(); ++i)
    for (std::size_t j = 0; j < table.tiles[i].size(); ++j) {
      out << (first ? " " : " + ") << fmt_num(table.tiles[i][j].rate) << " " << var("a", i, j);
      first = false;
    }
  out << " <= " << fmt_num(budget) << "\n";
  for (std::size_t i = 0; i < table.size(); ++i) {
    out << " onehot_" << i << ":";
    for (std::size_t j = 0; j < table.tiles[i].size(); ++j) out << (j ? " + " : " ") << var("a", i, j);
    out << " = 1\n";
  }
  for (std::size_t i = 0; i < table.size(); ++i)
    for (std::size_t j = 0; j < table.tiles[i].size(); ++j) {
      const double d = table.tiles[i][j].corrected;
      out << " kpos_" << i << "_" << j << ": " << var("k", i, j) << " + Lambda >= " << fmt_num(d) << "\n";
      out << " kneg_" << i << "_" << j << ": " << var("k", i, j) << " - Lambda >= " << fmt_num(-d) << "\n";
      out << " prod_" << i << "_" << j << ": " << var("l", i, j) << " - [ " << var("k", i, j) << " * "
          << var("a", i, j) << " ] = 0\n";
    }
  out << "Bounds\n Lambda free\n";
  for (std::size_t i = 0; i < table.size(); ++i)
    for (std::size_t j = 0; j < table.tiles[i].size(); ++j)
      out << " " << var("k", i, j) << " >= 0\n " << var("l", i, j) << " >= 0\n";
  out << "Binaries\n";
  for (std::size_t i = 0; i < table.size(); ++i)
    for (std::size_t j = 0; j < table.tiles[i].size(); ++j) out << " " << var("a", i, j) << "\n";
  out << "End\n";
  return out.str();
}

}  // namespace orbit
