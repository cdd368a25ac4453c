#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "otpf/ensemble.hpp"
#include "otpf/error.hpp"

/**
 * \file
 * \brief Discrete optimal transport between two weighted copies of one ensemble.
 *
 * The coupling T minimises sum_ij t_ij c_ij subject to row sums equal to the
 * posterior weights and column sums equal to the prior weights. The linear
 * program is solved with the transportation simplex: an initial basic feasible
 * solution with 2M-1 basic cells forming a spanning tree of the bipartite
 * row/column graph, dual potentials u_i + v_j = c_ij on the tree, and cycle
 * pivots on the most negative reduced cost.
 */

namespace otpf {

struct IndexPair {
  std::size_t i = 0;
  std::size_t j = 0;
  friend auto operator<=>(const IndexPair&, const IndexPair&) = default;
};

/// Squared state-space distances; entries[i][j] = |x_i - x_j|^2.
struct CostMatrix {
  Eigen::MatrixXd entries;
  Eigen::Index size() const noexcept { return entries.rows(); }
};

/// Row marginal (posterior weights) and column marginal (prior weights).
struct MarginalPair {
  Eigen::VectorXd row;
  Eigen::VectorXd col;
};

struct Coupling {
  Eigen::MatrixXd t;
  double objective = 0.0;
  std::vector<IndexPair> support;
  std::size_t pivots = 0;
};

/// Column-stochastic Markov matrix P; column j is the law of posterior member j.
struct TransitionMatrix {
  Eigen::MatrixXd p;
};

enum class Initialization {
  NorthwestCorner,
  MinimumCost,
};

struct TransportOptions {
  Initialization initialization = Initialization::NorthwestCorner;
  /// Reduced costs above -optimality_tol * max|c| count as nonnegative.
  double optimality_tol = 1e-12;
  /// Basic entries below this are degenerate but stay in the basis.
  double degenerate_tol = 1e-14;
  /// Relative threshold (times max row marginal) for an entry to count as support.
  double support_tol = 1e-12;
  /// Marginal totals may differ by at most this much.
  double feasibility_tol = 1e-10;
  /// Pivot cap is pivot_limit_factor * M^2.
  std::size_t pivot_limit_factor = 100;
};

inline CostMatrix cost_matrix(const Eigen::MatrixXd& states) {
  if (states.cols() < 1) throw InvalidInput("cost_matrix: needs at least one member");
  if (!states.allFinite()) throw InvalidInput("cost_matrix: non-finite state entry");
  const Eigen::Index m = states.cols();
  Eigen::MatrixXd c(m, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    c(j, j) = 0.0;
    for (Eigen::Index i = j + 1; i < m; ++i) {
      const double d = (states.col(i) - states.col(j)).squaredNorm();
      c(i, j) = d;
      c(j, i) = d;
    }
  }
  return CostMatrix{std::move(c)};
}

inline CostMatrix cost_matrix(const Ensemble& ensemble) { return cost_matrix(ensemble.states); }

/// Sorted list of entries above support_tol * max(row marginal).
inline std::vector<IndexPair> support_pattern(const Eigen::MatrixXd& t, double threshold) {
  std::vector<IndexPair> out;
  for (Eigen::Index i = 0; i < t.rows(); ++i)
    for (Eigen::Index j = 0; j < t.cols(); ++j)
      if (t(i, j) > threshold) out.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j)});
  return out;
}

inline std::vector<IndexPair> support_pattern(const Coupling& coupling) { return coupling.support; }

namespace detail {

/// Spanning-tree basis of an m x n transportation problem.
class TransportBasis {
 public:
  TransportBasis(Eigen::Index m, Eigen::Index n) : m_{m}, n_{n}, in_basis_(static_cast<std::size_t>(m * n), 0) {}

  void add(IndexPair cell) {
    cells_.push_back(cell);
    in_basis_[flat(cell)] = 1;
  }

  void replace(std::size_t slot, IndexPair cell) {
    in_basis_[flat(cells_[slot])] = 0;
    cells_[slot] = cell;
    in_basis_[flat(cell)] = 1;
  }

  bool contains(Eigen::Index i, Eigen::Index j) const { return in_basis_[static_cast<std::size_t>(i * n_ + j)] != 0; }
  const std::vector<IndexPair>& cells() const { return cells_; }

  /// Rebuilds the rooted tree over nodes [rows | cols] and the dual potentials.
  void refresh(const Eigen::MatrixXd& cost, Eigen::VectorXd& u, Eigen::VectorXd& v) {
    const auto nodes = static_cast<std::size_t>(m_ + n_);
    adjacency_.assign(nodes, {});
    for (std::size_t s = 0; s < cells_.size(); ++s) {
      const auto r = cells_[s].i;
      const auto c = static_cast<std::size_t>(m_) + cells_[s].j;
      adjacency_[r].push_back({c, s});
      adjacency_[c].push_back({r, s});
    }
    parent_.assign(nodes, kNone);
    parent_slot_.assign(nodes, kNone);
    depth_.assign(nodes, 0);
    std::vector<char> seen(nodes, 0);
    std::vector<std::size_t> queue{0};
    seen[0] = 1;
    u.setZero(m_);
    v.setZero(n_);
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const auto node = queue[head];
      for (const auto& [next, slot] : adjacency_[node]) {
        if (seen[next]) continue;
        seen[next] = 1;
        parent_[next] = node;
        parent_slot_[next] = slot;
        depth_[next] = depth_[node] + 1;
        const auto [ci, cj] = cells_[slot];
        const double c = cost(static_cast<Eigen::Index>(ci), static_cast<Eigen::Index>(cj));
        if (next >= static_cast<std::size_t>(m_))
          v(static_cast<Eigen::Index>(cj)) = c - u(static_cast<Eigen::Index>(ci));
        else
          u(static_cast<Eigen::Index>(ci)) = c - v(static_cast<Eigen::Index>(cj));
        queue.push_back(next);
      }
    }
    if (queue.size() != nodes) throw NumericError("transport: basis is not a spanning tree");
  }

  /// Basis slots on the tree path from column node j to row node i, in order.
  /// Together with the entering cell (i, j) they close the pivot cycle.
  std::vector<std::size_t> path(std::size_t i, std::size_t j) const {
    std::size_t a = static_cast<std::size_t>(m_) + j;
    std::size_t b = i;
    std::vector<std::size_t> from_a, from_b;
    while (depth_[a] > depth_[b]) {
      from_a.push_back(parent_slot_[a]);
      a = parent_[a];
    }
    while (depth_[b] > depth_[a]) {
      from_b.push_back(parent_slot_[b]);
      b = parent_[b];
    }
    while (a != b) {
      from_a.push_back(parent_slot_[a]);
      a = parent_[a];
      from_b.push_back(parent_slot_[b]);
      b = parent_[b];
    }
    from_a.insert(from_a.end(), from_b.rbegin(), from_b.rend());
    return from_a;
  }

 private:
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

  std::size_t flat(IndexPair c) const { return c.i * static_cast<std::size_t>(n_) + c.j; }

  Eigen::Index m_, n_;
  std::vector<IndexPair> cells_;
  std::vector<char> in_basis_;
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> adjacency_;
  std::vector<std::size_t> parent_, parent_slot_, depth_;
};

inline void northwest_corner(const Eigen::VectorXd& row, const Eigen::VectorXd& col, Eigen::MatrixXd& t,
                             TransportBasis& basis) {
  const Eigen::Index m = row.size(), n = col.size();
  Eigen::VectorXd r = row, c = col;
  Eigen::Index i = 0, j = 0;
  while (true) {
    const double amount = std::max(0.0, std::min(r(i), c(j)));
    t(i, j) = amount;
    basis.add({static_cast<std::size_t>(i), static_cast<std::size_t>(j)});
    r(i) -= amount;
    c(j) -= amount;
    if (i == m - 1 && j == n - 1) break;
    // Advance exactly one line so the basis keeps m + n - 1 cells.
    if (i == m - 1 || (j < n - 1 && r(i) > c(j)))
      ++j;
    else
      ++i;
  }
}

inline void minimum_cost(const Eigen::MatrixXd& cost, const Eigen::VectorXd& row, const Eigen::VectorXd& col,
                         Eigen::MatrixXd& t, TransportBasis& basis) {
  const Eigen::Index m = row.size(), n = col.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m * n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  // Row-major flat index; stable sort keeps lexicographic order on equal costs.
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return cost(a / n, a % n) < cost(b / n, b % n);
  });
  Eigen::VectorXd r = row, c = col;
  std::vector<char> row_done(static_cast<std::size_t>(m), 0), col_done(static_cast<std::size_t>(n), 0);
  Eigen::Index rows_left = m, cols_left = n;
  for (const auto flat_index : order) {
    const Eigen::Index i = flat_index / n, j = flat_index % n;
    if (row_done[static_cast<std::size_t>(i)] || col_done[static_cast<std::size_t>(j)]) continue;
    const double amount = std::max(0.0, std::min(r(i), c(j)));
    t(i, j) = amount;
    basis.add({static_cast<std::size_t>(i), static_cast<std::size_t>(j)});
    r(i) -= amount;
    c(j) -= amount;
    if (rows_left == 1 && cols_left == 1) break;
    if (cols_left == 1 || (rows_left > 1 && r(i) <= c(j))) {
      row_done[static_cast<std::size_t>(i)] = 1;
      --rows_left;
    } else {
      col_done[static_cast<std::size_t>(j)] = 1;
      --cols_left;
    }
  }
}

inline void validate_marginals(const MarginalPair& marginals, Eigen::Index m, double feasibility_tol) {
  if (marginals.row.size() != m || marginals.col.size() != m)
    throw InvalidInput("solve_transport: marginal lengths must match the cost matrix size");
  for (const auto* v : {&marginals.row, &marginals.col}) {
    if (!v->allFinite()) throw InvalidInput("solve_transport: non-finite marginal entry");
    if ((v->array() < 0.0).any()) throw InvalidInput("solve_transport: negative marginal entry");
  }
  const double rs = marginals.row.sum(), cs = marginals.col.sum();
  if (std::abs(rs - cs) > feasibility_tol)
    throw Infeasible("solve_transport: row mass " + std::to_string(rs) + " differs from column mass " +
                     std::to_string(cs));
}

}  // namespace detail

/**
 * Minimises sum_ij t_ij cost_ij over nonnegative T with row sums
 * marginals.row and column sums marginals.col.
 *
 * Entering cell: most negative reduced cost, ties to the lowest (i, j). After
 * a run of M consecutive degenerate pivots the entering rule switches to
 * Bland's (first negative in lexicographic order) until progress resumes.
 * Leaving cell: smallest flow on the minus half of the cycle, ties to the
 * lowest (i, j).
 */
inline Coupling solve_transport(const CostMatrix& cost, const MarginalPair& marginals,
                                const TransportOptions& options = {}) {
  const Eigen::MatrixXd& c = cost.entries;
  const Eigen::Index m = c.rows();
  if (m < 1 || c.cols() != m) throw InvalidInput("solve_transport: cost matrix must be square and nonempty");
  if (!c.allFinite()) throw InvalidInput("solve_transport: non-finite cost entry");
  detail::validate_marginals(marginals, m, options.feasibility_tol);

  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(m, m);
  detail::TransportBasis basis(m, m);
  if (options.initialization == Initialization::MinimumCost)
    detail::minimum_cost(c, marginals.row, marginals.col, t, basis);
  else
    detail::northwest_corner(marginals.row, marginals.col, t, basis);

  const double scale = c.cwiseAbs().maxCoeff();
  const double threshold = -options.optimality_tol * (scale > 0.0 ? scale : 1.0);
  const std::size_t pivot_limit = options.pivot_limit_factor * static_cast<std::size_t>(m * m);
  const std::size_t bland_after = static_cast<std::size_t>(m);

  Eigen::VectorXd u, v;
  std::size_t pivots = 0;
  std::size_t degenerate_run = 0;
  while (true) {
    basis.refresh(c, u, v);

    Eigen::Index enter_i = -1, enter_j = -1;
    double best = threshold;
    const bool bland = degenerate_run >= bland_after;
    for (Eigen::Index i = 0; i < m && !(bland && enter_i >= 0); ++i) {
      for (Eigen::Index j = 0; j < m; ++j) {
        const double reduced = c(i, j) - u(i) - v(j);
        if (reduced < best && !basis.contains(i, j)) {
          best = reduced;
          enter_i = i;
          enter_j = j;
          if (bland) break;
        }
      }
    }
    if (enter_i < 0) break;

    if (++pivots > pivot_limit)
      throw NonConvergence("solve_transport: exceeded pivot limit of " + std::to_string(pivot_limit));

    const auto cycle = basis.path(static_cast<std::size_t>(enter_i), static_cast<std::size_t>(enter_j));
    const auto& cells = basis.cells();
    std::size_t leaving = cycle[0];
    for (std::size_t k = 0; k < cycle.size(); k += 2) {
      const auto& cand = cells[cycle[k]];
      const auto& cur = cells[leaving];
      const double tc = t(static_cast<Eigen::Index>(cand.i), static_cast<Eigen::Index>(cand.j));
      const double tl = t(static_cast<Eigen::Index>(cur.i), static_cast<Eigen::Index>(cur.j));
      if (tc < tl || (tc == tl && cand < cur)) leaving = cycle[k];
    }
    const auto out = cells[leaving];
    const double theta = t(static_cast<Eigen::Index>(out.i), static_cast<Eigen::Index>(out.j));

    degenerate_run = theta <= options.degenerate_tol ? degenerate_run + 1 : 0;
    for (std::size_t k = 0; k < cycle.size(); ++k) {
      const auto& cell = cells[cycle[k]];
      double& entry = t(static_cast<Eigen::Index>(cell.i), static_cast<Eigen::Index>(cell.j));
      entry = (k % 2 == 0) ? std::max(0.0, entry - theta) : entry + theta;
    }
    t(static_cast<Eigen::Index>(out.i), static_cast<Eigen::Index>(out.j)) = 0.0;
    t(enter_i, enter_j) = theta;
    basis.replace(leaving, {static_cast<std::size_t>(enter_i), static_cast<std::size_t>(enter_j)});
  }

  Coupling result;
  result.objective = (t.array() * c.array()).sum();
  const double row_max = marginals.row.size() > 0 ? marginals.row.maxCoeff() : 0.0;
  result.support = support_pattern(t, options.support_tol * row_max);
  result.t = std::move(t);
  result.pivots = pivots;
  return result;
}

/**
 * p_ij = t_ij / col_j. A column whose prior weight is exactly zero and which
 * carries no mass maps the member to itself (unit vector e_j); zero prior
 * weight with mass in the column is an error.
 */
inline TransitionMatrix transition_from_coupling(const Coupling& coupling, const Eigen::VectorXd& col_marginal,
                                                 double zero_mass_tol = 1e-14) {
  const Eigen::Index m = coupling.t.rows();
  if (coupling.t.cols() != m || col_marginal.size() != m)
    throw InvalidInput("transition_from_coupling: dimension mismatch");
  Eigen::MatrixXd p(m, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    if (col_marginal(j) > 0.0) {
      p.col(j) = coupling.t.col(j) / col_marginal(j);
      continue;
    }
    if (coupling.t.col(j).sum() > zero_mass_tol)
      throw NumericError("transition_from_coupling: column " + std::to_string(j) +
                         " has zero prior weight but carries mass");
    p.col(j).setZero();
    p(j, j) = 1.0;
  }
  return TransitionMatrix{std::move(p)};
}

/// One support pair (x^f, x^a) of a coupling.
struct SupportPair {
  Eigen::VectorXd prior;
  Eigen::VectorXd posterior;
};

struct MonotonicityReport {
  bool monotone = true;
  /// Largest cycle sum found; negative infinity when no cycle was checked.
  double worst = -std::numeric_limits<double>::infinity();
};

/**
 * Evaluates <a_1, f_2 - f_1> + ... + <a_k, f_1 - f_k> for every cycle of
 * indices into `pairs` and reports whether all sums stay below `tol`.
 */
inline MonotonicityReport check_cyclical_monotonicity(std::span<const SupportPair> pairs,
                                                      std::span<const std::vector<std::size_t>> cycles,
                                                      double tol = 1e-9) {
  if (pairs.empty()) throw InvalidInput("check_cyclical_monotonicity: empty support");
  const auto n = pairs.front().prior.size();
  for (const auto& pr : pairs)
    if (pr.prior.size() != n || pr.posterior.size() != n)
      throw InvalidInput("check_cyclical_monotonicity: dimension mismatch between pair members");

  MonotonicityReport report;
  for (const auto& cycle : cycles) {
    if (cycle.size() < 2) throw InvalidInput("check_cyclical_monotonicity: cycle length must be at least 2");
    double sum = 0.0;
    for (std::size_t k = 0; k < cycle.size(); ++k) {
      const auto a = cycle[k];
      const auto b = cycle[(k + 1) % cycle.size()];
      if (a >= pairs.size() || b >= pairs.size())
        throw InvalidInput("check_cyclical_monotonicity: cycle index out of range");
      sum += pairs[a].posterior.dot(pairs[b].prior - pairs[a].prior);
    }
    report.worst = std::max(report.worst, sum);
    if (sum > tol) report.monotone = false;
  }
  return report;
}

/// Support pairs of a coupling of an ensemble with itself: column j is the
/// prior point, row i the posterior point.
inline std::vector<SupportPair> support_pairs(const Coupling& coupling, const Eigen::MatrixXd& states) {
  std::vector<SupportPair> out;
  out.reserve(coupling.support.size());
  for (const auto& [i, j] : coupling.support)
    out.push_back({states.col(static_cast<Eigen::Index>(j)), states.col(static_cast<Eigen::Index>(i))});
  return out;
}

/// All ordered 2-cycles {a, b}, a < b, over n pairs.
inline std::vector<std::vector<std::size_t>> all_two_cycles(std::size_t n) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b) out.push_back({a, b});
  return out;
}

/// `count` cycles of length `length` with indices drawn uniformly from [0, n).
template <typename Rng>
std::vector<std::vector<std::size_t>> random_cycles(std::size_t n, std::size_t count, std::size_t length, Rng& rng) {
  std::vector<std::vector<std::size_t>> out(count, std::vector<std::size_t>(length));
  for (auto& cycle : out)
    for (auto& idx : cycle) idx = static_cast<std::size_t>(rng() % n);
  return out;
}

}  // namespace otpf
