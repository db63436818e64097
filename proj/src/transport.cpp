#include "nsd/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <fmt/format.h>

namespace nsd {
namespace {

using Index = Eigen::Index;

// Basis of the transportation problem as a spanning tree on m + n vertices:
// rows are 0..m-1, columns m..m+n-1, each basic cell is an edge.
class TransportBasis {
 public:
  TransportBasis(Index m, Index n)
      : m_(m), n_(n), basic_(static_cast<std::size_t>(m * n), false), adj_(static_cast<std::size_t>(m + n)) {}

  bool is_basic(Index i, Index j) const { return basic_[cell(i, j)]; }

  void add(Index i, Index j) {
    basic_[cell(i, j)] = true;
    adj_[static_cast<std::size_t>(i)].push_back(m_ + j);
    adj_[static_cast<std::size_t>(m_ + j)].push_back(i);
  }

  void remove(Index i, Index j) {
    basic_[cell(i, j)] = false;
    auto drop = [](std::vector<Index>& list, Index v) { list.erase(std::find(list.begin(), list.end(), v)); };
    drop(adj_[static_cast<std::size_t>(i)], m_ + j);
    drop(adj_[static_cast<std::size_t>(m_ + j)], i);
  }

  // u_i + v_j = c_ij on basic cells, u_0 = 0.
  void potentials(const Matrix& cost, Vector& u, Vector& v) const {
    std::vector<bool> seen(static_cast<std::size_t>(m_ + n_), false);
    std::vector<Index> queue{0};
    seen[0] = true;
    u[0] = 0.0;
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const Index x = queue[head];
      for (Index y : adj_[static_cast<std::size_t>(x)]) {
        if (seen[static_cast<std::size_t>(y)]) continue;
        seen[static_cast<std::size_t>(y)] = true;
        if (x < m_) {
          v[y - m_] = cost(x, y - m_) - u[x];
        } else {
          u[y] = cost(y, x - m_) - v[x - m_];
        }
        queue.push_back(y);
      }
    }
    if (queue.size() != static_cast<std::size_t>(m_ + n_))
      throw std::logic_error("transportation basis is not a spanning tree");
  }

  // Vertices on the tree path from column j to row i, both inclusive.
  std::vector<Index> path(Index from_col, Index to_row) const {
    const Index start = m_ + from_col;
    std::vector<Index> parent(static_cast<std::size_t>(m_ + n_), -1);
    std::vector<Index> queue{start};
    parent[static_cast<std::size_t>(start)] = start;
    for (std::size_t head = 0; head < queue.size() && parent[static_cast<std::size_t>(to_row)] < 0; ++head) {
      const Index x = queue[head];
      for (Index y : adj_[static_cast<std::size_t>(x)]) {
        if (parent[static_cast<std::size_t>(y)] >= 0) continue;
        parent[static_cast<std::size_t>(y)] = x;
        queue.push_back(y);
      }
    }
    std::vector<Index> out;
    for (Index x = to_row; x != start; x = parent[static_cast<std::size_t>(x)]) out.push_back(x);
    out.push_back(start);
    std::reverse(out.begin(), out.end());
    return out;
  }

  Index rows() const { return m_; }

 private:
  std::size_t cell(Index i, Index j) const { return static_cast<std::size_t>(i * n_ + j); }

  Index m_;
  Index n_;
  std::vector<bool> basic_;
  std::vector<std::vector<Index>> adj_;
};

}  // namespace

void require_probability_vector(const Vector& v, const char* name) {
  if (v.size() == 0) throw std::invalid_argument(fmt::format("{} is empty", name));
  for (Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i]) || v[i] <= 0.0)
      throw std::invalid_argument(fmt::format("{} has nonpositive entry {} at {}", name, v[i], i));
  }
  const double sum = v.sum();
  if (std::abs(sum - 1.0) > 1e-12)
    throw std::invalid_argument(fmt::format("{} sums to {:.17g}, not 1", name, sum));
}

double marginal_violation(const Matrix& plan, const Vector& p, const Vector& q) {
  const double rows = (plan.rowwise().sum() - p).cwiseAbs().maxCoeff();
  const double cols = (plan.colwise().sum().transpose() - q).cwiseAbs().maxCoeff();
  return std::max(rows, cols);
}

LpSolution solve_transport_lp(const Vector& p, const Vector& q, const Matrix& cost) {
  require_probability_vector(p, "row marginal");
  require_probability_vector(q, "column marginal");
  const Index m = p.size();
  const Index n = q.size();
  if (cost.rows() != m || cost.cols() != n)
    throw std::invalid_argument(
        fmt::format("cost is {}x{} but marginals are {} and {}", cost.rows(), cost.cols(), m, n));
  if (!cost.allFinite()) throw std::invalid_argument("cost matrix has non-finite entries");

  Matrix flow = Matrix::Zero(m, n);
  TransportBasis basis(m, n);

  // North-west corner: a staircase of m + n - 1 cells, zero-flow cells kept
  // where supply and demand run out together.
  {
    Vector supply = p;
    Vector demand = q;
    Index i = 0;
    Index j = 0;
    for (;;) {
      const double x = std::min(supply[i], demand[j]);
      flow(i, j) = x;
      basis.add(i, j);
      supply[i] -= x;
      demand[j] -= x;
      if (i == m - 1 && j == n - 1) break;
      if (i == m - 1) {
        ++j;
      } else if (j == n - 1) {
        ++i;
      } else if (supply[i] <= demand[j]) {
        ++i;
      } else {
        ++j;
      }
    }
  }

  const double scale = std::max(1.0, cost.cwiseAbs().maxCoeff());
  const double price_tol = 1e-12 * scale;
  Vector u(m);
  Vector v(n);
  LpSolution sol;

  const std::size_t pivot_limit = 1000000 + static_cast<std::size_t>(100 * m * n);
  for (;;) {
    basis.potentials(cost, u, v);

    Index enter_i = -1;
    Index enter_j = -1;
    for (Index i = 0; i < m && enter_i < 0; ++i) {
      for (Index j = 0; j < n; ++j) {
        if (basis.is_basic(i, j)) continue;
        if (cost(i, j) - u[i] - v[j] < -price_tol) {
          enter_i = i;
          enter_j = j;
          break;
        }
      }
    }
    if (enter_i < 0) break;
    if (++sol.pivots > pivot_limit) throw std::logic_error("transportation simplex failed to terminate");

    // Path col j -> ... -> row i. Edge k on the path gets sign - for even k.
    const auto verts = basis.path(enter_j, enter_i);
    struct Edge {
      Index i, j;
      bool minus;
    };
    std::vector<Edge> edges;
    for (std::size_t k = 0; k + 1 < verts.size(); ++k) {
      const Index a = verts[k];
      const Index b = verts[k + 1];
      const Index row = a < m ? a : b;
      const Index col = (a < m ? b : a) - m;
      edges.push_back({row, col, k % 2 == 0});
    }

    double theta = std::numeric_limits<double>::infinity();
    for (const auto& e : edges)
      if (e.minus) theta = std::min(theta, flow(e.i, e.j));
    const Edge* leaving = nullptr;
    for (const auto& e : edges) {
      if (!e.minus || flow(e.i, e.j) > theta) continue;
      if (!leaving || e.i * n + e.j < leaving->i * n + leaving->j) leaving = &e;
    }

    for (const auto& e : edges) {
      double& f = flow(e.i, e.j);
      f = e.minus ? std::max(0.0, f - theta) : f + theta;
    }
    flow(enter_i, enter_j) = theta;
    flow(leaving->i, leaving->j) = 0.0;
    basis.remove(leaving->i, leaving->j);
    basis.add(enter_i, enter_j);
  }

  sol.plan.matrix = std::move(flow);
  sol.plan.row_marginal = p;
  sol.plan.col_marginal = q;
  sol.value = sol.plan.matrix.cwiseProduct(cost).sum();
  sol.dual_row = std::move(u);
  sol.dual_col = std::move(v);
  return sol;
}

LpCertificate certify(const LpSolution& solution, const Matrix& cost) {
  LpCertificate cert;
  const Matrix& plan = solution.plan.matrix;
  for (Index i = 0; i < cost.rows(); ++i) {
    for (Index j = 0; j < cost.cols(); ++j) {
      const double slack = solution.dual_row[i] + solution.dual_col[j] - cost(i, j);
      cert.dual_violation = std::max(cert.dual_violation, slack);
      if (plan(i, j) > 1e-12) cert.slackness_violation = std::max(cert.slackness_violation, std::abs(slack));
    }
  }
  const double dual_value =
      solution.plan.row_marginal.dot(solution.dual_row) + solution.plan.col_marginal.dot(solution.dual_col);
  cert.duality_gap = std::abs(dual_value - solution.value);
  cert.marginal_violation = marginal_violation(plan, solution.plan.row_marginal, solution.plan.col_marginal);
  cert.min_entry = plan.minCoeff();
  return cert;
}

double wasserstein_distance(const ScenarioTree& a, const ScenarioTree& b, double r) {
  const Matrix cost = cost_matrix(a, b, r);
  const auto sol = solve_transport_lp(leaf_probabilities(a), leaf_probabilities(b), cost);
  return r == 1.0 ? sol.value : std::pow(sol.value, 1.0 / r);
}

}  // namespace nsd
