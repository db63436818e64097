#include "nsd/nested.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

#include <fmt/format.h>

#include "nsd/parallel.hpp"
#include "nsd/simplex.hpp"

namespace nsd {
namespace {

using Index = Eigen::Index;

Index ix(std::size_t v) { return static_cast<Index>(v); }

double signed_root(double x, double r) {
  if (r == 1.0) return x;
  return std::copysign(std::pow(std::abs(x), 1.0 / r), x);
}

void require_same_height(const ScenarioTree& a, const ScenarioTree& b) {
  if (a.height() != b.height())
    throw std::invalid_argument(fmt::format("trees have different heights ({} vs {})", a.height(), b.height()));
}

Vector child_probs(const ScenarioTree& tree, std::size_t node) {
  const auto kids = tree.children(node);
  Vector p(ix(kids.size()));
  for (std::size_t k = 0; k < kids.size(); ++k) p[ix(k)] = tree.cond_prob(kids[k]);
  return p;
}

using SubproblemSolver = std::function<ConditionalSolution(const Vector&, const Vector&, const Matrix&)>;

// Backward pass shared by both methods, then the forward composition of the
// conditional plans into a leaf-level coupling.
NestedResult run_recursion(const ScenarioTree& a, const ScenarioTree& b, double r, unsigned threads,
                           const SubproblemSolver& solve) {
  require_same_height(a, b);
  if (!(r >= 1.0)) throw std::invalid_argument(fmt::format("order r must be >= 1, got {}", r));
  const int T = a.height();

  NestedResult out;
  out.r = r;
  out.leaf_cost = cost_matrix(a, b, r);
  out.stage_tables.resize(static_cast<std::size_t>(T));

  Matrix next_values = out.leaf_cost;
  for (int t = T - 1; t >= 0; --t) {
    const auto nodes_a = a.stage_nodes(t);
    const auto nodes_b = b.stage_nodes(t);
    StageTable& table = out.stage_tables[static_cast<std::size_t>(t)];
    table.stage = t;
    table.cols = nodes_b.size();
    table.entries.resize(nodes_a.size() * nodes_b.size());

    parallel_for(
        table.entries.size(),
        [&](std::size_t k) {
          const std::size_t na = nodes_a[k / table.cols];
          const std::size_t nb = nodes_b[k % table.cols];
          const auto kids_a = a.children(na);
          const auto kids_b = b.children(nb);
          Matrix cost(ix(kids_a.size()), ix(kids_b.size()));
          for (std::size_t x = 0; x < kids_a.size(); ++x)
            for (std::size_t y = 0; y < kids_b.size(); ++y)
              cost(ix(x), ix(y)) = next_values(ix(a.stage_position(kids_a[x])), ix(b.stage_position(kids_b[y])));
          ConditionalSolution sol = solve(child_probs(a, na), child_probs(b, nb), cost);
          sol.node_a = na;
          sol.node_b = nb;
          table.entries[k] = std::move(sol);
        },
        threads);

    Matrix values(ix(nodes_a.size()), ix(nodes_b.size()));
    for (std::size_t k = 0; k < table.entries.size(); ++k) {
      const auto& e = table.entries[k];
      values(ix(k / table.cols), ix(k % table.cols)) = e.value;
      out.converged = out.converged && e.converged;
      out.total_iterations += e.iterations;
    }
    out.subproblems += table.entries.size();
    next_values = std::move(values);
  }
  out.entropic_power = next_values(0, 0);

  // Forward composition: mass of a child pair = mass of its parent pair times
  // the conditional plan entry.
  Matrix mass = Matrix::Ones(1, 1);
  for (int t = 0; t < T; ++t) {
    const auto& table = out.stage_tables[static_cast<std::size_t>(t)];
    Matrix next = Matrix::Zero(ix(a.stage_nodes(t + 1).size()), ix(b.stage_nodes(t + 1).size()));
    for (const auto& e : table.entries) {
      const double m = mass(ix(a.stage_position(e.node_a)), ix(b.stage_position(e.node_b)));
      const auto kids_a = a.children(e.node_a);
      const auto kids_b = b.children(e.node_b);
      for (std::size_t x = 0; x < kids_a.size(); ++x)
        for (std::size_t y = 0; y < kids_b.size(); ++y)
          next(ix(a.stage_position(kids_a[x])), ix(b.stage_position(kids_b[y]))) = m * e.plan(ix(x), ix(y));
    }
    mass = std::move(next);
  }
  out.composed_plan = TransportPlan{std::move(mass), leaf_probabilities(a), leaf_probabilities(b)};
  out.cost_power = out.composed_plan.matrix.cwiseProduct(out.leaf_cost).sum();
  out.total_entropy = entropy(out.composed_plan.matrix);
  return out;
}

// Mass of a rectangle of leaf pairs. Summed directly: prefix-sum differences
// cancel catastrophically on the tiny blocks that large lambda produces.
class BlockSums {
 public:
  explicit BlockSums(const Matrix& plan) : plan_(plan) {}

  double operator()(std::pair<std::size_t, std::size_t> rows, std::pair<std::size_t, std::size_t> cols) const {
    return plan_.block(ix(rows.first), ix(cols.first), ix(rows.second - rows.first), ix(cols.second - cols.first))
        .sum();
  }

 private:
  const Matrix& plan_;
};

void require_converged_sinkhorn(const NestedResult& result) {
  if (result.method != NestedMethod::kSinkhorn || !result.lambda)
    throw std::invalid_argument("expected a nested Sinkhorn result");
  if (!result.converged) throw std::invalid_argument("nested Sinkhorn result did not converge");
}

}  // namespace

NestedResult nested_exact(const ScenarioTree& a, const ScenarioTree& b, double r, const NestedOptions& options) {
  NestedResult out = run_recursion(a, b, r, options.threads, [](const Vector& p, const Vector& q, const Matrix& cost) {
    LpSolution lp = solve_transport_lp(p, q, cost);
    ConditionalSolution sol;
    sol.plan = std::move(lp.plan.matrix);
    sol.value = lp.value;
    sol.dual_row = std::move(lp.dual_row);
    sol.dual_col = std::move(lp.dual_col);
    sol.iterations = static_cast<int>(lp.pivots);
    return sol;
  });
  out.method = NestedMethod::kExact;
  out.value = signed_root(out.entropic_power, r);
  out.value_with_entropy = out.value;
  return out;
}

NestedResult nested_sinkhorn(const ScenarioTree& a, const ScenarioTree& b, double r, double lambda,
                             const NestedOptions& options) {
  if (!(lambda > 0.0) || !std::isfinite(lambda))
    throw std::invalid_argument(fmt::format("lambda must be positive, got {}", lambda));
  SinkhornOptions sub = options.sinkhorn;
  sub.tol /= std::max(1, a.height());

  NestedResult out =
      run_recursion(a, b, r, options.threads, [&](const Vector& p, const Vector& q, const Matrix& cost) {
        SinkhornResult sink = sinkhorn_auto(p, q, cost, lambda, sub);
        const DualCertificate duals = dual_from_scalings(sink);
        ConditionalSolution sol;
        sol.value = sink.de_s;
        sol.plan = std::move(sink.plan.matrix);
        sol.dual_row = duals.beta;
        sol.dual_col = duals.gamma;
        sol.iterations = sink.iterations;
        sol.converged = sink.converged;
        return sol;
      });
  out.method = NestedMethod::kSinkhorn;
  out.lambda = lambda;
  out.value = signed_root(out.cost_power, r);
  out.value_with_entropy = signed_root(out.entropic_power, r);
  return out;
}

FlatNestedSolution flat_nested_lp(const ScenarioTree& a, const ScenarioTree& b, double r, std::size_t max_leaves) {
  require_same_height(a, b);
  const std::size_t n = a.leaf_count();
  const std::size_t m = b.leaf_count();
  if (n > max_leaves || m > max_leaves)
    throw std::length_error(
        fmt::format("flat nested LP capped at {} leaves per tree, got {} and {}", max_leaves, n, m));

  const Matrix cost = cost_matrix(a, b, r);
  const std::size_t vars = n * m;

  // One row per stage node pair and per successor except the last one of
  // each group (the group sums to the pair's own mass).
  std::vector<Vector> rows;
  auto add_rows = [&](const ScenarioTree& split, std::size_t split_node, std::pair<std::size_t, std::size_t> other,
                      bool split_is_a) {
    const auto kids = split.children(split_node);
    const auto block = split.leaf_range(split_node);
    for (std::size_t k = 0; k + 1 < kids.size(); ++k) {
      const auto inner = split.leaf_range(kids[k]);
      const double prob = split.cond_prob(kids[k]);
      Vector row = Vector::Zero(ix(vars));
      for (std::size_t s = block.first; s < block.second; ++s) {
        const double coef = (s >= inner.first && s < inner.second ? 1.0 : 0.0) - prob;
        for (std::size_t o = other.first; o < other.second; ++o) {
          const std::size_t i = split_is_a ? s : o;
          const std::size_t j = split_is_a ? o : s;
          row[ix(i * m + j)] = coef;
        }
      }
      rows.push_back(std::move(row));
    }
  };
  for (int t = 0; t < a.height(); ++t) {
    for (auto na : a.stage_nodes(t)) {
      for (auto nb : b.stage_nodes(t)) {
        add_rows(a, na, b.leaf_range(nb), true);
        add_rows(b, nb, a.leaf_range(na), false);
      }
    }
  }

  LinearProgram lp;
  lp.A = Matrix::Zero(ix(rows.size() + 1), ix(vars));
  lp.b = Vector::Zero(ix(rows.size() + 1));
  for (std::size_t k = 0; k < rows.size(); ++k) lp.A.row(ix(k)) = rows[k].transpose();
  lp.A.row(ix(rows.size())).setOnes();
  lp.b[ix(rows.size())] = 1.0;
  lp.c.resize(ix(vars));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) lp.c[ix(i * m + j)] = cost(ix(i), ix(j));

  const LpResult res = solve_lp(lp);
  if (res.status != LpStatus::kOptimal)
    throw std::logic_error("flat nested LP is not optimal; the product coupling is always feasible");

  FlatNestedSolution out;
  out.power_value = res.value;
  out.value = signed_root(res.value, r);
  out.constraints = rows.size() + 1;
  out.plan.resize(ix(n), ix(m));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.plan(ix(i), ix(j)) = res.x[ix(i * m + j)];
  return out;
}

double conditional_constraint_residual(const ScenarioTree& a, const ScenarioTree& b, const Matrix& plan) {
  require_same_height(a, b);
  if (plan.rows() != ix(a.leaf_count()) || plan.cols() != ix(b.leaf_count()))
    throw std::invalid_argument("plan dimensions do not match the trees");
  const BlockSums block(plan);
  double worst = std::max(std::abs(plan.sum() - 1.0), std::max(0.0, -plan.minCoeff()));
  for (int t = 0; t < a.height(); ++t) {
    for (auto na : a.stage_nodes(t)) {
      for (auto nb : b.stage_nodes(t)) {
        const auto range_a = a.leaf_range(na);
        const auto range_b = b.leaf_range(nb);
        const double mass = block(range_a, range_b);
        for (auto child : a.children(na))
          worst = std::max(worst, std::abs(block(a.leaf_range(child), range_b) - a.cond_prob(child) * mass));
        for (auto child : b.children(nb))
          worst = std::max(worst, std::abs(block(range_a, b.leaf_range(child)) - b.cond_prob(child) * mass));
      }
    }
  }
  return worst;
}

CheckReport verify_entropic_equivalence(const ScenarioTree& a, const ScenarioTree& b, double r, double lambda,
                                        const NestedResult& result) {
  require_converged_sinkhorn(result);
  require_same_height(a, b);
  if (std::abs(*result.lambda - lambda) > 0.0 || result.r != r)
    throw std::invalid_argument("result was computed with different parameters");

  const Matrix& plan = result.composed_plan.matrix;
  const Matrix& leaf_cost = result.leaf_cost;
  CheckReport report;

  report.add("composed plan satisfies the conditional constraints", conditional_constraint_residual(a, b, plan),
             kFeasibilityTol);

  const double flat_objective = plan.cwiseProduct(leaf_cost).sum() - entropy(plan) / lambda;
  report.add("flat entropic objective equals the recursive value", std::abs(flat_objective - result.entropic_power),
             kObjectiveTol);

  // log pi_ij rebuilt stage by stage from beta, gamma and the child-pair costs.
  const int T = a.height();
  Matrix potential = Matrix::Zero(1, 1);
  for (int t = 0; t < T; ++t) {
    const auto& table = result.stage_tables[static_cast<std::size_t>(t)];
    Matrix next = Matrix::Zero(ix(a.stage_nodes(t + 1).size()), ix(b.stage_nodes(t + 1).size()));
    for (const auto& e : table.entries) {
      const double base = potential(ix(a.stage_position(e.node_a)), ix(b.stage_position(e.node_b)));
      const auto kids_a = a.children(e.node_a);
      const auto kids_b = b.children(e.node_b);
      for (std::size_t x = 0; x < kids_a.size(); ++x) {
        for (std::size_t y = 0; y < kids_b.size(); ++y) {
          const std::size_t pa = a.stage_position(kids_a[x]);
          const std::size_t pb = b.stage_position(kids_b[y]);
          const double child_cost =
              t + 1 == T ? leaf_cost(ix(pa), ix(pb)) : result.stage_tables[static_cast<std::size_t>(t + 1)].at(pa, pb).value;
          next(ix(pa), ix(pb)) =
              base + lambda * (e.dual_row[ix(x)] + e.dual_col[ix(y)]) - 1.0 - lambda * child_cost;
        }
      }
    }
    potential = std::move(next);
  }
  double gibbs_error = 0.0;
  for (Index i = 0; i < plan.rows(); ++i) {
    for (Index j = 0; j < plan.cols(); ++j) {
      if (plan(i, j) > 0.0) {
        gibbs_error = std::max(gibbs_error, std::abs(std::log(plan(i, j)) - potential(i, j)));
      } else if (potential(i, j) > std::log(std::numeric_limits<double>::denorm_min())) {
        gibbs_error = std::numeric_limits<double>::infinity();
      }
    }
  }
  report.add("composed plan has the stagewise Gibbs form", gibbs_error, kGibbsTol);
  return report;
}

NestedBoundReport nested_bound_report(const ScenarioTree& a, const ScenarioTree& b, double r, double lambda,
                                      const NestedOptions& options) {
  const NestedResult exact = nested_exact(a, b, r, options);
  const NestedResult sink = nested_sinkhorn(a, b, r, lambda, options);

  NestedBoundReport out;
  out.nd_w = exact.cost_power;
  out.nd_s = sink.cost_power;
  out.nde_s = sink.entropic_power;
  out.entropy_s = sink.total_entropy;
  out.entropy_w = exact.total_entropy;
  const double m_a = static_cast<double>(a.max_branching());
  const double m_b = static_cast<double>(b.max_branching());
  out.stage_bound = a.height() * (std::log(m_a) + std::log(m_b)) / lambda;

  const double n_a = static_cast<double>(a.leaf_count());
  const double n_b = static_cast<double>(b.leaf_count());
  auto& c = out.checks;
  c.add("nde_S <= nd_W", out.nde_s, out.nd_w, kBoundSlack);
  c.add("nd_W <= nd_S", out.nd_w, out.nd_s, kBoundSlack);
  c.add("nd_S - nd_W <= (H(pi_S) - H(pi_W))/lambda", out.nd_s - out.nd_w, (out.entropy_s - out.entropy_w) / lambda,
        kBoundSlack);
  c.add("nd_W - nde_S <= H(pi_S)/lambda", out.nd_w - out.nde_s, out.entropy_s / lambda, kBoundSlack);
  c.add("H(pi_S) <= log n + log n~", out.entropy_s, std::log(n_a) + std::log(n_b), kBoundSlack);
  c.add("max gap <= T (log m + log m~)/lambda", std::max(out.nd_s - out.nd_w, out.nd_w - out.nde_s), out.stage_bound,
        kBoundSlack);
  if (!sink.converged) c.add("nested Sinkhorn converged", 1.0, 0.0);
  return out;
}

MartingaleReport martingale_check(const ScenarioTree& a, const ScenarioTree& b, const NestedResult& result) {
  require_converged_sinkhorn(result);
  require_same_height(a, b);
  const int T = a.height();
  MartingaleReport report;
  const BlockSums block(result.composed_plan.matrix);

  Matrix level = Matrix::Zero(1, 1);
  if (T > 0) {
    const auto& root = result.stage_tables.front().entries.front();
    if (root.dual_row.size() == 0 || root.dual_col.size() == 0)
      throw std::invalid_argument("result carries no conditional multipliers");
    level(0, 0) = child_probs(a, root.node_a).dot(root.dual_row) + child_probs(b, root.node_b).dot(root.dual_col);
  }
  report.m0 = level(0, 0);

  for (int t = 0; t < T; ++t) {
    const auto& table = result.stage_tables[static_cast<std::size_t>(t)];
    Matrix next = Matrix::Zero(ix(a.stage_nodes(t + 1).size()), ix(b.stage_nodes(t + 1).size()));
    for (const auto& e : table.entries) {
      const Vector p = child_probs(a, e.node_a);
      const Vector q = child_probs(b, e.node_b);
      if (e.dual_row.size() != p.size() || e.dual_col.size() != q.size())
        throw std::invalid_argument("result carries no conditional multipliers");
      const Vector beta_hat = e.dual_row.array() - p.dot(e.dual_row);
      const Vector gamma_hat = e.dual_col.array() - q.dot(e.dual_col);
      report.max_projection_residual =
          std::max({report.max_projection_residual, std::abs(p.dot(beta_hat)), std::abs(q.dot(gamma_hat))});

      const double current = level(ix(a.stage_position(e.node_a)), ix(b.stage_position(e.node_b)));
      const auto kids_a = a.children(e.node_a);
      const auto kids_b = b.children(e.node_b);
      const double pair_mass = block(a.leaf_range(e.node_a), b.leaf_range(e.node_b));
      double expectation = 0.0;
      for (std::size_t x = 0; x < kids_a.size(); ++x) {
        for (std::size_t y = 0; y < kids_b.size(); ++y) {
          const double value = current + beta_hat[ix(x)] + gamma_hat[ix(y)];
          next(ix(a.stage_position(kids_a[x])), ix(b.stage_position(kids_b[y]))) = value;
          expectation += block(a.leaf_range(kids_a[x]), b.leaf_range(kids_b[y])) * value;
        }
      }
      if (pair_mass > 0.0)
        report.max_martingale_residual =
            std::max(report.max_martingale_residual, std::abs(expectation / pair_mass - current));
    }
    level = std::move(next);
  }
  report.passed =
      report.max_martingale_residual <= kMartingaleTol && report.max_projection_residual <= kProjectionTol;
  return report;
}

std::vector<SweepRow> lambda_sweep(const ScenarioTree& a, const ScenarioTree& b, double r,
                                   const std::vector<double>& lambdas, const NestedOptions& options) {
  for (double l : lambdas)
    if (!(l > 0.0)) throw std::invalid_argument(fmt::format("lambda must be positive, got {}", l));
  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();
  const NestedResult exact = nested_exact(a, b, r, options);
  const double seconds_exact = std::chrono::duration<double>(Clock::now() - t0).count();

  std::vector<SweepRow> rows;
  for (double l : lambdas) {
    const auto t1 = Clock::now();
    const NestedResult sink = nested_sinkhorn(a, b, r, l, options);
    SweepRow row;
    row.seconds_sinkhorn = std::chrono::duration<double>(Clock::now() - t1).count();
    row.seconds_exact = seconds_exact;
    row.lambda = l;
    row.nd_s = sink.value;
    row.nde_s = sink.value_with_entropy;
    row.nd_w = exact.value;
    row.iterations = sink.total_iterations;
    row.converged = sink.converged;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace nsd
