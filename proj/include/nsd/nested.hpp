#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "nsd/check.hpp"
#include "nsd/linalg.hpp"
#include "nsd/scenario_tree.hpp"
#include "nsd/sinkhorn.hpp"
#include "nsd/transport.hpp"

namespace nsd {

enum class NestedMethod { kExact, kSinkhorn };

// Solution of the transport subproblem between the successors of one node
// pair (a, b) at stage t.
struct ConditionalSolution {
  std::size_t node_a = 0;
  std::size_t node_b = 0;
  Matrix plan;      // children(a) x children(b), conditional probabilities
  double value = 0.0;  // r-th power domain; entropic objective for kSinkhorn
  Vector dual_row;  // LP duals, or beta for the entropic problem
  Vector dual_col;  // LP duals, or gamma
  int iterations = 0;
  bool converged = true;
};

// All node pairs of one stage, indexed by their stage positions.
struct StageTable {
  int stage = 0;
  std::size_t cols = 0;  // number of stage nodes in tree b
  std::vector<ConditionalSolution> entries;

  const ConditionalSolution& at(std::size_t pos_a, std::size_t pos_b) const { return entries[pos_a * cols + pos_b]; }
};

struct NestedOptions {
  SinkhornOptions sinkhorn;  // tol is split evenly across the stages
  unsigned threads = 0;      // 0: resolve_threads default
};

// Backward recursion over the two filtrations. The recursion runs on r-th
// powers; `value` and `value_with_entropy` are the roots taken once at the
// end (signed root for a negative entropic value).
struct NestedResult {
  NestedMethod method = NestedMethod::kExact;
  double r = 1.0;
  std::optional<double> lambda;
  double value = 0.0;
  double value_with_entropy = 0.0;
  double cost_power = 0.0;      // sum pi_ij d_ij^r on the composed plan
  double entropic_power = 0.0;  // root value of the recursion
  double total_entropy = 0.0;   // H(composed plan)
  std::vector<StageTable> stage_tables;  // t = 0 .. T-1
  TransportPlan composed_plan;
  Matrix leaf_cost;  // d_ij^r
  bool converged = true;
  long total_iterations = 0;
  std::size_t subproblems = 0;
};

NestedResult nested_exact(const ScenarioTree& a, const ScenarioTree& b, double r, const NestedOptions& options = {});

NestedResult nested_sinkhorn(const ScenarioTree& a, const ScenarioTree& b, double r, double lambda,
                             const NestedOptions& options = {});

struct FlatNestedSolution {
  double value = 0.0;        // r-th root of the optimum
  double power_value = 0.0;  // optimum of the linear program
  Matrix plan;
  std::size_t constraints = 0;
};

// Default cap on the leaf count of either tree for the monolithic program.
inline constexpr std::size_t kFlatLpMaxLeaves = 200;

// The nested distance as one linear program over leaf pairs, with the
// conditional-marginal constraints written in cross-multiplied linear form for
// immediate successors. Solved with the generic dense simplex. Throws
// std::length_error above `max_leaves`.
FlatNestedSolution flat_nested_lp(const ScenarioTree& a, const ScenarioTree& b, double r,
                                  std::size_t max_leaves = kFlatLpMaxLeaves);

// Largest violation of the flat nested constraints by a leaf-level plan,
// including total mass and nonnegativity.
double conditional_constraint_residual(const ScenarioTree& a, const ScenarioTree& b, const Matrix& plan);

inline constexpr double kFeasibilityTol = 1e-7;
inline constexpr double kObjectiveTol = 1e-7;
inline constexpr double kGibbsTol = 1e-6;

// Checks that the recursive entropic solution solves the flat entropic
// program: constraint feasibility, equal objective, and the Gibbs form of the
// composed plan rebuilt from the stored multipliers.
CheckReport verify_entropic_equivalence(const ScenarioTree& a, const ScenarioTree& b, double r, double lambda,
                                        const NestedResult& result);

struct NestedBoundReport {
  CheckReport checks;
  double nd_w = 0.0;  // r-th powers
  double nd_s = 0.0;
  double nde_s = 0.0;
  double entropy_s = 0.0;
  double entropy_w = 0.0;
  double stage_bound = 0.0;  // T (log m + log m~) / lambda
};

NestedBoundReport nested_bound_report(const ScenarioTree& a, const ScenarioTree& b, double r, double lambda,
                                      const NestedOptions& options = {});

inline constexpr double kMartingaleTol = 1e-6;
inline constexpr double kProjectionTol = 1e-8;

struct MartingaleReport {
  double max_martingale_residual = 0.0;
  double max_projection_residual = 0.0;
  double m0 = 0.0;  // dual value of the root subproblem
  bool passed = false;
};

// Builds M_t from the centred conditional multipliers and checks
// E[M_{t+1} | node pair at t] = M_t under the composed plan.
MartingaleReport martingale_check(const ScenarioTree& a, const ScenarioTree& b, const NestedResult& result);

struct SweepRow {
  double lambda = 0.0;
  double nd_s = 0.0;
  double nde_s = 0.0;
  double nd_w = 0.0;
  double seconds_exact = 0.0;
  double seconds_sinkhorn = 0.0;
  long iterations = 0;
  bool converged = true;
};

std::vector<SweepRow> lambda_sweep(const ScenarioTree& a, const ScenarioTree& b, double r,
                                   const std::vector<double>& lambdas, const NestedOptions& options = {});

}  // namespace nsd
