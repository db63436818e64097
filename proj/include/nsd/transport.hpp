#pragma once

#include <cstddef>

#include "nsd/linalg.hpp"
#include "nsd/scenario_tree.hpp"

namespace nsd {

// Coupling of two discrete probability vectors.
struct TransportPlan {
  Matrix matrix;
  Vector row_marginal;
  Vector col_marginal;
};

// Optimal solution of the discrete transport LP together with its dual.
struct LpSolution {
  double value = 0.0;
  TransportPlan plan;
  Vector dual_row;  // lambda_i
  Vector dual_col;  // mu_j
  std::size_t pivots = 0;
};

// Residuals of the LP optimality certificate.
struct LpCertificate {
  double dual_violation = 0.0;         // max_ij (lambda_i + mu_j - c_ij), clipped at 0
  double slackness_violation = 0.0;    // max |lambda_i + mu_j - c_ij| over plan entries > 1e-12
  double duality_gap = 0.0;            // |p.lambda + q.mu - value|
  double marginal_violation = 0.0;
  double min_entry = 0.0;
};

// Throws std::invalid_argument unless v is strictly positive and sums to 1 within 1e-12.
void require_probability_vector(const Vector& v, const char* name);

// max(||plan 1 - p||_inf, ||plan^T 1 - q||_inf)
double marginal_violation(const Matrix& plan, const Vector& p, const Vector& q);

// Transportation simplex: north-west-corner start, Bland's rule for both the
// entering cell (lowest row-major index with negative reduced cost) and the
// leaving cell (lowest index among ratio-test ties). Duals come from the
// final basis with lambda_0 = 0.
LpSolution solve_transport_lp(const Vector& p, const Vector& q, const Matrix& cost);

LpCertificate certify(const LpSolution& solution, const Matrix& cost);

// Plain Wasserstein distance between the leaf distributions, ignoring the filtrations.
double wasserstein_distance(const ScenarioTree& a, const ScenarioTree& b, double r);

}  // namespace nsd
