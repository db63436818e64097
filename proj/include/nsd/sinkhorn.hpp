#pragma once

#include <cmath>

#include "nsd/check.hpp"
#include "nsd/linalg.hpp"
#include "nsd/transport.hpp"

namespace nsd {

struct SinkhornOptions {
  double tol = 1e-9;
  int max_iter = 100000;
};

// Regularized plan diag(b) K diag(g) with K = exp(-lambda * cost).
// Scalings are kept as logarithms so that the log-domain solver can report
// them even when exp() would over- or underflow.
struct SinkhornResult {
  TransportPlan plan;
  Vector log_scaling_row;  // log b~, gauge max_i b~_i = 1
  Vector log_scaling_col;  // log g~
  double d_s = 0.0;        // sum pi_ij c_ij
  double entropy = 0.0;    // H(pi)
  double de_s = 0.0;       // d_s - entropy / lambda
  double lambda = 0.0;
  int iterations = 0;
  double marginal_error = 0.0;
  bool converged = false;
  bool stabilized = false;

  Vector scaling_row() const { return log_scaling_row.unaryExpr([](double x) { return std::exp(x); }); }
  Vector scaling_col() const { return log_scaling_col.unaryExpr([](double x) { return std::exp(x); }); }
};

// Dual variables of the entropic problem recovered from the scalings.
struct DualCertificate {
  Vector beta;
  Vector gamma;
  double dual_value = 0.0;  // p.beta + q.gamma
};

struct CertificateResiduals {
  double max_constraint_excess = 0.0;  // max_ij (beta_i + gamma_j - c_ij - 1/lambda), clipped at 0
  double normalization_error = 0.0;    // |sum_ij exp(-lambda (c_ij - beta_i - gamma_j) - 1) - 1|
};

// exp(-lambda * cost), entry-wise.
Matrix gibbs_kernel(const Matrix& cost, double lambda);

// Alternating scaling starting from g~ = 1 until the infinity-norm marginal
// violation is at most tol. Throws std::domain_error if a kernel row or
// column underflows to zero.
SinkhornResult sinkhorn(const Vector& p, const Vector& q, const Matrix& cost, double lambda,
                        const SinkhornOptions& options = {});

// Same fixed point, iterated on log-scalings with log-sum-exp reductions.
SinkhornResult sinkhorn_stabilized(const Vector& p, const Vector& q, const Matrix& cost, double lambda,
                                   const SinkhornOptions& options = {});

// Plain iteration unless max(lambda * cost) exceeds kStabilizeThreshold.
inline constexpr double kStabilizeThreshold = 600.0;
SinkhornResult sinkhorn_auto(const Vector& p, const Vector& q, const Matrix& cost, double lambda,
                             const SinkhornOptions& options = {});

// -sum x log x with 0 log 0 = 0.
double entropy(const Matrix& plan);

DualCertificate dual_from_scalings(const SinkhornResult& result);
CertificateResiduals check_certificate(const DualCertificate& cert, const Matrix& cost, double lambda);

inline constexpr double kBoundSlack = 1e-8;

// Checks, with slack kBoundSlack:
//   0 <= d_S - d_W <= (H(pi_S) - H(pi_W)) / lambda
//   0 <= d_W - de_S <= H(pi_S) / lambda
//   H(pi_S) <= H(p q^T)
//   H(pi_S) <= log n + log n~
CheckReport bound_certificates(const Vector& p, const Vector& q, const Matrix& cost, double lambda,
                               const SinkhornResult& sink, const LpSolution& lp);

}  // namespace nsd
