#include "nsd/sinkhorn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <fmt/format.h>

namespace nsd {
namespace {

using Index = Eigen::Index;

void check_inputs(const Vector& p, const Vector& q, const Matrix& cost, double lambda,
                  const SinkhornOptions& options) {
  if (!(lambda > 0.0) || !std::isfinite(lambda))
    throw std::invalid_argument(fmt::format("lambda must be positive, got {}", lambda));
  if (!(options.tol > 0.0)) throw std::invalid_argument("tolerance must be positive");
  if (options.max_iter < 1) throw std::invalid_argument("max_iter must be at least 1");
  require_probability_vector(p, "row marginal");
  require_probability_vector(q, "column marginal");
  if (cost.rows() != p.size() || cost.cols() != q.size())
    throw std::invalid_argument(
        fmt::format("cost is {}x{} but marginals are {} and {}", cost.rows(), cost.cols(), p.size(), q.size()));
  if (!cost.allFinite()) throw std::invalid_argument("cost matrix has non-finite entries");
}

// Fills the derived fields from the final log-scalings.
void finish(SinkhornResult& out, const Vector& p, const Vector& q, const Matrix& cost, double lambda) {
  const double shift = out.log_scaling_row.maxCoeff();
  out.log_scaling_row.array() -= shift;
  out.log_scaling_col.array() += shift;

  Matrix plan(cost.rows(), cost.cols());
  for (Index i = 0; i < cost.rows(); ++i)
    for (Index j = 0; j < cost.cols(); ++j)
      plan(i, j) = std::exp(out.log_scaling_row[i] - lambda * cost(i, j) + out.log_scaling_col[j]);

  out.lambda = lambda;
  out.d_s = plan.cwiseProduct(cost).sum();
  out.entropy = entropy(plan);
  out.de_s = out.d_s - out.entropy / lambda;
  out.marginal_error = marginal_violation(plan, p, q);
  out.plan = TransportPlan{std::move(plan), p, q};
}

double log_sum_exp(const double* values, Index count, Index stride) {
  double top = -std::numeric_limits<double>::infinity();
  for (Index k = 0; k < count; ++k) top = std::max(top, values[k * stride]);
  if (!std::isfinite(top)) return top;
  double s = 0.0;
  for (Index k = 0; k < count; ++k) s += std::exp(values[k * stride] - top);
  return top + std::log(s);
}

}  // namespace

// std::exp rather than Eigen's vectorised exp: the latter clamps its argument
// and never underflows to zero, which would hide a degenerate kernel.
Matrix gibbs_kernel(const Matrix& cost, double lambda) {
  return cost.unaryExpr([lambda](double c) { return std::exp(-lambda * c); });
}

SinkhornResult sinkhorn(const Vector& p, const Vector& q, const Matrix& cost, double lambda,
                        const SinkhornOptions& options) {
  check_inputs(p, q, cost, lambda, options);
  const Matrix kernel = gibbs_kernel(cost, lambda);
  if ((kernel.rowwise().maxCoeff().array() <= 0.0).any() || (kernel.colwise().maxCoeff().array() <= 0.0).any())
    throw std::domain_error("Gibbs kernel underflows to zero in a row or column; use the stabilized iteration");

  Vector row_scale(p.size());
  Vector col_scale = Vector::Ones(q.size());
  SinkhornResult out;
  for (out.iterations = 1; out.iterations <= options.max_iter; ++out.iterations) {
    row_scale = p.cwiseQuotient(kernel * col_scale);
    const Vector col_sums = kernel.transpose() * row_scale;
    col_scale = q.cwiseQuotient(col_sums);
    if (!row_scale.allFinite() || !col_scale.allFinite())
      throw std::domain_error("Sinkhorn scalings overflowed; use the stabilized iteration");

    const double row_err = (row_scale.cwiseProduct(kernel * col_scale) - p).cwiseAbs().maxCoeff();
    const double col_err = (col_scale.cwiseProduct(col_sums) - q).cwiseAbs().maxCoeff();
    if (std::max(row_err, col_err) <= options.tol) {
      out.converged = true;
      break;
    }
  }
  out.iterations = std::min(out.iterations, options.max_iter);
  out.log_scaling_row = row_scale.array().log();
  out.log_scaling_col = col_scale.array().log();
  finish(out, p, q, cost, lambda);
  return out;
}

SinkhornResult sinkhorn_stabilized(const Vector& p, const Vector& q, const Matrix& cost, double lambda,
                                   const SinkhornOptions& options) {
  check_inputs(p, q, cost, lambda, options);
  const Index n = p.size();
  const Index m = q.size();
  // Row-major copy of -lambda * cost so both reductions walk contiguous memory.
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const RowMajor log_kernel = -lambda * cost;
  const RowMajor log_kernel_t = log_kernel.transpose();
  const Vector log_p = p.array().log();
  const Vector log_q = q.array().log();

  Vector f = Vector::Zero(n);
  Vector g = Vector::Zero(m);
  std::vector<double> work(static_cast<std::size_t>(std::max(n, m)));

  auto row_lse = [&](Index i, const Vector& col_pot) {
    for (Index j = 0; j < m; ++j) work[static_cast<std::size_t>(j)] = log_kernel(i, j) + col_pot[j];
    return log_sum_exp(work.data(), m, 1);
  };
  auto col_lse = [&](Index j, const Vector& row_pot) {
    for (Index i = 0; i < n; ++i) work[static_cast<std::size_t>(i)] = log_kernel_t(j, i) + row_pot[i];
    return log_sum_exp(work.data(), n, 1);
  };

  SinkhornResult out;
  out.stabilized = true;
  for (out.iterations = 1; out.iterations <= options.max_iter; ++out.iterations) {
    for (Index i = 0; i < n; ++i) f[i] = log_p[i] - row_lse(i, g);
    Vector col_lse_values(m);
    for (Index j = 0; j < m; ++j) {
      col_lse_values[j] = col_lse(j, f);
      g[j] = log_q[j] - col_lse_values[j];
    }
    double err = 0.0;
    for (Index i = 0; i < n; ++i) err = std::max(err, std::abs(std::exp(f[i] + row_lse(i, g)) - p[i]));
    for (Index j = 0; j < m; ++j) err = std::max(err, std::abs(std::exp(g[j] + col_lse_values[j]) - q[j]));
    if (err <= options.tol) {
      out.converged = true;
      break;
    }
  }
  out.iterations = std::min(out.iterations, options.max_iter);
  out.log_scaling_row = std::move(f);
  out.log_scaling_col = std::move(g);
  finish(out, p, q, cost, lambda);
  return out;
}

SinkhornResult sinkhorn_auto(const Vector& p, const Vector& q, const Matrix& cost, double lambda,
                             const SinkhornOptions& options) {
  const double worst = cost.size() == 0 ? 0.0 : lambda * cost.cwiseAbs().maxCoeff();
  if (worst > kStabilizeThreshold) return sinkhorn_stabilized(p, q, cost, lambda, options);
  return sinkhorn(p, q, cost, lambda, options);
}

double entropy(const Matrix& plan) {
  double h = 0.0;
  for (Index i = 0; i < plan.rows(); ++i) {
    for (Index j = 0; j < plan.cols(); ++j) {
      const double x = plan(i, j);
      if (x < -1e-12 || x > 1.0 + 1e-12 || std::isnan(x))
        throw std::invalid_argument(fmt::format("plan entry {} outside [0, 1]", x));
      if (x > 0.0) h -= x * std::log(x);
    }
  }
  return h;
}

DualCertificate dual_from_scalings(const SinkhornResult& result) {
  if (!result.log_scaling_row.allFinite() || !result.log_scaling_col.allFinite())
    throw std::invalid_argument("scalings must be strictly positive and finite");
  if (!(result.lambda > 0.0)) throw std::invalid_argument("result carries no regularization parameter");
  DualCertificate cert;
  cert.beta = (result.log_scaling_row.array() + 0.5) / result.lambda;
  cert.gamma = (result.log_scaling_col.array() + 0.5) / result.lambda;
  cert.dual_value = result.plan.row_marginal.dot(cert.beta) + result.plan.col_marginal.dot(cert.gamma);
  return cert;
}

CertificateResiduals check_certificate(const DualCertificate& cert, const Matrix& cost, double lambda) {
  CertificateResiduals res;
  double mass = 0.0;
  for (Index i = 0; i < cost.rows(); ++i) {
    for (Index j = 0; j < cost.cols(); ++j) {
      const double reduced = cost(i, j) - cert.beta[i] - cert.gamma[j];
      res.max_constraint_excess = std::max(res.max_constraint_excess, -reduced - 1.0 / lambda);
      mass += std::exp(-lambda * reduced - 1.0);
    }
  }
  res.normalization_error = std::abs(mass - 1.0);
  return res;
}

CheckReport bound_certificates(const Vector& p, const Vector& q, const Matrix& cost, double lambda,
                               const SinkhornResult& sink, const LpSolution& lp) {
  if (cost.rows() != p.size() || cost.cols() != q.size() || sink.plan.matrix.rows() != cost.rows() ||
      sink.plan.matrix.cols() != cost.cols() || lp.plan.matrix.rows() != cost.rows() ||
      lp.plan.matrix.cols() != cost.cols())
    throw std::invalid_argument("bound certificates: mismatched dimensions");

  const double d_w = lp.value;
  const double h_s = sink.entropy;
  const double h_w = entropy(lp.plan.matrix);
  const Matrix product = p * q.transpose();
  const double h_pq = entropy(product);
  const double h_max = std::log(static_cast<double>(p.size())) + std::log(static_cast<double>(q.size()));

  CheckReport report;
  auto add = [&](std::string name, double lhs, double rhs) { report.add(std::move(name), lhs, rhs, kBoundSlack); };
  add("d_W <= d_S", d_w, sink.d_s);
  add("d_S - d_W <= (H(pi_S) - H(pi_W))/lambda", sink.d_s - d_w, (h_s - h_w) / lambda);
  add("de_S <= d_W", sink.de_s, d_w);
  add("d_W - de_S <= H(pi_S)/lambda", d_w - sink.de_s, h_s / lambda);
  add("H(pi_S) <= H(p q^T)", h_s, h_pq);
  add("H(pi_S) <= log n + log n~", h_s, h_max);
  return report;
}

}  // namespace nsd
