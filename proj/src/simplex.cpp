#include "nsd/simplex.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace nsd {
namespace {

constexpr double kPivotTol = 1e-9;
constexpr double kFeasTol = 1e-9;
constexpr double kTieTol = 1e-14;

// Row-major tableau. Row m holds the reduced costs, column `cols` the rhs.
class Tableau {
 public:
  Tableau(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_((rows + 1) * (cols + 1), 0.0) {}

  double& at(std::size_t r, std::size_t c) { return data_[r * (cols_ + 1) + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * (cols_ + 1) + c]; }
  double& rhs(std::size_t r) { return at(r, cols_); }
  double& cost(std::size_t c) { return at(rows_, c); }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  void pivot(std::size_t pr, std::size_t pc) {
    const std::size_t w = cols_ + 1;
    double* prow = &data_[pr * w];
    const double inv = 1.0 / prow[pc];
    for (std::size_t c = 0; c < w; ++c) prow[c] *= inv;
    prow[pc] = 1.0;
    for (std::size_t r = 0; r <= rows_; ++r) {
      if (r == pr) continue;
      double* row = &data_[r * w];
      const double f = row[pc];
      if (f == 0.0) continue;
      for (std::size_t c = 0; c < w; ++c) row[c] -= f * prow[c];
      row[pc] = 0.0;
    }
  }

  // Drops row r (a redundant constraint whose basic variable is artificial).
  void erase_row(std::size_t r) {
    const std::size_t w = cols_ + 1;
    data_.erase(data_.begin() + static_cast<std::ptrdiff_t>(r * w),
                data_.begin() + static_cast<std::ptrdiff_t>((r + 1) * w));
    --rows_;
  }

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> data_;
};

// Lexicographic comparison of rows r and s of [rhs | B^-1], each scaled by its
// entry in the entering column. B^-1 sits in the artificial columns.
bool lex_less(const Tableau& t, std::size_t r, std::size_t s, std::size_t enter, std::size_t first_art) {
  const double ar = t.at(r, enter);
  const double as = t.at(s, enter);
  for (std::size_t c = first_art; c < t.cols(); ++c) {
    const double x = t.at(r, c) / ar;
    const double y = t.at(s, c) / as;
    if (x < y - 1e-12) return true;
    if (x > y + 1e-12) return false;
  }
  return false;
}

// Runs primal simplex on the tableau using columns [0, usable) as candidates:
// Dantzig pricing with a lexicographic ratio test, which cannot cycle from the
// all-artificial start. Returns false when unbounded.
bool run_simplex(Tableau& t, std::vector<std::size_t>& basis, std::size_t usable, std::size_t first_art,
                 std::size_t& pivots) {
  for (;;) {
    std::size_t enter = usable;
    double best = -kPivotTol;
    for (std::size_t c = 0; c < usable; ++c) {
      if (t.cost(c) < best) {
        enter = c;
        best = t.cost(c);
      }
    }
    if (enter == usable) return true;

    std::size_t leave = t.rows();
    double ratio = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < t.rows(); ++r) {
      const double a = t.at(r, enter);
      if (a <= kPivotTol) continue;
      const double q = std::max(t.rhs(r), 0.0) / a;
      if (leave == t.rows() || q < ratio - kTieTol) {
        leave = r;
        ratio = q;
      } else if (q <= ratio + kTieTol && lex_less(t, r, leave, enter, first_art)) {
        leave = r;
        ratio = std::min(ratio, q);
      }
    }
    if (leave == t.rows()) return false;
    t.pivot(leave, enter);
    basis[leave] = enter;
    ++pivots;
  }
}

}  // namespace

LpResult solve_lp(const LinearProgram& lp) {
  const auto m = static_cast<std::size_t>(lp.A.rows());
  const auto n = static_cast<std::size_t>(lp.A.cols());
  if (static_cast<std::size_t>(lp.b.size()) != m || static_cast<std::size_t>(lp.c.size()) != n)
    throw std::invalid_argument("linear program dimensions are inconsistent");

  // Columns: n structural, m artificial.
  Tableau t(m, n + m);
  std::vector<std::size_t> basis(m);
  for (std::size_t r = 0; r < m; ++r) {
    const double sign = lp.b[static_cast<Eigen::Index>(r)] < 0.0 ? -1.0 : 1.0;
    for (std::size_t c = 0; c < n; ++c)
      t.at(r, c) = sign * lp.A(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    t.at(r, n + r) = 1.0;
    t.rhs(r) = sign * lp.b[static_cast<Eigen::Index>(r)];
    basis[r] = n + r;
  }
  // Phase one objective: sum of artificials, expressed in nonbasic terms.
  for (std::size_t c = 0; c <= n + m; ++c) {
    if (c >= n && c < n + m) continue;
    double s = 0.0;
    for (std::size_t r = 0; r < m; ++r) s += t.at(r, c);
    t.at(m, c) = -s;
  }

  LpResult result;
  run_simplex(t, basis, n + m, n, result.pivots);
  if (-t.rhs(t.rows()) > kFeasTol * std::max(1.0, lp.b.cwiseAbs().sum())) {
    result.status = LpStatus::kInfeasible;
    return result;
  }

  // Drive artificials out of the basis; rows where that is impossible are redundant.
  for (std::size_t r = 0; r < t.rows();) {
    if (basis[r] < n) {
      ++r;
      continue;
    }
    std::size_t col = n;
    double best = kPivotTol;
    for (std::size_t c = 0; c < n; ++c) {
      if (std::abs(t.at(r, c)) > best) {
        best = std::abs(t.at(r, c));
        col = c;
      }
    }
    if (col < n) {
      t.pivot(r, col);
      basis[r] = col;
      ++result.pivots;
      ++r;
    } else {
      t.erase_row(r);
      basis.erase(basis.begin() + static_cast<std::ptrdiff_t>(r));
    }
  }

  // Phase two objective.
  const std::size_t rows = t.rows();
  for (std::size_t c = 0; c <= n + m; ++c) t.at(rows, c) = 0.0;
  for (std::size_t c = 0; c < n; ++c) t.at(rows, c) = lp.c[static_cast<Eigen::Index>(c)];
  for (std::size_t r = 0; r < rows; ++r) {
    const double cb = lp.c[static_cast<Eigen::Index>(basis[r])];
    if (cb == 0.0) continue;
    for (std::size_t c = 0; c <= n + m; ++c) t.at(rows, c) -= cb * t.at(r, c);
  }

  if (!run_simplex(t, basis, n, n, result.pivots)) {
    result.status = LpStatus::kUnbounded;
    return result;
  }

  result.status = LpStatus::kOptimal;
  result.x = Vector::Zero(static_cast<Eigen::Index>(n));
  for (std::size_t r = 0; r < rows; ++r) result.x[static_cast<Eigen::Index>(basis[r])] = std::max(t.rhs(r), 0.0);
  result.value = lp.c.dot(result.x);
  return result;
}

}  // namespace nsd
