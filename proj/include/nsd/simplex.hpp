#pragma once

#include <cstddef>

#include "nsd/linalg.hpp"

namespace nsd {

// minimize c^T x  subject to  A x = b,  x >= 0.
struct LinearProgram {
  Matrix A;
  Vector b;
  Vector c;
};

enum class LpStatus { kOptimal, kInfeasible, kUnbounded };

struct LpResult {
  LpStatus status = LpStatus::kInfeasible;
  double value = 0.0;
  Vector x;
  std::size_t pivots = 0;
};

// Two-phase dense tableau simplex. Redundant equality rows are detected and
// dropped after phase one. Pricing is Dantzig's rule; the leaving row is
// chosen by the lexicographic ratio test, which rules out cycling and copes
// with the heavily degenerate zero right-hand sides of the flat nested program.
LpResult solve_lp(const LinearProgram& lp);

}  // namespace nsd
