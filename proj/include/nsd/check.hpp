#pragma once

#include <algorithm>
#include <string>
#include <vector>

namespace nsd {

// One inequality lhs <= rhs + slack, evaluated.
struct Check {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;
  bool passed = false;
};

struct CheckReport {
  std::vector<Check> checks;

  void add(std::string name, double lhs, double rhs, double slack = 0.0) {
    checks.push_back({std::move(name), lhs, rhs, lhs <= rhs + slack});
  }
  void append(const CheckReport& other) { checks.insert(checks.end(), other.checks.begin(), other.checks.end()); }
  bool all_passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
  }
};

}  // namespace nsd
