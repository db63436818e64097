#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace nsd::cli {

enum class Command { kWasserstein, kSinkhorn, kNested, kNestedSinkhorn, kSweep, kVerify, kGen, kBench };
enum class OutputFormat { kCsv, kJson };

struct RunConfig {
  Command command = Command::kNested;
  std::string tree_a;
  std::string tree_b;
  double r = 1.0;
  double lambda = 20.0;
  std::vector<double> lambdas;  // empty: 0.5, 1, 2, ..., 30
  double tol = 1e-9;
  int max_iter = 100000;
  OutputFormat output = OutputFormat::kCsv;
  std::uint64_t seed = 1;
  std::vector<int> branching;    // gen, bench (first tree)
  std::vector<int> branching_b;  // bench (second tree)
  int samples = 1;               // bench: tree pairs averaged per stage count
  std::optional<std::string> out;
  unsigned threads = 0;
};

enum ExitStatus : int { kOk = 0, kCheckFailed = 1, kInputError = 2 };

// Parses argv. Returns the config, or an exit status if parsing finished the
// run (--help, bad flags); messages go to `err`.
struct ParseOutcome {
  std::optional<RunConfig> config;
  int status = kOk;
};
ParseOutcome parse_args(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Executes one command, writing the report to `out` (or to config.out).
int run(const RunConfig& config, std::ostream& out, std::ostream& err);

std::vector<double> default_lambda_grid();

}  // namespace nsd::cli
