#include "nsd/cli.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <variant>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "nsd/nested.hpp"
#include "nsd/scenario_tree.hpp"
#include "nsd/sinkhorn.hpp"
#include "nsd/transport.hpp"

namespace nsd::cli {
namespace {

using Cell = std::variant<double, long, bool, std::string>;

struct Table {
  std::string command;
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;
};

std::string format_cell(const Cell& cell) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, double>) {
          return fmt::format("{:.10g}", v);
        } else if constexpr (std::is_same_v<T, bool>) {
          return v ? "true" : "false";
        } else if constexpr (std::is_same_v<T, long>) {
          return std::to_string(v);
        } else {
          return v;
        }
      },
      cell);
}

void emit(const Table& table, OutputFormat format, std::ostream& out) {
  if (format == OutputFormat::kCsv) {
    for (std::size_t c = 0; c < table.columns.size(); ++c) out << (c ? "," : "") << table.columns[c];
    out << '\n';
    for (const auto& row : table.rows) {
      for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << format_cell(row[c]);
      out << '\n';
    }
    return;
  }
  // Doubles go through the same 10-digit formatting as CSV so both outputs
  // are reproducible byte for byte.
  std::string body = "{\"command\":" + nlohmann::json(table.command).dump() + ",\"rows\":[";
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    body += r ? ",{" : "{";
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
      body += (c ? "," : "") + nlohmann::json(table.columns[c]).dump() + ":";
      const Cell& cell = table.rows[r][c];
      if (const auto* s = std::get_if<std::string>(&cell)) {
        body += nlohmann::json(*s).dump();
      } else if (const auto* d = std::get_if<double>(&cell); d && !std::isfinite(*d)) {
        body += "null";
      } else {
        body += format_cell(cell);
      }
    }
    body += "}";
  }
  body += "]}";
  out << body << '\n';
}

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

const char* command_name(Command c) {
  switch (c) {
    case Command::kWasserstein: return "wasserstein";
    case Command::kSinkhorn: return "sinkhorn";
    case Command::kNested: return "nested";
    case Command::kNestedSinkhorn: return "nested-sinkhorn";
    case Command::kSweep: return "sweep";
    case Command::kVerify: return "verify";
    case Command::kGen: return "gen";
    case Command::kBench: return "bench";
  }
  return "?";
}

NestedOptions nested_options(const RunConfig& config) {
  NestedOptions opt;
  opt.sinkhorn.tol = config.tol;
  opt.sinkhorn.max_iter = config.max_iter;
  opt.threads = config.threads;
  return opt;
}

struct TreePair {
  ScenarioTree a;
  ScenarioTree b;
};

TreePair load_pair(const RunConfig& config) {
  require(!config.tree_a.empty() && !config.tree_b.empty(), "--tree-a and --tree-b are required");
  return {load_tree(config.tree_a), load_tree(config.tree_b)};
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

int cmd_wasserstein(const RunConfig& config, Table& table) {
  const auto trees = load_pair(config);
  table.columns = {"r", "wasserstein", "n", "n_tilde"};
  table.rows.push_back({config.r, wasserstein_distance(trees.a, trees.b, config.r), static_cast<long>(trees.a.leaf_count()),
                        static_cast<long>(trees.b.leaf_count())});
  return kOk;
}

int cmd_sinkhorn(const RunConfig& config, Table& table) {
  const auto trees = load_pair(config);
  const Vector p = leaf_probabilities(trees.a);
  const Vector q = leaf_probabilities(trees.b);
  const Matrix cost = cost_matrix(trees.a, trees.b, config.r);
  const auto sink = sinkhorn_auto(p, q, cost, config.lambda, {config.tol, config.max_iter});
  const auto lp = solve_transport_lp(p, q, cost);
  table.columns = {"lambda", "d_S", "de_S", "entropy", "d_W", "iterations", "marginal_error", "converged", "stabilized"};
  table.rows.push_back({config.lambda, sink.d_s, sink.de_s, sink.entropy, lp.value, static_cast<long>(sink.iterations),
                        sink.marginal_error, sink.converged, sink.stabilized});
  return sink.converged ? kOk : kCheckFailed;
}

int cmd_nested(const RunConfig& config, Table& table) {
  const auto trees = load_pair(config);
  const auto res = nested_exact(trees.a, trees.b, config.r, nested_options(config));
  table.columns = {"r", "nested_distance", "subproblems"};
  table.rows.push_back({config.r, res.value, static_cast<long>(res.subproblems)});
  return kOk;
}

int cmd_nested_sinkhorn(const RunConfig& config, Table& table) {
  const auto trees = load_pair(config);
  const auto res = nested_sinkhorn(trees.a, trees.b, config.r, config.lambda, nested_options(config));
  std::string per_stage;
  for (const auto& stage : res.stage_tables) per_stage += (per_stage.empty() ? "" : ";") + std::to_string(stage.entries.size());
  table.columns = {"r", "lambda", "nd_S", "nde_S", "entropy", "subproblems", "stage_subproblems", "iterations", "converged"};
  table.rows.push_back({config.r, config.lambda, res.value, res.value_with_entropy, res.total_entropy,
                        static_cast<long>(res.subproblems), per_stage, res.total_iterations, res.converged});
  return res.converged ? kOk : kCheckFailed;
}

int cmd_sweep(const RunConfig& config, Table& table) {
  const auto trees = load_pair(config);
  const auto lambdas = config.lambdas.empty() ? default_lambda_grid() : config.lambdas;
  const auto rows = lambda_sweep(trees.a, trees.b, config.r, lambdas, nested_options(config));
  table.columns = {"lambda", "nd_S", "nde_S", "nd_W", "iterations", "converged", "seconds_exact", "seconds_sinkhorn"};
  bool ok = true;
  for (const auto& row : rows) {
    table.rows.push_back({row.lambda, row.nd_s, row.nde_s, row.nd_w, row.iterations, row.converged, row.seconds_exact,
                          row.seconds_sinkhorn});
    ok = ok && row.converged;
  }
  return ok ? kOk : kCheckFailed;
}

int cmd_verify(const RunConfig& config, Table& table) {
  const auto trees = load_pair(config);
  const auto& a = trees.a;
  const auto& b = trees.b;
  const double lambda = config.lambda;
  CheckReport report;

  const Vector p = leaf_probabilities(a);
  const Vector q = leaf_probabilities(b);
  const Matrix cost = cost_matrix(a, b, config.r);
  const auto lp = solve_transport_lp(p, q, cost);
  const auto cert = certify(lp, cost);
  report.add("flat LP: dual feasibility", cert.dual_violation, 1e-9);
  report.add("flat LP: complementary slackness", cert.slackness_violation, 1e-8);
  report.add("flat LP: duality gap", cert.duality_gap, 1e-8);

  const auto sink = sinkhorn_auto(p, q, cost, lambda, {config.tol, config.max_iter});
  report.add("flat Sinkhorn: marginal error", sink.marginal_error, config.tol);
  CheckReport flat_bounds = bound_certificates(p, q, cost, lambda, sink, lp);
  for (auto& c : flat_bounds.checks) c.name = "flat Sinkhorn: " + c.name;
  report.append(flat_bounds);
  const auto duals = check_certificate(dual_from_scalings(sink), cost, lambda);
  report.add("flat Sinkhorn: beta_i + gamma_j <= c_ij + 1/lambda", duals.max_constraint_excess, 1e-8);
  report.add("flat Sinkhorn: dual normalization", duals.normalization_error, 1e-8);

  const auto options = nested_options(config);
  const auto exact = nested_exact(a, b, config.r, options);
  if (a.leaf_count() <= kFlatLpMaxLeaves && b.leaf_count() <= kFlatLpMaxLeaves) {
    const auto flat = flat_nested_lp(a, b, config.r);
    report.add("tower property: |nested - flat LP|", std::abs(exact.cost_power - flat.power_value), 1e-8);
  }
  report.add("nested: composed exact plan feasibility",
             conditional_constraint_residual(a, b, exact.composed_plan.matrix), kFeasibilityTol);

  const auto bounds = nested_bound_report(a, b, config.r, lambda, options);
  CheckReport nested_bounds = bounds.checks;
  for (auto& c : nested_bounds.checks) c.name = "nested: " + c.name;
  report.append(nested_bounds);

  const auto sinkhorn_result = nested_sinkhorn(a, b, config.r, lambda, options);
  if (!sinkhorn_result.converged) {
    report.add("nested Sinkhorn converged", 1.0, 0.0);
  } else {
    CheckReport equivalence = verify_entropic_equivalence(a, b, config.r, lambda, sinkhorn_result);
    for (auto& c : equivalence.checks) c.name = "entropic equivalence: " + c.name;
    report.append(equivalence);
    const auto mart = martingale_check(a, b, sinkhorn_result);
    report.add("martingale: residual", mart.max_martingale_residual, kMartingaleTol);
    report.add("martingale: projection", mart.max_projection_residual, kProjectionTol);
  }

  table.columns = {"check", "value", "bound", "passed"};
  for (const auto& c : report.checks) table.rows.push_back({c.name, c.lhs, c.rhs, c.passed});
  return report.all_passed() ? kOk : kCheckFailed;
}

int cmd_bench(const RunConfig& config, Table& table) {
  const std::vector<int> branch_a = config.branching.empty() ? std::vector<int>{1, 2, 3, 2, 3, 4} : config.branching;
  const std::vector<int> branch_b = config.branching_b.empty() ? std::vector<int>{1, 2, 2, 1, 3, 2} : config.branching_b;
  require(config.samples >= 1, "--samples must be at least 1");
  const std::size_t levels = std::min(branch_a.size(), branch_b.size());
  require(levels >= 2, "bench needs at least one stage in both branchings");
  const auto options = nested_options(config);

  table.columns = {"T",    "leaves_a",      "leaves_b",         "nd_W",        "nd_S",
                   "nde_S", "difference", "converged", "seconds_exact", "seconds_sinkhorn", "acceleration"};
  bool ok = true;
  for (std::size_t T = 1; T < levels; ++T) {
    const std::span<const int> prefix_a(branch_a.data(), T + 1);
    const std::span<const int> prefix_b(branch_b.data(), T + 1);
    double nd_w = 0, nd_s = 0, nde_s = 0, sec_w = 0, sec_s = 0;
    long leaves_a = 0, leaves_b = 0;
    bool converged = true;
    for (int s = 0; s < config.samples; ++s) {
      const auto a = generate_random_tree(prefix_a, config.seed + 2 * static_cast<std::uint64_t>(s));
      const auto b = generate_random_tree(prefix_b, config.seed + 2 * static_cast<std::uint64_t>(s) + 1);
      leaves_a = static_cast<long>(a.leaf_count());
      leaves_b = static_cast<long>(b.leaf_count());
      auto start = std::chrono::steady_clock::now();
      const auto exact = nested_exact(a, b, config.r, options);
      sec_w += seconds_since(start);
      start = std::chrono::steady_clock::now();
      const auto sink = nested_sinkhorn(a, b, config.r, config.lambda, options);
      sec_s += seconds_since(start);
      nd_w += exact.value;
      nd_s += sink.value;
      nde_s += sink.value_with_entropy;
      converged = converged && sink.converged;
    }
    const double k = config.samples;
    ok = ok && converged;
    table.rows.push_back({static_cast<long>(T), leaves_a, leaves_b, nd_w / k, nd_s / k, nde_s / k, (nd_w - nde_s) / k,
                          converged, sec_w / k, sec_s / k, sec_s > 0 ? sec_w / sec_s : 0.0});
  }
  return ok ? kOk : kCheckFailed;
}

}  // namespace

std::vector<double> default_lambda_grid() {
  std::vector<double> grid{0.5};
  for (int l = 1; l <= 30; ++l) grid.push_back(l);
  return grid;
}

ParseOutcome parse_args(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Nested distance and nested Sinkhorn divergence between scenario trees"};
  RunConfig config;
  const std::map<std::string, Command> commands{
      {"wasserstein", Command::kWasserstein}, {"sinkhorn", Command::kSinkhorn}, {"nested", Command::kNested},
      {"nested-sinkhorn", Command::kNestedSinkhorn}, {"sweep", Command::kSweep}, {"verify", Command::kVerify},
      {"gen", Command::kGen}, {"bench", Command::kBench}};
  const std::map<std::string, OutputFormat> formats{{"csv", OutputFormat::kCsv}, {"json", OutputFormat::kJson}};
  std::string out_path;
  std::string command_name;
  std::string format_name = "csv";

  std::vector<std::string> command_names;
  for (const auto& [name, _] : commands) command_names.push_back(name);
  app.add_option("command", command_name, "wasserstein | sinkhorn | nested | nested-sinkhorn | sweep | verify | gen | bench")
      ->required()
      ->check(CLI::IsMember(command_names))
      ->option_text("COMMAND REQUIRED");
  app.add_option("--tree-a", config.tree_a, "first tree file (JSON)");
  app.add_option("--tree-b", config.tree_b, "second tree file (JSON)");
  app.add_option("--r", config.r, "order of the distance")->check(CLI::Range(1.0, 1e6));
  app.add_option("--lambda", config.lambda, "regularization parameter")->check(CLI::PositiveNumber);
  app.add_option("--lambdas", config.lambdas, "comma-separated lambda grid for sweep")->delimiter(',');
  app.add_option("--tol", config.tol, "Sinkhorn marginal tolerance")->check(CLI::PositiveNumber);
  app.add_option("--max-iter", config.max_iter, "Sinkhorn iteration cap")->check(CLI::PositiveNumber);
  app.add_option("--output", format_name, "csv | json")->check(CLI::IsMember({"csv", "json"}))->option_text("FORMAT");
  app.add_option("--seed", config.seed, "random seed for gen and bench");
  app.add_option("--branching", config.branching, "comma-separated branching, e.g. 1,2,3")->delimiter(',');
  app.add_option("--branching-b", config.branching_b, "second tree branching for bench")->delimiter(',');
  app.add_option("--samples", config.samples, "bench: tree pairs averaged per stage count")->check(CLI::PositiveNumber);
  app.add_option("--out", out_path, "write the report to this path instead of stdout");
  app.add_option("--threads", config.threads, "worker threads (default: NESTED_SINKHORN_THREADS or all cores)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return {std::nullopt, code == 0 ? kOk : kInputError};
  }
  config.command = commands.at(command_name);
  config.output = formats.at(format_name);
  if (!out_path.empty()) config.out = out_path;
  return {config, kOk};
}

int run(const RunConfig& config, std::ostream& out, std::ostream& err) {
  std::ofstream file;
  std::ostream* sink = &out;
  try {
    if (config.out) {
      file.open(*config.out);
      require(static_cast<bool>(file), fmt::format("cannot write '{}'", *config.out));
      sink = &file;
    }
    if (config.command == Command::kGen) {
      require(!config.branching.empty(), "gen requires --branching");
      *sink << serialize_tree(generate_random_tree(config.branching, config.seed));
      return kOk;
    }

    Table table;
    table.command = command_name(config.command);
    int status = kOk;
    switch (config.command) {
      case Command::kWasserstein: status = cmd_wasserstein(config, table); break;
      case Command::kSinkhorn: status = cmd_sinkhorn(config, table); break;
      case Command::kNested: status = cmd_nested(config, table); break;
      case Command::kNestedSinkhorn: status = cmd_nested_sinkhorn(config, table); break;
      case Command::kSweep: status = cmd_sweep(config, table); break;
      case Command::kVerify: status = cmd_verify(config, table); break;
      case Command::kBench: status = cmd_bench(config, table); break;
      case Command::kGen: break;
    }
    emit(table, config.output, *sink);
    return status;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kCheckFailed;
  }
}

}  // namespace nsd::cli
