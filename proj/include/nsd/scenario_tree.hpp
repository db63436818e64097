#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nsd/linalg.hpp"

namespace nsd {

// Node record as it appears in a tree file.
struct NodeRecord {
  int id = 0;
  std::optional<int> parent;
  double state = 0.0;
  double cond_prob = 1.0;
};

// A finite filtered process: a rooted tree whose leaves all sit at depth T.
//
// Nodes are stored in depth-first preorder with siblings sorted by ascending
// id, so the leaves below any node form a contiguous range of the leaf order.
// All accessors take this internal index, not the file id.
class ScenarioTree {
 public:
  // Validates the records and builds the tree. Children probabilities that
  // sum to 1 within 1e-9 are renormalized; anything else throws
  // std::invalid_argument.
  static ScenarioTree from_records(std::vector<NodeRecord> records);

  std::size_t size() const { return ids_.size(); }
  int height() const { return height_; }
  static constexpr std::size_t root() { return 0; }

  int id(std::size_t node) const { return ids_[node]; }
  std::optional<std::size_t> parent(std::size_t node) const;
  double state(std::size_t node) const { return states_[node]; }
  double cond_prob(std::size_t node) const { return cond_probs_[node]; }
  int stage(std::size_t node) const { return stages_[node]; }
  std::span<const std::size_t> children(std::size_t node) const { return children_[node]; }
  bool is_leaf(std::size_t node) const { return children_[node].empty(); }

  // Nodes at stage t, in preorder. For t == height() this is the leaf order.
  std::span<const std::size_t> stage_nodes(int t) const { return stage_nodes_[t]; }
  // Position of a node inside stage_nodes(stage(node)).
  std::size_t stage_position(std::size_t node) const { return stage_pos_[node]; }

  std::span<const std::size_t> leaves() const { return stage_nodes_[height_]; }
  std::size_t leaf_count() const { return leaves().size(); }
  // Half-open range [first, last) of leaf positions below a node.
  std::pair<std::size_t, std::size_t> leaf_range(std::size_t node) const {
    return {leaf_first_[node], leaf_last_[node]};
  }

  // Maximum number of immediate successors over all inner nodes.
  std::size_t max_branching() const;

  std::vector<NodeRecord> records() const;

 private:
  ScenarioTree() = default;

  std::vector<int> ids_;
  std::vector<std::size_t> parents_;  // root holds npos
  std::vector<double> states_;
  std::vector<double> cond_probs_;
  std::vector<int> stages_;
  std::vector<std::vector<std::size_t>> children_;
  std::vector<std::vector<std::size_t>> stage_nodes_;
  std::vector<std::size_t> stage_pos_;
  std::vector<std::size_t> leaf_first_;
  std::vector<std::size_t> leaf_last_;
  int height_ = 0;
};

struct Trajectory {
  std::vector<double> states;  // xi_0 ... xi_T
  int leaf_id = 0;
  double prob = 0.0;
};

// Parses the JSON tree format: {"nodes":[{"id":..,"parent":..|null,"state":..,"prob":..}]}.
ScenarioTree parse_tree(std::string_view text);
ScenarioTree load_tree(const std::string& path);
std::string serialize_tree(const ScenarioTree& tree);

// One trajectory per leaf, in leaf order.
std::vector<Trajectory> trajectories(const ScenarioTree& tree);

// Unconditional leaf probabilities in leaf order.
Vector leaf_probabilities(const ScenarioTree& tree);

// (sum_t |a_t - b_t|)^r
double ground_cost(std::span<const double> a, std::span<const double> b, double r);
double ground_cost(const Trajectory& a, const Trajectory& b, double r);

// Leaf-by-leaf ground costs, n x n~.
Matrix cost_matrix(const ScenarioTree& a, const ScenarioTree& b, double r);

// Random tree with branching[k] children per node at stage k-1 (branching[0]
// must be 1). States follow a standard normal random walk from 0; children
// probabilities are uniform on the simplex. Nodes are generated stage by
// stage, so a prefix of `branching` yields the truncation of the full tree.
ScenarioTree generate_random_tree(std::span<const int> branching, std::uint64_t seed);

}  // namespace nsd
