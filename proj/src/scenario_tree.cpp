#include "nsd/scenario_tree.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <fmt/format.h>
#include <json.hpp>

namespace nsd {
namespace {

constexpr std::size_t kNoParent = std::numeric_limits<std::size_t>::max();
constexpr double kParseProbTolerance = 1e-9;

[[noreturn]] void fail(const std::string& what) { throw std::invalid_argument(what); }

}  // namespace

ScenarioTree ScenarioTree::from_records(std::vector<NodeRecord> records) {
  if (records.empty()) fail("tree has no nodes");

  std::unordered_map<int, std::size_t> by_id;
  std::optional<std::size_t> root_record;
  for (std::size_t k = 0; k < records.size(); ++k) {
    const auto& rec = records[k];
    if (!by_id.emplace(rec.id, k).second) fail(fmt::format("duplicate node id {}", rec.id));
    if (!std::isfinite(rec.state)) fail(fmt::format("node {} has a non-finite state", rec.id));
    if (!std::isfinite(rec.cond_prob) || rec.cond_prob <= 0.0)
      fail(fmt::format("node {} has nonpositive probability {}", rec.id, rec.cond_prob));
    if (rec.cond_prob > 1.0 + kParseProbTolerance)
      fail(fmt::format("node {} has probability {} > 1", rec.id, rec.cond_prob));
    if (!rec.parent) {
      if (root_record) fail(fmt::format("multiple roots ({} and {})", records[*root_record].id, rec.id));
      root_record = k;
    }
  }
  if (!root_record) fail("tree has no root");
  if (std::abs(records[*root_record].cond_prob - 1.0) > kParseProbTolerance)
    fail(fmt::format("root probability must be 1, got {}", records[*root_record].cond_prob));
  records[*root_record].cond_prob = 1.0;

  std::vector<std::vector<std::size_t>> kids(records.size());
  for (std::size_t k = 0; k < records.size(); ++k) {
    const auto& rec = records[k];
    if (!rec.parent) continue;
    auto it = by_id.find(*rec.parent);
    if (it == by_id.end()) fail(fmt::format("node {} references unknown parent {}", rec.id, *rec.parent));
    kids[it->second].push_back(k);
  }
  for (auto& list : kids) {
    std::sort(list.begin(), list.end(),
              [&](std::size_t a, std::size_t b) { return records[a].id < records[b].id; });
  }

  for (std::size_t k = 0; k < records.size(); ++k) {
    if (kids[k].empty()) continue;
    double sum = 0.0;
    for (auto c : kids[k]) sum += records[c].cond_prob;
    if (std::abs(sum - 1.0) > kParseProbTolerance)
      fail(fmt::format("children probabilities sum to {:g} (node {})", sum, records[k].id));
    if (sum != 1.0)
      for (auto c : kids[k]) records[c].cond_prob /= sum;
  }

  // Preorder walk from the root; anything unreached sits on a parent cycle.
  ScenarioTree tree;
  std::vector<std::size_t> record_to_node(records.size(), kNoParent);
  std::vector<std::pair<std::size_t, std::size_t>> stack{{*root_record, kNoParent}};
  while (!stack.empty()) {
    auto [rec_index, parent_node] = stack.back();
    stack.pop_back();
    const std::size_t node = tree.ids_.size();
    record_to_node[rec_index] = node;
    const auto& rec = records[rec_index];
    tree.ids_.push_back(rec.id);
    tree.parents_.push_back(parent_node);
    tree.states_.push_back(rec.state);
    tree.cond_probs_.push_back(rec.cond_prob);
    tree.stages_.push_back(parent_node == kNoParent ? 0 : tree.stages_[parent_node] + 1);
    tree.children_.emplace_back();
    if (parent_node != kNoParent) tree.children_[parent_node].push_back(node);
    for (auto it = kids[rec_index].rbegin(); it != kids[rec_index].rend(); ++it) stack.emplace_back(*it, node);
  }
  if (tree.ids_.size() != records.size()) fail("parent links contain a cycle");

  const std::size_t n = tree.size();
  int height = -1;
  for (std::size_t v = 0; v < n; ++v) {
    if (!tree.children_[v].empty()) continue;
    if (height < 0) height = tree.stages_[v];
    if (tree.stages_[v] != height)
      fail(fmt::format("leaves at unequal depths ({} and {})", height, tree.stages_[v]));
  }
  tree.height_ = height;

  tree.stage_nodes_.assign(static_cast<std::size_t>(height) + 1, {});
  tree.stage_pos_.resize(n);
  for (std::size_t v = 0; v < n; ++v) {
    auto& bucket = tree.stage_nodes_[tree.stages_[v]];
    tree.stage_pos_[v] = bucket.size();
    bucket.push_back(v);
  }

  tree.leaf_first_.resize(n);
  tree.leaf_last_.resize(n);
  for (std::size_t v = n; v-- > 0;) {
    if (tree.children_[v].empty()) {
      tree.leaf_first_[v] = tree.stage_pos_[v];
      tree.leaf_last_[v] = tree.stage_pos_[v] + 1;
    } else {
      tree.leaf_first_[v] = tree.leaf_first_[tree.children_[v].front()];
      tree.leaf_last_[v] = tree.leaf_last_[tree.children_[v].back()];
    }
  }
  return tree;
}

std::optional<std::size_t> ScenarioTree::parent(std::size_t node) const {
  if (parents_[node] == kNoParent) return std::nullopt;
  return parents_[node];
}

std::size_t ScenarioTree::max_branching() const {
  std::size_t m = 1;
  for (const auto& c : children_) m = std::max(m, c.size());
  return m;
}

std::vector<NodeRecord> ScenarioTree::records() const {
  std::vector<NodeRecord> out;
  out.reserve(size());
  for (std::size_t v = 0; v < size(); ++v) {
    NodeRecord rec{ids_[v], std::nullopt, states_[v], cond_probs_[v]};
    if (parents_[v] != kNoParent) rec.parent = ids_[parents_[v]];
    out.push_back(rec);
  }
  return out;
}

ScenarioTree parse_tree(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(fmt::format("malformed tree file: {}", e.what()));
  }
  if (!doc.is_object() || !doc.contains("nodes") || !doc["nodes"].is_array())
    fail("malformed tree file: expected an object with a \"nodes\" array");

  std::vector<NodeRecord> records;
  for (const auto& item : doc["nodes"]) {
    if (!item.is_object()) fail("malformed tree file: node entry is not an object");
    for (const char* key : {"id", "parent", "state", "prob"}) {
      if (!item.contains(key)) fail(fmt::format("malformed tree file: node without \"{}\"", key));
    }
    if (!item["id"].is_number_integer()) fail("malformed tree file: \"id\" must be an integer");
    if (!item["parent"].is_null() && !item["parent"].is_number_integer())
      fail("malformed tree file: \"parent\" must be an integer or null");
    if (!item["state"].is_number() || !item["prob"].is_number())
      fail("malformed tree file: \"state\" and \"prob\" must be numbers");
    NodeRecord rec;
    rec.id = item["id"].get<int>();
    if (!item["parent"].is_null()) rec.parent = item["parent"].get<int>();
    rec.state = item["state"].get<double>();
    rec.cond_prob = item["prob"].get<double>();
    records.push_back(rec);
  }
  return ScenarioTree::from_records(std::move(records));
}

ScenarioTree load_tree(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(fmt::format("cannot read tree file '{}'", path));
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_tree(buffer.str());
}

std::string serialize_tree(const ScenarioTree& tree) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& rec : tree.records()) {
    nlohmann::json item;
    item["id"] = rec.id;
    item["parent"] = rec.parent ? nlohmann::json(*rec.parent) : nlohmann::json(nullptr);
    item["state"] = rec.state;
    item["prob"] = rec.cond_prob;
    nodes.push_back(std::move(item));
  }
  nlohmann::json doc;
  doc["nodes"] = std::move(nodes);
  return doc.dump(1) + "\n";
}

std::vector<Trajectory> trajectories(const ScenarioTree& tree) {
  std::vector<Trajectory> out;
  out.reserve(tree.leaf_count());
  for (auto leaf : tree.leaves()) {
    Trajectory path;
    path.leaf_id = tree.id(leaf);
    path.states.resize(static_cast<std::size_t>(tree.height()) + 1);
    path.prob = 1.0;
    for (std::optional<std::size_t> v = leaf; v; v = tree.parent(*v)) {
      path.states[tree.stage(*v)] = tree.state(*v);
      path.prob *= tree.cond_prob(*v);
    }
    out.push_back(std::move(path));
  }
  return out;
}

Vector leaf_probabilities(const ScenarioTree& tree) {
  Vector p(tree.leaf_count());
  for (auto leaf : tree.leaves()) {
    double prob = 1.0;
    for (std::optional<std::size_t> v = leaf; v; v = tree.parent(*v)) prob *= tree.cond_prob(*v);
    p[static_cast<Eigen::Index>(tree.stage_position(leaf))] = prob;
  }
  return p;
}

double ground_cost(std::span<const double> a, std::span<const double> b, double r) {
  if (a.size() != b.size())
    throw std::invalid_argument(fmt::format("trajectory lengths differ ({} vs {})", a.size(), b.size()));
  double dist = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) dist += std::abs(a[t] - b[t]);
  return r == 1.0 ? dist : std::pow(dist, r);
}

double ground_cost(const Trajectory& a, const Trajectory& b, double r) {
  return ground_cost(std::span<const double>(a.states), std::span<const double>(b.states), r);
}

Matrix cost_matrix(const ScenarioTree& a, const ScenarioTree& b, double r) {
  if (a.height() != b.height())
    throw std::invalid_argument(fmt::format("trees have different heights ({} vs {})", a.height(), b.height()));
  const auto ta = trajectories(a);
  const auto tb = trajectories(b);
  Matrix cost(static_cast<Eigen::Index>(ta.size()), static_cast<Eigen::Index>(tb.size()));
  for (std::size_t i = 0; i < ta.size(); ++i)
    for (std::size_t j = 0; j < tb.size(); ++j)
      cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = ground_cost(ta[i], tb[j], r);
  return cost;
}

ScenarioTree generate_random_tree(std::span<const int> branching, std::uint64_t seed) {
  if (branching.empty()) fail("branching list is empty");
  if (branching[0] != 1) fail("branching must start with 1 (the root level)");
  for (int b : branching)
    if (b < 1) fail("branching factors must be positive");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> step(0.0, 1.0);
  std::exponential_distribution<double> weight(1.0);

  std::vector<NodeRecord> records{{0, std::nullopt, 0.0, 1.0}};
  std::vector<std::size_t> frontier{0};
  for (std::size_t level = 1; level < branching.size(); ++level) {
    std::vector<std::size_t> next;
    for (auto parent : frontier) {
      const int count = branching[level];
      std::vector<double> w(static_cast<std::size_t>(count));
      double total = 0.0;
      for (auto& x : w) total += (x = weight(rng));
      for (int c = 0; c < count; ++c) {
        NodeRecord rec;
        rec.id = static_cast<int>(records.size());
        rec.parent = records[parent].id;
        rec.state = records[parent].state + step(rng);
        rec.cond_prob = w[static_cast<std::size_t>(c)] / total;
        next.push_back(records.size());
        records.push_back(rec);
      }
    }
    frontier = std::move(next);
  }
  return ScenarioTree::from_records(std::move(records));
}

}  // namespace nsd
