#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>
#include <string>

#include "nsd/scenario_tree.hpp"

using namespace nsd;

namespace {

std::string data(const std::string& name) { return std::string(NSD_TEST_DATA) + "/" + name; }

std::string error_of(const std::string& text) {
  try {
    parse_tree(text);
  } catch (const std::invalid_argument& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("figure 2 left tree parses into eight nodes of height three") {
  const auto tree = load_tree(data("fig2_left.json"));
  CHECK(tree.size() == 8);
  CHECK(tree.height() == 3);
  CHECK(tree.leaf_count() == 4);
  CHECK(tree.max_branching() == 2);
  CHECK(load_tree(data("fig2_right.json")).max_branching() == 3);
}

TEST_CASE("trajectories of the figure 2 left tree") {
  const auto paths = trajectories(load_tree(data("fig2_left.json")));
  REQUIRE(paths.size() == 4);
  const std::vector<std::vector<double>> states{{10, 10, 8, 6}, {10, 10, 8, 9}, {10, 10, 12, 10}, {10, 10, 12, 13}};
  const std::vector<double> probs{0.5016, 0.1584, 0.1564, 0.1836};
  double total = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(paths[k].states == states[k]);
    CHECK(paths[k].prob == doctest::Approx(probs[k]).epsilon(1e-14));
    total += paths[k].prob;
  }
  CHECK(std::abs(total - 1.0) <= 1e-12);
}

TEST_CASE("figure 1 right tree has two equally likely trajectories") {
  const auto paths = trajectories(load_tree(data("fig1_right.json")));
  REQUIRE(paths.size() == 2);
  std::set<std::vector<double>> seen;
  for (const auto& p : paths) {
    seen.insert(p.states);
    CHECK(p.prob == 0.5);
  }
  CHECK(seen == std::set<std::vector<double>>{{2, 2, 1}, {2, 2, 3}});
}

TEST_CASE("root-only tree") {
  const auto tree = parse_tree(R"({"nodes":[{"id":7,"parent":null,"state":3.5,"prob":1.0}]})");
  CHECK(tree.height() == 0);
  const auto paths = trajectories(tree);
  REQUIRE(paths.size() == 1);
  CHECK(paths[0].states == std::vector<double>{3.5});
  CHECK(paths[0].prob == 1.0);
  CHECK(paths[0].leaf_id == 7);
}

TEST_CASE("parse errors") {
  CHECK(error_of(R"({"nodes":[{"id":0,"parent":null,"state":0,"prob":1},
                              {"id":1,"parent":0,"state":0,"prob":0.5},
                              {"id":2,"parent":0,"state":0,"prob":0.6}]})")
            .find("children probabilities sum to 1.1") != std::string::npos);
  CHECK(error_of("{nodes: oops").find("malformed") != std::string::npos);
  CHECK(error_of(R"({"nodes":[{"id":0,"parent":null,"state":0,"prob":1},{"id":0,"parent":0,"state":0,"prob":1}]})")
            .find("duplicate node id 0") != std::string::npos);
  CHECK(error_of(R"({"nodes":[{"id":0,"parent":null,"state":0,"prob":1},{"id":1,"parent":5,"state":0,"prob":1}]})")
            .find("unknown parent 5") != std::string::npos);
  CHECK(error_of(R"({"nodes":[{"id":0,"parent":null,"state":0,"prob":1},
                              {"id":1,"parent":0,"state":0,"prob":1.0},
                              {"id":2,"parent":0,"state":0,"prob":0.0}]})")
            .find("nonpositive probability") != std::string::npos);
  CHECK(error_of(R"({"nodes":[{"id":0,"parent":null,"state":0,"prob":1},
                              {"id":1,"parent":0,"state":0,"prob":0.5},
                              {"id":2,"parent":0,"state":0,"prob":0.5},
                              {"id":3,"parent":1,"state":0,"prob":1}]})")
            .find("unequal depths") != std::string::npos);
  CHECK(error_of(R"({"nodes":[{"id":0,"parent":null,"state":0,"prob":1},
                              {"id":1,"parent":2,"state":0,"prob":1},
                              {"id":2,"parent":1,"state":0,"prob":1}]})")
            .find("cycle") != std::string::npos);
  CHECK(error_of(R"({"nodes":[{"id":0,"parent":1,"state":0,"prob":1},{"id":1,"parent":0,"state":0,"prob":1}]})")
            .find("no root") != std::string::npos);
  CHECK(error_of(R"({"nodes":[{"id":0,"parent":null,"state":0,"prob":0.5}]})").find("root probability") !=
        std::string::npos);
}

TEST_CASE("near-unit children probabilities are renormalized") {
  const auto tree = parse_tree(R"({"nodes":[{"id":0,"parent":null,"state":0,"prob":1},
                                            {"id":1,"parent":0,"state":1,"prob":0.3333333333},
                                            {"id":2,"parent":0,"state":2,"prob":0.3333333333},
                                            {"id":3,"parent":0,"state":3,"prob":0.3333333333}]})");
  double sum = 0.0;
  for (auto c : tree.children(tree.root())) sum += tree.cond_prob(c);
  CHECK(std::abs(sum - 1.0) <= 1e-15);
}

TEST_CASE("ground cost") {
  const std::vector<double> a{2, 2, 1};
  const std::vector<double> b{2, 2.1, 3};
  CHECK(ground_cost(a, b, 1.0) == doctest::Approx(2.1).epsilon(1e-15));
  CHECK(ground_cost(a, a, 3.0) == 0.0);
  const std::vector<double> x{10, 10, 8, 6};
  const std::vector<double> y{10, 7, 5, 4};
  CHECK(ground_cost(x, y, 2.0) == 64.0);
  CHECK_THROWS_AS(ground_cost(a, x, 1.0), std::invalid_argument);
}

TEST_CASE("cost matrix of the figure 1 trees") {
  const auto c = cost_matrix(load_tree(data("fig1_left.json")), load_tree(data("fig1_right.json")), 1.0);
  REQUIRE(c.rows() == 2);
  REQUIRE(c.cols() == 2);
  CHECK(c(0, 0) == doctest::Approx(0.1).epsilon(1e-14));
  CHECK(c(0, 1) == doctest::Approx(2.1).epsilon(1e-14));
  CHECK(c(1, 0) == 2.0);
  CHECK(c(1, 1) == 0.0);
}

TEST_CASE("cost matrix of the figure 2 trees") {
  const auto left = load_tree(data("fig2_left.json"));
  const auto right = load_tree(data("fig2_right.json"));
  const auto c = cost_matrix(left, right, 1.0);
  // The right tree of figure 2 has nine leaves.
  CHECK(c.rows() == 4);
  CHECK(c.cols() == 9);
  CHECK(c(0, 0) == 8.0);  // (10,10,8,6) vs (10,7,5,4)
  CHECK_THROWS_AS(cost_matrix(left, load_tree(data("fig1_left.json")), 1.0), std::invalid_argument);
}

TEST_CASE("cost matrix properties on random trees") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::vector<int> ba{1, 2, 3}, bb{1, 3, 1};
    const auto a = generate_random_tree(ba, rng());
    const auto b = generate_random_tree(bb, rng());
    const auto ab = cost_matrix(a, b, 1.5);
    const auto ba_ = cost_matrix(b, a, 1.5);
    CHECK((ab - ba_.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(cost_matrix(a, a, 1.0).diagonal().cwiseAbs().maxCoeff() == 0.0);

    // l1 path metric: triangle inequality on random triples
    const auto pa = trajectories(a);
    const auto pb = trajectories(b);
    const auto pc = trajectories(generate_random_tree(ba, rng()));
    for (std::size_t k = 0; k < 3; ++k) {
      const double direct = ground_cost(pa[k], pc[k], 1.0);
      CHECK(direct <= ground_cost(pa[k], pb[k % pb.size()], 1.0) + ground_cost(pb[k % pb.size()], pc[k], 1.0) + 1e-12);
    }
  }
}

TEST_CASE("random tree generation") {
  const std::vector<int> big{1, 2, 3, 2, 3, 4};
  const std::vector<int> small{1, 2, 2, 1, 3, 2};
  CHECK(generate_random_tree(big, 3).leaf_count() == 144);
  CHECK(generate_random_tree(small, 3).leaf_count() == 24);
  CHECK(serialize_tree(generate_random_tree(big, 9)) == serialize_tree(generate_random_tree(big, 9)));
  CHECK(serialize_tree(generate_random_tree(big, 9)) != serialize_tree(generate_random_tree(big, 10)));
  CHECK_THROWS_AS(generate_random_tree(std::vector<int>{}, 1), std::invalid_argument);

  // A branching prefix yields the truncated tree.
  const auto full = generate_random_tree(big, 5);
  const auto cut = generate_random_tree(std::span<const int>(big.data(), 3), 5);
  const auto full_records = full.records();
  for (const auto& rec : cut.records()) {
    const auto match = std::find_if(full_records.begin(), full_records.end(),
                                    [&](const NodeRecord& r) { return r.id == rec.id; });
    REQUIRE(match != full_records.end());
    CHECK(match->parent == rec.parent);
    CHECK(match->state == rec.state);
    CHECK(match->cond_prob == rec.cond_prob);
  }
  const auto full_paths = trajectories(full);

  for (const auto& p : trajectories(full)) CHECK(p.prob > 0.0);
  double total = 0.0;
  for (const auto& p : full_paths) total += p.prob;
  CHECK(std::abs(total - 1.0) <= 1e-12);
}

TEST_CASE("serialize and parse round trip") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const std::vector<int> branching{1, 3, 2, 2};
    const auto tree = generate_random_tree(branching, rng());
    const auto again = parse_tree(serialize_tree(tree));
    const auto x = tree.records();
    const auto y = again.records();
    REQUIRE(x.size() == y.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
      CHECK(x[k].id == y[k].id);
      CHECK(x[k].parent == y[k].parent);
      CHECK(x[k].state == y[k].state);
      // renormalisation on parse may move the last bit
      CHECK(std::abs(x[k].cond_prob - y[k].cond_prob) <= 1e-15);
    }
  }
}
