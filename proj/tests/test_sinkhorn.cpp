#include <doctest.h>

#include <random>

#include "nsd/sinkhorn.hpp"
#include "nsd/transport.hpp"
#include "oracles.hpp"

using namespace nsd;

namespace {

Vector uniform(Eigen::Index n) { return Vector::Constant(n, 1.0 / static_cast<double>(n)); }

Matrix swap_cost() {
  Matrix c(2, 2);
  c << 0, 1, 1, 0;
  return c;
}

Vector random_simplex(std::mt19937_64& rng, Eigen::Index n) {
  std::exponential_distribution<double> e(1.0);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = e(rng) + 1e-2;
  return v / v.sum();
}

Matrix random_cost(std::mt19937_64& rng, Eigen::Index m, Eigen::Index n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix c(m, n);
  for (Eigen::Index k = 0; k < c.size(); ++k) c.data()[k] = u(rng);
  return c;
}

}  // namespace

TEST_CASE("symmetric 2x2 closed form") {
  for (double lambda : {0.5, 1.0, 5.0}) {
    const auto res = sinkhorn(uniform(2), uniform(2), swap_cost(), lambda);
    REQUIRE(res.converged);
    CHECK(std::abs(res.plan.matrix(0, 0) - oracle::symmetric_diagonal(lambda)) <= 1e-9);
    CHECK(std::abs(res.plan.matrix(1, 1) - oracle::symmetric_diagonal(lambda)) <= 1e-9);
    CHECK(std::abs(res.plan.matrix(0, 1) - oracle::symmetric_off_diagonal(lambda)) <= 1e-9);
    CHECK(std::abs(res.d_s - 2 * oracle::symmetric_off_diagonal(lambda)) <= 1e-9);
  }
  const auto one = sinkhorn(uniform(2), uniform(2), swap_cost(), 1.0);
  CHECK(one.plan.matrix(0, 0) == doctest::Approx(0.3655293).epsilon(1e-7));
  CHECK(one.plan.matrix(0, 1) == doctest::Approx(0.1344707).epsilon(1e-7));
  CHECK(one.d_s == doctest::Approx(0.2689414).epsilon(1e-7));

  const auto sharp = sinkhorn(uniform(2), uniform(2), swap_cost(), 50.0);
  CHECK(sharp.d_s < 1e-21);
  CHECK(std::abs(sharp.plan.matrix(0, 0) - 0.5) <= 1e-12);
}

TEST_CASE("1x1 instance") {
  const Vector one = Vector::Ones(1);
  Matrix c(1, 1);
  c << 2.75;
  for (double lambda : {0.1, 1.0, 30.0}) {
    const auto res = sinkhorn(one, one, c, lambda);
    CHECK(res.plan.matrix(0, 0) == 1.0);
    CHECK(res.d_s == 2.75);
    CHECK(res.entropy == 0.0);
    CHECK(res.de_s == 2.75);
    const auto stab = sinkhorn_stabilized(one, one, c, lambda);
    CHECK(stab.d_s == res.d_s);
    CHECK(stab.plan.matrix(0, 0) == 1.0);

    const auto cert = dual_from_scalings(res);
    CHECK(std::abs(cert.beta[0] + cert.gamma[0] - (2.75 + 1.0 / lambda)) <= 1e-12);
    CHECK(std::abs((cert.dual_value - res.de_s) - 1.0 / lambda) <= 1e-12);
  }
}

TEST_CASE("stabilized iteration matches the plain one") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const Eigen::Index m = 1 + trial % 6;
    const Eigen::Index n = 1 + (trial * 7) % 5;
    const Vector p = random_simplex(rng, m);
    const Vector q = random_simplex(rng, n);
    const Matrix c = random_cost(rng, m, n);
    const double lambda = 1.0 + 29.0 * (trial % 4) / 3.0;  // lambda * cost <= 30
    const auto plain = sinkhorn(p, q, c, lambda);
    const auto stab = sinkhorn_stabilized(p, q, c, lambda);
    CHECK(plain.converged);
    CHECK(stab.converged);
    CHECK(std::abs(plain.d_s - stab.d_s) <= 1e-8);
    CHECK((plain.plan.matrix - stab.plan.matrix).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("stabilized iteration at very large lambda") {
  const auto res = sinkhorn_stabilized(uniform(2), uniform(2), swap_cost(), 2000.0);
  CHECK(res.converged);
  CHECK(res.d_s < 1e-15);
  CHECK(std::isfinite(res.de_s));
  CHECK_THROWS_AS(sinkhorn(uniform(2), uniform(2), swap_cost() + Matrix::Ones(2, 2), 2000.0), std::domain_error);
  const auto automatic = sinkhorn_auto(uniform(2), uniform(2), swap_cost(), 2000.0);
  CHECK(automatic.stabilized);
  CHECK_FALSE(sinkhorn_auto(uniform(2), uniform(2), swap_cost(), 20.0).stabilized);
}

TEST_CASE("result invariants") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 40; ++trial) {
    const Eigen::Index m = 2 + trial % 5;
    const Eigen::Index n = 2 + (trial * 3) % 6;
    const Vector p = random_simplex(rng, m);
    const Vector q = random_simplex(rng, n);
    const Matrix c = random_cost(rng, m, n) * 4.0;
    const double lambda = 0.5 + trial % 10;
    const SinkhornOptions opt{1e-10, 100000};
    const auto res = sinkhorn(p, q, c, lambda, opt);
    REQUIRE(res.converged);

    // Gibbs form and scaling gauge
    const Matrix rebuilt = res.scaling_row().asDiagonal() * gibbs_kernel(c, lambda) * res.scaling_col().asDiagonal();
    CHECK(((rebuilt - res.plan.matrix).array() / res.plan.matrix.array()).abs().maxCoeff() <= 1e-10);
    CHECK(res.log_scaling_row.maxCoeff() == 0.0);
    CHECK(res.plan.matrix.minCoeff() > 0.0);

    CHECK(res.marginal_error <= opt.tol);
    CHECK(res.de_s <= res.d_s);
    CHECK(res.entropy >= 0.0);
    CHECK(res.entropy <= std::log(static_cast<double>(m * n)) + 1e-12);
    CHECK(std::abs(res.entropy - oracle::direct_entropy(res.plan.matrix)) <= 1e-12);

    // One more row update moves each b~_i by the factor p_i / rowsum_i.
    const Vector rows = res.plan.matrix.rowwise().sum();
    const double rel_change = (p.array() / rows.array() - 1.0).abs().maxCoeff();
    CHECK(rel_change <= opt.tol / p.minCoeff());

    // Ordering against the exact transport value.
    const auto lp = solve_transport_lp(p, q, c);
    CHECK(res.de_s <= lp.value + 1e-8);
    CHECK(lp.value <= res.d_s + 1e-8);

    // Dual certificate
    const auto cert = dual_from_scalings(res);
    const auto resid = check_certificate(cert, c, lambda);
    CHECK(resid.max_constraint_excess <= 1e-8);
    CHECK(resid.normalization_error <= 1e-8);
    CHECK(std::abs(cert.dual_value - (res.de_s + 1.0 / lambda)) <= 1e-8);
  }
}

TEST_CASE("symmetric 2x2 dual certificate") {
  const auto res = sinkhorn(uniform(2), uniform(2), swap_cost(), 1.0);
  const auto cert = dual_from_scalings(res);
  CHECK(std::abs(cert.beta[0] - cert.beta[1]) <= 1e-9);
  CHECK(std::abs(cert.gamma[0] - cert.gamma[1]) <= 1e-9);
  // Strong duality for the entropic problem: dual objective = de_S + 1/lambda.
  CHECK(std::abs(cert.dual_value - res.de_s - 1.0) <= 1e-8);
}

TEST_CASE("d_S approaches d_W monotonically on the lambda grid") {
  std::mt19937_64 rng(3);
  const Vector p = random_simplex(rng, 5);
  const Vector q = random_simplex(rng, 7);
  const Matrix c = random_cost(rng, 5, 7);
  const double d_w = solve_transport_lp(p, q, c).value;
  std::vector<double> grid{0.5};
  for (int l = 1; l <= 30; ++l) grid.push_back(l);
  double previous = std::numeric_limits<double>::infinity();
  for (double lambda : grid) {
    const double gap = std::abs(sinkhorn(p, q, c, lambda).d_s - d_w);
    CHECK(gap <= previous + 1e-8);
    previous = gap;
  }
}

TEST_CASE("kernel power identity") {
  std::mt19937_64 rng(1);
  const Matrix c = random_cost(rng, 4, 6);
  const Matrix k1 = gibbs_kernel(c, 3.0);
  const Matrix k2 = gibbs_kernel(c, 6.0);
  CHECK((k2 - k1.cwiseProduct(k1)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("entropy") {
  CHECK(entropy(Matrix::Constant(2, 2, 0.25)) == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  Matrix point = Matrix::Zero(2, 3);
  point(1, 2) = 1.0;
  CHECK(entropy(point) == 0.0);
  Matrix plan(2, 2);
  plan << 0.5, 0.25, 0.25, 0.0;
  CHECK(entropy(plan) == doctest::Approx(1.0397208).epsilon(1e-7));
  CHECK(entropy(plan) == doctest::Approx(oracle::direct_entropy(plan)).epsilon(1e-15));
  plan(1, 1) = 1.5;
  CHECK_THROWS_AS(entropy(plan), std::invalid_argument);
}

TEST_CASE("bound certificates") {
  SUBCASE("symmetric 2x2 at lambda 1") {
    const auto sink = sinkhorn(uniform(2), uniform(2), swap_cost(), 1.0);
    const auto lp = solve_transport_lp(uniform(2), uniform(2), swap_cost());
    CHECK(lp.value == 0.0);
    const auto report = bound_certificates(uniform(2), uniform(2), swap_cost(), 1.0, sink, lp);
    CHECK(report.all_passed());
    Matrix closed(2, 2);
    closed << oracle::symmetric_diagonal(1.0), oracle::symmetric_off_diagonal(1.0),
        oracle::symmetric_off_diagonal(1.0), oracle::symmetric_diagonal(1.0);
    const double h = oracle::direct_entropy(closed);
    CHECK(h == doctest::Approx(1.2753503).epsilon(1e-7));  // frozen from the closed form
    CHECK(std::abs(sink.entropy - h) <= 1e-9);
    CHECK(std::abs(sink.de_s - (2 * oracle::symmetric_off_diagonal(1.0) - h)) <= 1e-9);
  }
  SUBCASE("1x1") {
    const Vector one = Vector::Ones(1);
    const Matrix c = Matrix::Constant(1, 1, 0.7);
    const auto report = bound_certificates(one, one, c, 2.0, sinkhorn(one, one, c, 2.0), solve_transport_lp(one, one, c));
    CHECK(report.all_passed());
    for (const auto& check : report.checks) CHECK(check.lhs - check.rhs <= 1e-15);
  }
  SUBCASE("random 5x7 instances") {
    std::mt19937_64 rng(57);
    for (int trial = 0; trial < 10; ++trial) {
      const Vector p = random_simplex(rng, 5);
      const Vector q = random_simplex(rng, 7);
      const Matrix c = random_cost(rng, 5, 7) * 2.0;
      const auto lp = solve_transport_lp(p, q, c);
      for (double lambda : {1.0, 10.0, 100.0}) {
        const auto report = bound_certificates(p, q, c, lambda, sinkhorn_auto(p, q, c, lambda), lp);
        for (const auto& check : report.checks) {
          INFO(check.name << " lhs=" << check.lhs << " rhs=" << check.rhs);
          CHECK(check.passed);
        }
      }
    }
  }
  CHECK_THROWS_AS(bound_certificates(uniform(2), uniform(3), swap_cost(), 1.0,
                                     sinkhorn(uniform(2), uniform(2), swap_cost(), 1.0),
                                     solve_transport_lp(uniform(2), uniform(2), swap_cost())),
                  std::invalid_argument);
}

TEST_CASE("sinkhorn input errors and unconverged runs") {
  CHECK_THROWS_AS(sinkhorn(uniform(2), uniform(2), swap_cost(), 0.0), std::invalid_argument);
  CHECK_THROWS_AS(sinkhorn_stabilized(uniform(2), uniform(2), swap_cost(), -1.0), std::invalid_argument);
  Vector bad(2);
  bad << 0.2, 0.2;
  CHECK_THROWS_AS(sinkhorn(bad, uniform(2), swap_cost(), 1.0), std::invalid_argument);

  Vector p(3);
  p << 0.2, 0.3, 0.5;
  Matrix c(3, 3);
  c << 0, 1, 2, 1, 0, 1, 2, 1, 0;
  const auto res = sinkhorn(p, uniform(3), c, 5.0, {1e-14, 2});
  CHECK_FALSE(res.converged);
  CHECK(res.iterations == 2);
  CHECK(res.marginal_error > 1e-14);
}
