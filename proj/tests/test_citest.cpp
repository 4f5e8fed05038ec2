#include <doctest.h>

#include <cmath>
#include <random>

#include "causalperf/citest.hpp"
#include "support.hpp"

using namespace causalperf;
using testing::error_of;

namespace {

PerformanceDataset continuous(const std::vector<std::string>& names, const std::vector<Row>& rows) {
  std::vector<Variable> vars;
  for (const auto& n : names) vars.push_back(testing::event(n));
  return PerformanceDataset(Schema(vars), rows);
}

PerformanceDataset coins(const std::vector<std::string>& names, const std::vector<Row>& rows, int levels = 2) {
  std::vector<Variable> vars;
  for (const auto& n : names) vars.push_back(testing::discrete_event(n, testing::range(levels)));
  return PerformanceDataset(Schema(vars), rows);
}

// Correlation of OLS residuals of x and y on [1, cond].
double regression_partial_correlation(const PerformanceDataset& ds, std::size_t x, std::size_t y,
                                      const std::vector<std::size_t>& cond) {
  const auto n = static_cast<Eigen::Index>(ds.rows());
  Eigen::MatrixXd design(n, static_cast<Eigen::Index>(cond.size()) + 1);
  design.col(0).setOnes();
  for (std::size_t j = 0; j < cond.size(); ++j) design.col(static_cast<Eigen::Index>(j) + 1) = ds.values().col(cond[j]);
  auto residual = [&](std::size_t v) -> Eigen::VectorXd {
    Eigen::VectorXd target = ds.values().col(v);
    Eigen::VectorXd beta = design.colPivHouseholderQr().solve(target);
    return target - design * beta;
  };
  const Eigen::VectorXd rx = residual(x), ry = residual(y);
  return rx.dot(ry) / std::sqrt(rx.squaredNorm() * ry.squaredNorm());
}

}  // namespace

TEST_SUITE("citest") {

TEST_CASE("perfect linear dependence is never independent") {
  std::vector<Row> rows;
  for (int i = 0; i < 50; ++i) rows.push_back({double(i), 2.0 * i});
  auto ds = continuous({"x", "y"}, rows);
  auto v = fisher_z(ds, 0, 1, {}, 0.05);
  CHECK_FALSE(v.independent);
  CHECK(std::isfinite(v.statistic));
  CHECK(v.p_value == doctest::Approx(0.0));
}

TEST_CASE("independent normals pass in at least 90 of 100 seeds") {
  int accepted = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    std::normal_distribution<double> z;
    std::vector<Row> rows;
    for (int i = 0; i < 1000; ++i) rows.push_back({z(rng), z(rng)});
    accepted += fisher_z(continuous({"x", "y"}, rows), 0, 1, {}, 0.05).independent;
  }
  CHECK(accepted >= 90);
}

TEST_CASE("chain is independent given the middle variable") {
  Rng rng(11);
  std::normal_distribution<double> z;
  std::vector<Row> rows;
  for (int i = 0; i < 5000; ++i) {
    const double x = z(rng);
    const double m = 1.5 * x + z(rng);
    rows.push_back({x, m, -0.8 * m + z(rng)});
  }
  auto ds = continuous({"x", "z", "y"}, rows);
  const std::vector<std::size_t> given{1};
  CHECK_FALSE(fisher_z(ds, 0, 2, {}, 0.05).independent);
  CHECK(fisher_z(ds, 0, 2, given, 0.05).independent);
}

TEST_CASE("partial correlation agrees with the regression residual oracle") {
  Rng rng(5);
  std::normal_distribution<double> z;
  std::vector<Row> rows;
  for (int i = 0; i < 400; ++i) {
    const double a = z(rng), b = z(rng);
    rows.push_back({a, b, a + 0.5 * b + z(rng), a - b + z(rng)});
  }
  auto ds = continuous({"a", "b", "x", "y"}, rows);
  FisherZTest test(ds);
  for (const auto& cond : std::vector<std::vector<std::size_t>>{{}, {0}, {1}, {0, 1}}) {
    CHECK(test.partial_correlation(2, 3, cond) ==
          doctest::Approx(regression_partial_correlation(ds, 2, 3, cond)).epsilon(1e-9));
  }
}

TEST_CASE("fisher z statistic matches the z transform") {
  Rng rng(9);
  std::normal_distribution<double> z;
  std::vector<Row> rows;
  for (int i = 0; i < 200; ++i) {
    const double x = z(rng);
    rows.push_back({x, 0.3 * x + z(rng), z(rng)});
  }
  auto ds = continuous({"x", "y", "c"}, rows);
  const std::vector<std::size_t> cond{2};
  const double r = regression_partial_correlation(ds, 0, 1, cond);
  const double expected = 0.5 * std::log((1 + r) / (1 - r)) * std::sqrt(200.0 - 1 - 3);
  auto v = fisher_z(ds, 0, 1, cond, 0.05);
  CHECK(std::abs(v.statistic) == doctest::Approx(std::abs(expected)).epsilon(1e-9));
  CHECK(v.p_value == doctest::Approx(std::erfc(std::abs(expected) / std::sqrt(2.0))).epsilon(1e-9));
}

TEST_CASE("fisher z is symmetric and affine invariant") {
  Rng rng(21);
  std::normal_distribution<double> z;
  std::vector<Row> rows, scaled;
  for (int i = 0; i < 300; ++i) {
    const double c = z(rng), x = c + z(rng), y = 0.2 * x - c + z(rng);
    rows.push_back({x, y, c});
    scaled.push_back({3.0 * x - 7.0, -0.5 * y + 2.0, c});
  }
  auto ds = continuous({"x", "y", "c"}, rows);
  auto ds2 = continuous({"x", "y", "c"}, scaled);
  const std::vector<std::size_t> cond{2};
  auto xy = fisher_z(ds, 0, 1, cond), yx = fisher_z(ds, 1, 0, cond);
  CHECK(xy.statistic == yx.statistic);
  CHECK(xy.p_value == yx.p_value);
  auto affine = fisher_z(ds2, 0, 1, cond);
  CHECK(std::abs(affine.statistic) == doctest::Approx(std::abs(xy.statistic)).epsilon(1e-9));
  CHECK(affine.p_value == doctest::Approx(xy.p_value).epsilon(1e-9));
}

TEST_CASE("fisher z errors") {
  std::vector<Row> few{{1, 2, 3}, {2, 1, 3}, {3, 3, 1}, {4, 0, 2}};
  auto ds = continuous({"x", "y", "c"}, few);
  const std::vector<std::size_t> cond{2};
  CHECK(error_of([&] { fisher_z(ds, 0, 1, cond); }) == ErrorCode::InsufficientSamples);

  Rng rng(1);
  std::normal_distribution<double> z;
  std::vector<Row> rows;
  for (int i = 0; i < 100; ++i) {
    const double a = z(rng);
    rows.push_back({z(rng), z(rng), a, 2.0 * a});
  }
  auto collinear = continuous({"x", "y", "a", "b"}, rows);
  const std::vector<std::size_t> both{2, 3};
  CHECK(error_of([&] { fisher_z(collinear, 0, 1, both); }) == ErrorCode::SingularCorrelationMatrix);
}

TEST_CASE("verdict invariants") {
  auto ds = testing::chain_data(300, 2);
  for (std::size_t x = 0; x < 3; ++x) {
    for (std::size_t y = x + 1; y < 3; ++y) {
      for (double alpha : {0.01, 0.05, 0.5}) {
        auto v = fisher_z(ds, x, y, {}, alpha);
        CHECK(v.p_value >= 0.0);
        CHECK(v.p_value <= 1.0);
        CHECK(v.independent == (v.p_value > alpha));
      }
    }
  }
}

TEST_CASE("mutual information of a copy equals its entropy") {
  std::vector<int> x;
  for (int i = 0; i < 400; ++i) x.push_back(i % 4);
  std::vector<int> zeros(x.size(), 0);
  CHECK(conditional_mutual_information(x, x, zeros) == doctest::Approx(2.0).epsilon(1e-12));

  std::vector<Row> rows;
  for (int v : x) rows.push_back({double(v), double(v)});
  auto v = mutual_info_test(coins({"x", "y"}, rows, 4), 0, 1, {}, 0.05, 200, 3);
  CHECK_FALSE(v.independent);
  CHECK(v.statistic == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("product table has zero mutual information") {
  const std::vector<int> x{0, 0, 1, 1}, y{0, 1, 0, 1}, s{0, 0, 0, 0};
  CHECK(conditional_mutual_information(x, y, s) == 0.0);
}

TEST_CASE("independent coins pass in at least 90 of 100 seeds") {
  int accepted = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    std::bernoulli_distribution coin;
    std::vector<Row> rows;
    for (int i = 0; i < 2000; ++i) rows.push_back({double(coin(rng)), double(coin(rng))});
    accepted += mutual_info_test(coins({"x", "y"}, rows), 0, 1, {}, 0.05, 200, seed).independent;
  }
  CHECK(accepted >= 90);
}

TEST_CASE("mutual information test is symmetric and non-negative") {
  Rng rng(4);
  std::uniform_int_distribution<int> u(0, 2);
  std::vector<Row> rows;
  for (int i = 0; i < 600; ++i) {
    const int c = u(rng);
    rows.push_back({double(c), double((c + u(rng) / 2) % 3), double((c + (u(rng) == 0)) % 3)});
  }
  auto ds = coins({"c", "x", "y"}, rows, 3);
  const std::vector<std::size_t> cond{0};
  auto xy = mutual_info_test(ds, 1, 2, cond, 0.05, 200, 8);
  auto yx = mutual_info_test(ds, 2, 1, cond, 0.05, 200, 8);
  CHECK(xy.statistic == doctest::Approx(yx.statistic).epsilon(1e-12));
  CHECK(xy.p_value == yx.p_value);
  CHECK(xy.statistic >= 0.0);
}

TEST_CASE("mutual information test needs a usable stratum") {
  std::vector<Row> rows{{0, 1, 0}, {1, 0, 1}, {0, 0, 0}, {1, 1, 1}};
  auto ds = coins({"x", "y", "c"}, rows);
  const std::vector<std::size_t> cond{2};
  CHECK(error_of([&] { mutual_info_test(ds, 0, 1, cond); }) == ErrorCode::InsufficientSamples);
}

TEST_CASE("tester dispatches on variable types") {
  Schema schema({testing::option("O", testing::range(3)), testing::discrete_event("D", testing::range(2)),
                 testing::event("E")});
  Rng rng(2);
  std::vector<Row> rows;
  for (int i = 0; i < 60; ++i) rows.push_back({double(i % 3), double(i % 2), 0.1 * i});
  PerformanceDataset ds(schema, rows);
  IndependenceTester tester(ds, {});
  const std::vector<std::size_t> none;
  const std::vector<std::size_t> cont{2};
  CHECK(tester.uses_mutual_info(0, 1, none));
  CHECK_FALSE(tester.uses_mutual_info(0, 2, none));
  CHECK_FALSE(tester.uses_mutual_info(0, 1, cont));
}

}  // TEST_SUITE
