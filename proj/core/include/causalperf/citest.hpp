#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "causalperf/dataset.hpp"

namespace causalperf {

struct IndependenceVerdict {
  double statistic = 0.0;
  double p_value = 1.0;
  bool independent = true;
};

/// Fisher z test on partial correlations. The correlation matrix is computed
/// once so a skeleton search can issue many tests against the same data.
class FisherZTest {
 public:
  explicit FisherZTest(const PerformanceDataset& ds);

  IndependenceVerdict test(std::size_t x, std::size_t y, std::span<const std::size_t> cond,
                           double alpha) const;

  /// Partial correlation of x and y given cond, clamped to |r| <= 1 - 1e-12.
  double partial_correlation(std::size_t x, std::size_t y, std::span<const std::size_t> cond) const;

  std::size_t samples() const { return n_; }

 private:
  Eigen::MatrixXd corr_;
  std::vector<bool> constant_;
  std::size_t n_ = 0;
};

IndependenceVerdict fisher_z(const PerformanceDataset& ds, std::size_t x, std::size_t y,
                             std::span<const std::size_t> cond, double alpha = 0.05);

/// I(X;Y|Z) in bits from empirical frequencies. `strata` assigns every row
/// a conditioning cell; pass all zeros for the unconditional case.
double conditional_mutual_information(std::span<const int> x, std::span<const int> y,
                                      std::span<const int> strata);

/// Permutation test of I(X;Y|cond) for discrete variables. X is permuted
/// within strata of cond; strata with fewer than five rows are pooled.
IndependenceVerdict mutual_info_test(const PerformanceDataset& ds, std::size_t x, std::size_t y,
                                     std::span<const std::size_t> cond, double alpha = 0.05,
                                     std::size_t permutations = 200, std::uint64_t seed = 0);

struct CiOptions {
  double alpha = 0.05;
  std::size_t permutations = 200;
  std::uint64_t seed = 0;
};

/// Chooses the test per query: mutual information when x, y and every
/// conditioning variable are discrete, Fisher z otherwise (discrete values
/// enter as their integer codes).
class IndependenceTester {
 public:
  IndependenceTester(const PerformanceDataset& ds, CiOptions options);

  IndependenceVerdict test(std::size_t x, std::size_t y, std::span<const std::size_t> cond) const;
  bool uses_mutual_info(std::size_t x, std::size_t y, std::span<const std::size_t> cond) const;
  const CiOptions& options() const { return options_; }
  std::size_t samples() const { return ds_->rows(); }

 private:
  const PerformanceDataset* ds_;
  CiOptions options_;
  FisherZTest fisher_;
};

}  // namespace causalperf
