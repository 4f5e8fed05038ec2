#include "causalperf/citest.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "causalperf/error.hpp"
#include "causalperf/rng.hpp"

namespace causalperf {

namespace {

constexpr double kMaxAbsCorrelation = 1.0 - 1e-12;
constexpr double kSingularEigenvalue = 1e-10;
constexpr std::size_t kMinStratumRows = 5;

double two_sided_normal_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

std::vector<int> level_codes(const PerformanceDataset& ds, std::size_t col) {
  const auto levels = ds.schema()[col].levels();
  std::vector<int> codes(ds.rows());
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    const double v = ds(r, col);
    auto it = std::lower_bound(levels.begin(), levels.end(), v - 1e-9);
    codes[r] = static_cast<int>(it - levels.begin());
  }
  return codes;
}

}  // namespace

// ------------------------------------------------------------- FisherZTest

FisherZTest::FisherZTest(const PerformanceDataset& ds) : n_(ds.rows()) {
  const auto p = static_cast<Eigen::Index>(ds.cols());
  corr_ = Eigen::MatrixXd::Identity(p, p);
  constant_.assign(static_cast<std::size_t>(p), true);
  if (n_ < 2) return;
  Eigen::MatrixXd centered = ds.values().rowwise() - ds.values().colwise().mean();
  Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n_ - 1);
  Eigen::VectorXd sd = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  for (Eigen::Index i = 0; i < p; ++i) {
    const double scale = std::max(1.0, ds.values().col(i).cwiseAbs().maxCoeff());
    constant_[static_cast<std::size_t>(i)] = sd(i) <= 1e-12 * scale;
  }
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) {
      if (i == j || constant_[i] || constant_[j]) continue;
      corr_(i, j) = std::clamp(cov(i, j) / (sd(i) * sd(j)), -1.0, 1.0);
    }
  }
}

double FisherZTest::partial_correlation(std::size_t x, std::size_t y,
                                        std::span<const std::size_t> cond) const {
  if (x > y) std::swap(x, y);
  std::vector<std::size_t> idx{x, y};
  for (auto c : cond) {
    if (!constant_[c] && c != x && c != y) idx.push_back(c);
  }
  std::sort(idx.begin() + 2, idx.end());
  idx.erase(std::unique(idx.begin() + 2, idx.end()), idx.end());
  const auto k = static_cast<Eigen::Index>(idx.size());
  double r = 0.0;
  if (k == 2) {
    r = corr_(x, y);
  } else {
    Eigen::MatrixXd sub(k, k);
    for (Eigen::Index i = 0; i < k; ++i) {
      for (Eigen::Index j = 0; j < k; ++j) sub(i, j) = corr_(idx[i], idx[j]);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sub, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < kSingularEigenvalue) {
      throw Error(ErrorCode::SingularCorrelationMatrix,
                  "conditioning set is collinear (correlation matrix is singular)");
    }
    const Eigen::MatrixXd precision = sub.ldlt().solve(Eigen::MatrixXd::Identity(k, k));
    r = -precision(0, 1) / std::sqrt(precision(0, 0) * precision(1, 1));
  }
  return std::clamp(r, -kMaxAbsCorrelation, kMaxAbsCorrelation);
}

IndependenceVerdict FisherZTest::test(std::size_t x, std::size_t y, std::span<const std::size_t> cond,
                                      double alpha) const {
  if (n_ <= cond.size() + 3) {
    throw Error(ErrorCode::InsufficientSamples,
                "Fisher z needs more than |cond| + 3 rows (have " + std::to_string(n_) + ")");
  }
  if (constant_[x] || constant_[y]) return {0.0, 1.0, 1.0 > alpha};
  const double r = partial_correlation(x, y, cond);
  const double z = 0.5 * std::log((1.0 + r) / (1.0 - r)) *
                   std::sqrt(static_cast<double>(n_) - static_cast<double>(cond.size()) - 3.0);
  IndependenceVerdict v;
  v.statistic = std::abs(z);
  v.p_value = std::clamp(two_sided_normal_p(z), 0.0, 1.0);
  v.independent = v.p_value > alpha;
  return v;
}

IndependenceVerdict fisher_z(const PerformanceDataset& ds, std::size_t x, std::size_t y,
                             std::span<const std::size_t> cond, double alpha) {
  return FisherZTest(ds).test(x, y, cond, alpha);
}

// -------------------------------------------------------- mutual information

double conditional_mutual_information(std::span<const int> x, std::span<const int> y,
                                      std::span<const int> strata) {
  const std::size_t n = x.size();
  if (n == 0) return 0.0;
  std::map<int, std::map<std::pair<int, int>, double>> joint;
  std::map<int, std::map<int, double>> mx, my;
  std::map<int, double> ms;
  for (std::size_t i = 0; i < n; ++i) {
    joint[strata[i]][{x[i], y[i]}] += 1.0;
    mx[strata[i]][x[i]] += 1.0;
    my[strata[i]][y[i]] += 1.0;
    ms[strata[i]] += 1.0;
  }
  double info = 0.0;
  for (const auto& [s, cells] : joint) {
    const double ns = ms[s];
    for (const auto& [xy, c] : cells) {
      info += c * std::log2(c * ns / (mx[s][xy.first] * my[s][xy.second]));
    }
  }
  return std::max(0.0, info / static_cast<double>(n));
}

IndependenceVerdict mutual_info_test(const PerformanceDataset& ds, std::size_t x, std::size_t y,
                                     std::span<const std::size_t> cond, double alpha,
                                     std::size_t permutations, std::uint64_t seed) {
  if (x > y) std::swap(x, y);
  const std::size_t n = ds.rows();
  auto xs = level_codes(ds, x);
  const auto ys = level_codes(ds, y);

  std::vector<int> strata(n, 0);
  if (!cond.empty()) {
    std::vector<std::vector<int>> cond_codes;
    for (auto c : cond) cond_codes.push_back(level_codes(ds, c));
    std::map<std::vector<int>, int> cell_of;
    std::vector<int> raw(n);
    for (std::size_t r = 0; r < n; ++r) {
      std::vector<int> key;
      for (const auto& cc : cond_codes) key.push_back(cc[r]);
      raw[r] = cell_of.emplace(std::move(key), static_cast<int>(cell_of.size())).first->second;
    }
    std::vector<std::size_t> sizes(cell_of.size(), 0);
    for (int s : raw) ++sizes[static_cast<std::size_t>(s)];
    const int pooled = -1;
    bool any_kept = false;
    for (std::size_t r = 0; r < n; ++r) {
      const bool small = sizes[static_cast<std::size_t>(raw[r])] < kMinStratumRows;
      strata[r] = small ? pooled : raw[r];
      any_kept = any_kept || !small;
    }
    if (!any_kept) {
      throw Error(ErrorCode::InsufficientSamples, "every conditioning stratum has fewer than 5 rows");
    }
  } else if (n < kMinStratumRows) {
    throw Error(ErrorCode::InsufficientSamples, "mutual information test needs at least 5 rows");
  }

  const double observed = conditional_mutual_information(xs, ys, strata);

  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t r = 0; r < n; ++r) members[strata[r]].push_back(r);

  Rng rng(seed);
  std::size_t at_least = 0;
  std::vector<int> shuffled = xs;
  for (std::size_t p = 0; p < permutations; ++p) {
    for (const auto& [s, rows] : members) {
      std::vector<int> vals;
      vals.reserve(rows.size());
      for (auto r : rows) vals.push_back(xs[r]);
      std::shuffle(vals.begin(), vals.end(), rng);
      for (std::size_t i = 0; i < rows.size(); ++i) shuffled[rows[i]] = vals[i];
    }
    if (conditional_mutual_information(shuffled, ys, strata) >= observed - 1e-12) ++at_least;
  }
  IndependenceVerdict v;
  v.statistic = observed;
  v.p_value = static_cast<double>(at_least + 1) / static_cast<double>(permutations + 1);
  v.independent = v.p_value > alpha;
  return v;
}

// ------------------------------------------------------ IndependenceTester

IndependenceTester::IndependenceTester(const PerformanceDataset& ds, CiOptions options)
    : ds_(&ds), options_(options), fisher_(ds) {}

bool IndependenceTester::uses_mutual_info(std::size_t x, std::size_t y,
                                          std::span<const std::size_t> cond) const {
  const auto& schema = ds_->schema();
  if (!schema[x].is_discrete() || !schema[y].is_discrete()) return false;
  return std::all_of(cond.begin(), cond.end(), [&](std::size_t c) { return schema[c].is_discrete(); });
}

IndependenceVerdict IndependenceTester::test(std::size_t x, std::size_t y,
                                             std::span<const std::size_t> cond) const {
  if (uses_mutual_info(x, y, cond)) {
    std::uint64_t key = mix_seed(options_.seed, std::min(x, y), std::max(x, y));
    for (auto c : cond) key = mix_seed(key, c);
    return mutual_info_test(*ds_, x, y, cond, options_.alpha, options_.permutations, key);
  }
  return fisher_.test(x, y, cond, options_.alpha);
}

}  // namespace causalperf
