#include "causalperf/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "causalperf/error.hpp"
#include "causalperf/rng.hpp"

namespace causalperf {

namespace {

constexpr double kTiny = 1e-300;

std::vector<int> compact(std::vector<int> codes) {
  std::vector<int> seen = codes;
  std::sort(seen.begin(), seen.end());
  seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
  for (auto& c : codes) c = static_cast<int>(std::lower_bound(seen.begin(), seen.end(), c) - seen.begin());
  return codes;
}

double plogp_sum(const double* p, std::size_t n) {
  double h = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (p[i] > 0.0) h -= p[i] * std::log2(p[i]);
  }
  return h;
}

}  // namespace

std::vector<int> discretize_equal_frequency(std::span<const double> values, std::size_t bins) {
  const std::size_t n = values.size();
  if (n == 0) return {};
  if (bins == 0) throw Error(ErrorCode::InvalidArgument, "bins must be positive");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> cuts;
  for (std::size_t k = 1; k < bins; ++k) cuts.push_back(sorted[k * n / bins]);
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  std::vector<int> codes(n);
  for (std::size_t i = 0; i < n; ++i) {
    codes[i] = static_cast<int>(std::upper_bound(cuts.begin(), cuts.end(), values[i]) - cuts.begin());
  }
  return compact(std::move(codes));
}

std::vector<int> entropy_codes(const PerformanceDataset& ds, std::size_t column) {
  const auto& var = ds.schema()[column];
  const auto values = ds.column(column);
  if (var.is_continuous()) return discretize_equal_frequency(values);
  const auto levels = var.levels();
  std::vector<int> codes(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    codes[i] = static_cast<int>(std::lower_bound(levels.begin(), levels.end(), values[i] - 1e-9) - levels.begin());
  }
  return compact(std::move(codes));
}

double entropy_bits(std::span<const int> codes) {
  if (codes.empty()) return 0.0;
  std::map<int, double> counts;
  for (int c : codes) counts[c] += 1.0;
  double h = 0.0;
  const double n = static_cast<double>(codes.size());
  for (const auto& [_, c] : counts) h -= (c / n) * std::log2(c / n);
  return std::max(0.0, h);
}

double entropy_bits(const Eigen::VectorXd& probabilities) {
  return std::max(0.0, plogp_sum(probabilities.data(), static_cast<std::size_t>(probabilities.size())));
}

Eigen::MatrixXd joint_distribution(std::span<const int> x, std::span<const int> y) {
  if (x.size() != y.size()) throw Error(ErrorCode::InvalidArgument, "code vectors differ in length");
  const auto cx = compact({x.begin(), x.end()});
  const auto cy = compact({y.begin(), y.end()});
  const int nx = cx.empty() ? 0 : *std::max_element(cx.begin(), cx.end()) + 1;
  const int ny = cy.empty() ? 0 : *std::max_element(cy.begin(), cy.end()) + 1;
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(nx, ny);
  for (std::size_t i = 0; i < cx.size(); ++i) p(cx[i], cy[i]) += 1.0;
  if (!cx.empty()) p /= static_cast<double>(cx.size());
  return p;
}

double mutual_information(const Eigen::MatrixXd& pxy) {
  const Eigen::VectorXd px = pxy.rowwise().sum();
  const Eigen::VectorXd py = pxy.colwise().sum().transpose();
  double info = 0.0;
  for (Eigen::Index i = 0; i < pxy.rows(); ++i) {
    for (Eigen::Index j = 0; j < pxy.cols(); ++j) {
      const double p = pxy(i, j);
      if (p > 0.0) info += p * std::log2(p / (px(i) * py(j)));
    }
  }
  return std::max(0.0, info);
}

LatentSolution latent_search(const Eigen::MatrixXd& pxy, double beta, std::size_t alphabet, std::uint64_t seed,
                             std::size_t iterations, double tolerance) {
  const Eigen::Index nx = pxy.rows();
  const Eigen::Index ny = pxy.cols();
  const auto k = static_cast<Eigen::Index>(std::max<std::size_t>(1, alphabet));
  const Eigen::VectorXd px = pxy.rowwise().sum();
  const Eigen::VectorXd py = pxy.colwise().sum().transpose();

  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::MatrixXd q(nx * ny, k);
  for (Eigen::Index r = 0; r < q.rows(); ++r) {
    for (Eigen::Index z = 0; z < k; ++z) q(r, z) = 0.05 + unif(rng);
    q.row(r) /= q.row(r).sum();
  }

  LatentSolution out;
  Eigen::MatrixXd qzx(nx, k), qzy(ny, k);
  Eigen::VectorXd qz(k);
  for (std::size_t it = 0; it < iterations; ++it) {
    qzx.setZero();
    qzy.setZero();
    qz.setZero();
    for (Eigen::Index x = 0; x < nx; ++x) {
      for (Eigen::Index y = 0; y < ny; ++y) {
        const double p = pxy(x, y);
        if (p <= 0.0) continue;
        qzx.row(x) += p * q.row(x * ny + y);
        qzy.row(y) += p * q.row(x * ny + y);
        qz += p * q.row(x * ny + y).transpose();
      }
    }
    for (Eigen::Index x = 0; x < nx; ++x) {
      if (px(x) > 0.0) qzx.row(x) /= px(x);
    }
    for (Eigen::Index y = 0; y < ny; ++y) {
      if (py(y) > 0.0) qzy.row(y) /= py(y);
    }
    double step = 0.0;
    for (Eigen::Index x = 0; x < nx; ++x) {
      for (Eigen::Index y = 0; y < ny; ++y) {
        Eigen::RowVectorXd next(k);
        for (Eigen::Index z = 0; z < k; ++z) {
          next(z) = qzx(x, z) * qzy(y, z) / std::pow(std::max(qz(z), kTiny), 1.0 - beta);
        }
        const double total = next.sum();
        if (total > 0.0) {
          next /= total;
        } else {
          next = q.row(x * ny + y);
        }
        step += pxy(x, y) * 0.5 * (next - q.row(x * ny + y)).cwiseAbs().sum();
        q.row(x * ny + y) = next;
      }
    }
    out.iterations = it + 1;
    if (step < tolerance) break;
  }

  // Final H(Z) and I(X;Y|Z) of q(x, y, z) = p(x, y) q(z | x, y).
  qz.setZero();
  for (Eigen::Index x = 0; x < nx; ++x) {
    for (Eigen::Index y = 0; y < ny; ++y) qz += pxy(x, y) * q.row(x * ny + y).transpose();
  }
  double cmi = 0.0;
  for (Eigen::Index z = 0; z < k; ++z) {
    if (qz(z) <= 0.0) continue;
    Eigen::MatrixXd slice(nx, ny);
    for (Eigen::Index x = 0; x < nx; ++x) {
      for (Eigen::Index y = 0; y < ny; ++y) slice(x, y) = pxy(x, y) * q(x * ny + y, z) / qz(z);
    }
    cmi += qz(z) * mutual_information(slice);
  }
  out.q_z_given_xy = std::move(q);
  out.entropy_z = entropy_bits(qz);
  out.conditional_mi = std::max(0.0, cmi);
  return out;
}

CommonEntropy common_entropy(const Eigen::MatrixXd& pxy, std::uint64_t seed, const LatentSearchOptions& options) {
  const Eigen::VectorXd px = pxy.rowwise().sum();
  const Eigen::VectorXd py = pxy.colwise().sum().transpose();
  const double hx = entropy_bits(px);
  const double hy = entropy_bits(py);
  const double tol = std::max(options.cmi_floor, options.cmi_relative * mutual_information(pxy));
  const std::size_t alphabet =
      std::min<std::size_t>(static_cast<std::size_t>(pxy.rows() * pxy.cols()), options.max_alphabet);

  CommonEntropy best;
  best.entropy = std::min(hx, hy);
  for (std::size_t i = 0; i < options.betas.size(); ++i) {
    const auto sol = latent_search(pxy, options.betas[i], alphabet, mix_seed(seed, i), options.iterations,
                                   options.tolerance);
    if (sol.conditional_mi <= tol && (!best.found || sol.entropy_z < best.entropy)) {
      best.entropy = sol.entropy_z;
      best.conditional_mi = sol.conditional_mi;
      best.beta = options.betas[i];
      best.found = true;
    }
  }
  if (!std::isfinite(best.entropy)) throw Error(ErrorCode::NonFiniteEntropy, "latent entropy is not finite");
  return best;
}

double min_entropy_coupling(std::vector<std::vector<double>> distributions) {
  if (distributions.empty()) return 0.0;
  for (auto& d : distributions) {
    const double total = std::accumulate(d.begin(), d.end(), 0.0);
    if (total <= 0.0) throw Error(ErrorCode::InvalidArgument, "coupling input has zero mass");
    for (auto& v : d) v /= total;
  }
  double remaining = 1.0;
  double h = 0.0;
  while (remaining > 1e-12) {
    double r = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> argmax(distributions.size());
    for (std::size_t i = 0; i < distributions.size(); ++i) {
      const auto& d = distributions[i];
      argmax[i] = static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin());
      r = std::min(r, d[argmax[i]]);
    }
    if (r <= 1e-15) break;
    for (std::size_t i = 0; i < distributions.size(); ++i) distributions[i][argmax[i]] -= r;
    h -= r * std::log2(r);
    remaining -= r;
  }
  return std::max(0.0, h);
}

double differential_entropy(std::span<const double> values, std::size_t bins) {
  const std::size_t n = values.size();
  if (n < 2) return 0.0;
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double span = sorted.back() - sorted.front();
  const double scale = std::max({std::abs(sorted.front()), std::abs(sorted.back()), 1e-300});
  const double min_width = std::max(span * 1e-9, scale * 1e-12);
  bins = std::min(bins, n);
  double h = 0.0;
  std::size_t lo = 0;
  for (std::size_t b = 0; b < bins; ++b) {
    const std::size_t hi = (b + 1) * n / bins;
    const double p = static_cast<double>(hi - lo) / static_cast<double>(n);
    const double left = sorted[lo];
    const double right = hi < n ? sorted[hi] : sorted[n - 1];
    const double width = std::max(right - left, min_width);
    if (p > 0.0) h += -p * std::log2(p) + p * std::log2(width);
    lo = hi;
  }
  return h;
}

std::vector<double> polynomial_residuals(std::span<const double> x, std::span<const double> y, int degree) {
  const auto n = static_cast<Eigen::Index>(x.size());
  if (x.size() != y.size()) throw Error(ErrorCode::InvalidArgument, "x and y differ in length");
  // Standardize x so high powers stay well conditioned.
  double mean = 0.0, sd = 0.0;
  for (double v : x) mean += v;
  mean /= std::max<double>(1.0, static_cast<double>(n));
  for (double v : x) sd += (v - mean) * (v - mean);
  sd = std::sqrt(sd / std::max<double>(1.0, static_cast<double>(n)));
  if (sd <= 0.0) sd = 1.0;
  Eigen::MatrixXd features(n, degree + 1);
  Eigen::VectorXd target(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double power = 1.0;
    const double z = (x[static_cast<std::size_t>(i)] - mean) / sd;
    for (int d = 0; d <= degree; ++d) {
      features(i, d) = power;
      power *= z;
    }
    target(i) = y[static_cast<std::size_t>(i)];
  }
  const Eigen::VectorXd coef = features.completeOrthogonalDecomposition().solve(target);
  const Eigen::VectorXd resid = target - features * coef;
  return {resid.data(), resid.data() + resid.size()};
}

}  // namespace causalperf
