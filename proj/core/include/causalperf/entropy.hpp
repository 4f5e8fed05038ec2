#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "causalperf/dataset.hpp"

namespace causalperf {

inline constexpr std::size_t kEntropyBins = 8;

/// Equal-frequency binning into at most `bins` codes (ties stay together, so
/// heavy atoms can leave fewer non-empty bins). Codes are compacted to 0..k-1.
std::vector<int> discretize_equal_frequency(std::span<const double> values, std::size_t bins = kEntropyBins);

/// Level codes for discrete columns, equal-frequency bins for continuous ones.
std::vector<int> entropy_codes(const PerformanceDataset& ds, std::size_t column);

/// Shannon entropy in bits of the empirical distribution of codes.
double entropy_bits(std::span<const int> codes);
double entropy_bits(const Eigen::VectorXd& probabilities);

/// Empirical joint p(x, y) over compacted codes (rows x, cols y).
Eigen::MatrixXd joint_distribution(std::span<const int> x, std::span<const int> y);

/// I(X;Y) in bits of a joint table.
double mutual_information(const Eigen::MatrixXd& pxy);

struct LatentSearchOptions {
  std::size_t max_alphabet = 16;
  std::size_t iterations = 100;
  double tolerance = 1e-6;
  std::vector<double> betas{0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0};
  /// Accept a latent when I(X;Y|Z) <= max(cmi_floor, cmi_relative * I(X;Y)).
  double cmi_floor = 1e-3;
  double cmi_relative = 0.05;
};

struct LatentSolution {
  /// q(z | x, y), one row per cell x * |Y| + y.
  Eigen::MatrixXd q_z_given_xy;
  double entropy_z = 0.0;
  double conditional_mi = 0.0;
  std::size_t iterations = 0;
};

/// One run of the iterative update
///   q(z|x,y) <- q(z|x) q(z|y) / q(z)^(1 - beta)
/// which trades I(X;Y|Z) against beta * H(Z).
LatentSolution latent_search(const Eigen::MatrixXd& pxy, double beta, std::size_t alphabet, std::uint64_t seed,
                             std::size_t iterations = 100, double tolerance = 1e-6);

struct CommonEntropy {
  double entropy = 0.0;        // H(Z) of the accepted latent, bits
  double conditional_mi = 0.0;
  double beta = 0.0;
  bool found = false;          // false -> entropy = min(H(X), H(Y))
};

/// Smallest H(Z) over the beta sweep among latents that render X and Y
/// conditionally independent (within the CMI tolerance).
CommonEntropy common_entropy(const Eigen::MatrixXd& pxy, std::uint64_t seed,
                             const LatentSearchOptions& options = {});

/// Greedy minimum-entropy coupling of the given distributions (each a
/// probability vector). Returns the entropy of the coupling in bits.
double min_entropy_coupling(std::vector<std::vector<double>> distributions);

/// Histogram estimate of differential entropy in bits using equal-frequency
/// bins: H(bins) + sum_i p_i log2(width_i).
double differential_entropy(std::span<const double> values, std::size_t bins = kEntropyBins);

/// Residuals of a least-squares polynomial fit y ~ poly(x, degree).
std::vector<double> polynomial_residuals(std::span<const double> x, std::span<const double> y, int degree);

}  // namespace causalperf
