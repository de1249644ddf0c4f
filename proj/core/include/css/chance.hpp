#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

namespace css::chance {

/// Scalar random variable f = b' (x + theta) + c, affine in the zero-mean
/// measurement noise theta.
struct AffineRandomScalar {
  Eigen::VectorXd b;
  double c = 0.0;

  double mean(const Eigen::VectorXd& x) const { return b.dot(x) + c; }
};

/// State-dependent covariance map; must be symmetric PSD wherever evaluated.
using CovarianceField = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

/// Measurement-noise covariance Sigma(x) = sigma0 + sum_l x_l * linear[l],
/// constant when `linear` is empty.
class NoiseModel {
 public:
  NoiseModel() = default;
  explicit NoiseModel(Eigen::MatrixXd sigma0, std::vector<Eigen::MatrixXd> linear = {});

  Eigen::MatrixXd covariance(const Eigen::VectorXd& x) const;
  bool is_constant() const { return linear_.empty(); }
  Eigen::Index dim() const { return sigma0_.rows(); }

  const Eigen::MatrixXd& sigma0() const { return sigma0_; }
  const std::vector<Eigen::MatrixXd>& linear_terms() const { return linear_; }

  CovarianceField field() const;

 private:
  Eigen::MatrixXd sigma0_;
  std::vector<Eigen::MatrixXd> linear_;
};

/// Value of the Chebyshev certificate
///   mean^2 + var + 2 t mean + t^2 (1 - eta);
/// a nonpositive value proves P(f >= 0) <= eta for every distribution with
/// the given mean and variance.
double chebyshev_residual(double mean_f, double var_f, double t, double eta);

/// Certificate for P(f >= 0) <= eta at the point x under Sigma(x). Throws
/// non_psd when the variance quadratic form drops below -1e-12.
double relax_chance_ge(const AffineRandomScalar& f, const Eigen::VectorXd& x,
                       const NoiseModel& sigma, double t, double eta);

struct MonteCarloEstimate {
  double estimate = 0.0;         // empirical P(f >= 0)
  double wilson_halfwidth = 0.0; // 95% Wilson interval half-width
  std::uint64_t hits = 0;
  std::uint64_t samples = 0;
};

/// Ground-truth estimator: draws theta ~ N(0, Sigma(x)) and counts f >= 0.
/// Sampling is chunked with per-chunk derived seeds, so the result is
/// bit-identical for a fixed (seed, samples) pair regardless of worker
/// count. Throws cholesky_failure when Sigma(x) is not PSD.
MonteCarloEstimate monte_carlo_probability(const AffineRandomScalar& f,
                                           const Eigen::VectorXd& x,
                                           const CovarianceField& sigma,
                                           std::uint64_t samples, std::uint64_t seed);

MonteCarloEstimate monte_carlo_probability(const AffineRandomScalar& f,
                                           const Eigen::VectorXd& x, const NoiseModel& sigma,
                                           std::uint64_t samples, std::uint64_t seed);

}  // namespace css::chance
