#include "css/chance.hpp"

#include <atomic>
#include <cmath>

#include "css/error.hpp"
#include "css/linalg.hpp"
#include "css/parallel.hpp"
#include "css/rng.hpp"

namespace css::chance {

NoiseModel::NoiseModel(Eigen::MatrixXd sigma0, std::vector<Eigen::MatrixXd> linear)
    : sigma0_(std::move(sigma0)), linear_(std::move(linear)) {
  if (sigma0_.rows() != sigma0_.cols()) {
    throw Error(ErrorCode::dimension_mismatch, "sigma0 must be square");
  }
  for (const auto& term : linear_) {
    if (term.rows() != sigma0_.rows() || term.cols() != sigma0_.cols()) {
      throw Error(ErrorCode::dimension_mismatch, "linear covariance term shape mismatch");
    }
  }
}

Eigen::MatrixXd NoiseModel::covariance(const Eigen::VectorXd& x) const {
  Eigen::MatrixXd sigma = sigma0_;
  if (!linear_.empty()) {
    if (x.size() != static_cast<Eigen::Index>(linear_.size())) {
      throw Error(ErrorCode::dimension_mismatch, "state dimension does not match linear terms");
    }
    for (std::size_t l = 0; l < linear_.size(); ++l) {
      sigma += x[static_cast<Eigen::Index>(l)] * linear_[l];
    }
  }
  return sigma;
}

CovarianceField NoiseModel::field() const {
  NoiseModel copy = *this;
  return [copy](const Eigen::VectorXd& x) { return copy.covariance(x); };
}

double chebyshev_residual(double mean_f, double var_f, double t, double eta) {
  if (!(t > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "t must be positive");
  }
  return mean_f * mean_f + var_f + 2.0 * t * mean_f + t * t * (1.0 - eta);
}

double relax_chance_ge(const AffineRandomScalar& f, const Eigen::VectorXd& x,
                       const NoiseModel& sigma, double t, double eta) {
  double var = f.b.dot(sigma.covariance(x) * f.b);
  if (var < -1e-12) {
    throw Error(ErrorCode::non_psd, "variance quadratic form is negative");
  }
  if (var < 0.0) var = 0.0;
  return chebyshev_residual(f.mean(x), var, t, eta);
}

namespace {

constexpr std::uint64_t kChunk = 1 << 13;

double wilson_halfwidth(double p_hat, double n) {
  constexpr double z = 1.959963984540054;  // 97.5% normal quantile
  const double z2 = z * z;
  return z * std::sqrt(p_hat * (1.0 - p_hat) / n + z2 / (4.0 * n * n)) / (1.0 + z2 / n);
}

}  // namespace

MonteCarloEstimate monte_carlo_probability(const AffineRandomScalar& f,
                                           const Eigen::VectorXd& x,
                                           const CovarianceField& sigma,
                                           std::uint64_t samples, std::uint64_t seed) {
  if (samples == 0) {
    throw Error(ErrorCode::invalid_argument, "samples must be positive");
  }
  const Eigen::MatrixXd cov = sigma(x);
  if (cov.rows() != x.size() || f.b.size() != x.size()) {
    throw Error(ErrorCode::dimension_mismatch, "noise/point/coefficient dimensions disagree");
  }
  const Eigen::MatrixXd root = psd_sqrt(cov);
  // Only the scalar projection of theta matters: f = mean + (root' b)' z.
  const Eigen::VectorXd proj = root.transpose() * f.b;
  const double mean = f.mean(x);
  const Eigen::Index dim = proj.size();

  const std::uint64_t chunks = (samples + kChunk - 1) / kChunk;
  std::atomic<std::uint64_t> hits{0};
  parallel_for(static_cast<std::size_t>(chunks), [&](std::size_t chunk) {
    const std::uint64_t begin = static_cast<std::uint64_t>(chunk) * kChunk;
    const std::uint64_t count = std::min<std::uint64_t>(kChunk, samples - begin);
    Rng rng(derive_seed(seed, chunk));
    std::uint64_t local = 0;
    for (std::uint64_t s = 0; s < count; ++s) {
      double value = mean;
      for (Eigen::Index i = 0; i < dim; ++i) value += proj[i] * rng.normal();
      if (value >= 0.0) ++local;
    }
    hits.fetch_add(local);
  });

  MonteCarloEstimate out;
  out.hits = hits.load();
  out.samples = samples;
  out.estimate = static_cast<double>(out.hits) / static_cast<double>(samples);
  out.wilson_halfwidth = wilson_halfwidth(out.estimate, static_cast<double>(samples));
  return out;
}

MonteCarloEstimate monte_carlo_probability(const AffineRandomScalar& f,
                                           const Eigen::VectorXd& x, const NoiseModel& sigma,
                                           std::uint64_t samples, std::uint64_t seed) {
  return monte_carlo_probability(f, x, sigma.field(), samples, seed);
}

}  // namespace css::chance
