#pragma once

#include "gpyield/core.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace gpyield {

namespace detail {

inline double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Mass of the standard normal on [a, b], evaluated on the tail side that keeps precision.
inline double std_normal_mass(double a, double b) {
  if (a >= 0.0) return 0.5 * (std::erfc(a / std::numbers::sqrt2) - std::erfc(b / std::numbers::sqrt2));
  if (b <= 0.0) return 0.5 * (std::erfc(-b / std::numbers::sqrt2) - std::erfc(-a / std::numbers::sqrt2));
  return 1.0 - 0.5 * std::erfc(-a / std::numbers::sqrt2) - 0.5 * std::erfc(b / std::numbers::sqrt2);
}

inline double adaptive_simpson_step(const std::function<double(double)>& f, double a, double b, double fa,
                                    double fm, double fb, double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  return adaptive_simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         adaptive_simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

/// Adaptive Simpson quadrature of f over [a, b] to absolute tolerance tol.
inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol,
                               int max_depth = 40) {
  const double fa = f(a);
  const double fb = f(b);
  const double fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return adaptive_simpson_step(f, a, b, fa, fm, fb, whole, tol, max_depth);
}

}  // namespace detail

/// Multivariate Gaussian truncated to an axis-aligned box, with a covariance scale
/// factor in [0, 1]. Immutable after construction.
class TruncatedGaussian {
 public:
  TruncatedGaussian(Vector mean, Matrix covariance, Vector lower, Vector upper, double scale = 1.0)
      : mean_(std::move(mean)),
        covariance_(std::move(covariance)),
        lower_(std::move(lower)),
        upper_(std::move(upper)),
        scale_(scale),
        cache_(std::make_shared<NormalizerCache>()) {
    const auto d = mean_.size();
    if (d == 0) throw InvalidArgument("TruncatedGaussian: empty mean vector");
    require_dimension(covariance_.rows(), d, "TruncatedGaussian covariance rows");
    require_dimension(covariance_.cols(), d, "TruncatedGaussian covariance cols");
    require_dimension(lower_.size(), d, "TruncatedGaussian lower bounds");
    require_dimension(upper_.size(), d, "TruncatedGaussian upper bounds");
    if ((covariance_ - covariance_.transpose()).cwiseAbs().maxCoeff() >
        1e-12 * std::max(1.0, covariance_.cwiseAbs().maxCoeff())) {
      throw InvalidArgument("TruncatedGaussian: covariance is not symmetric");
    }
    Eigen::LLT<Matrix> llt(covariance_);
    if (llt.info() != Eigen::Success) {
      throw InvalidArgument("TruncatedGaussian: covariance is not positive definite");
    }
    chol_ = llt.matrixL();
    for (Eigen::Index i = 0; i < d; ++i) {
      if (!(lower_[i] < upper_[i])) {
        throw InvalidArgument("TruncatedGaussian: lower bound must be below upper bound in component " +
                              std::to_string(i));
      }
      if (mean_[i] < lower_[i] || mean_[i] > upper_[i]) {
        throw InvalidArgument("TruncatedGaussian: mean outside bounds in component " + std::to_string(i));
      }
    }
    if (!(scale_ >= 0.0 && scale_ <= 1.0)) {
      throw InvalidArgument("TruncatedGaussian: scale must lie in [0, 1]");
    }
    diagonal_ = covariance_.isDiagonal(0.0);
  }

  /// Independent components: covariance diag(stddev^2).
  static TruncatedGaussian independent(const Vector& mean, const Vector& stddev, const Vector& lower,
                                       const Vector& upper, double scale = 1.0) {
    require_dimension(stddev.size(), mean.size(), "TruncatedGaussian stddev");
    return {mean, stddev.array().square().matrix().asDiagonal(), lower, upper, scale};
  }

  std::size_t dimension() const { return static_cast<std::size_t>(mean_.size()); }
  const Vector& mean() const { return mean_; }
  const Matrix& covariance() const { return covariance_; }
  const Vector& lower() const { return lower_; }
  const Vector& upper() const { return upper_; }
  double scale() const { return scale_; }
  bool degenerate() const { return scale_ == 0.0; }
  Matrix effective_covariance() const { return scale_ * covariance_; }

  bool contains(const Vector& p) const {
    require_dimension(p.size(), mean_.size(), "TruncatedGaussian::contains");
    return (p.array() >= lower_.array()).all() && (p.array() <= upper_.array()).all();
  }

  TruncatedGaussian scaled(double upsilon) const {
    if (!(upsilon >= 0.0 && upsilon <= 1.0)) {
      throw InvalidArgument("TruncatedGaussian::scaled: upsilon must lie in [0, 1]");
    }
    return {mean_, covariance_, lower_, upper_, upsilon};
  }

  /// Unnormalized Gaussian kernel exp(-1/2 d^T (scale*Sigma)^-1 d).
  double kernel(const Vector& p) const {
    require_dimension(p.size(), mean_.size(), "TruncatedGaussian::kernel");
    if (degenerate()) throw DegenerateDistribution("density is undefined for scale = 0");
    const Vector z = chol_.triangularView<Eigen::Lower>().solve(p - mean_) / std::sqrt(scale_);
    return std::exp(-0.5 * z.squaredNorm());
  }

  /// Integral of kernel() over the truncation box. Computed once and cached.
  double normalizer() const {
    if (degenerate()) throw DegenerateDistribution("density is undefined for scale = 0");
    std::call_once(cache_->once, [this] { cache_->value = compute_normalizer(); });
    return cache_->value;
  }

  double density(const Vector& p) const {
    require_dimension(p.size(), mean_.size(), "TruncatedGaussian::density");
    if (degenerate()) throw DegenerateDistribution("density is undefined for scale = 0");
    if (!contains(p)) return 0.0;
    return kernel(p) / normalizer();
  }

  /// n draws by rejection from N(mean, scale*Sigma); deterministic in seed.
  std::vector<Vector> sample(std::size_t n, std::uint64_t seed) const {
    if (n == 0) throw InvalidArgument("TruncatedGaussian::sample: n must be >= 1");
    std::vector<Vector> out;
    out.reserve(n);
    if (degenerate()) {
      out.assign(n, mean_);
      return out;
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double root_scale = std::sqrt(scale_);
    const auto d = mean_.size();
    Vector z(d);
    std::uint64_t attempts = 0;
    while (out.size() < n) {
      for (Eigen::Index i = 0; i < d; ++i) z[i] = normal(rng);
      Vector p = mean_ + root_scale * (chol_ * z);
      ++attempts;
      if ((p.array() >= lower_.array()).all() && (p.array() <= upper_.array()).all()) {
        out.push_back(std::move(p));
      } else if (attempts >= kMinAttemptsForRateCheck &&
                 static_cast<double>(out.size()) < kMinAcceptanceRate * static_cast<double>(attempts)) {
        throw SamplingError("TruncatedGaussian::sample: acceptance rate below 1e-6 after " +
                            std::to_string(attempts) + " proposals; the truncation box excludes " +
                            "essentially all probability mass");
      }
    }
    return out;
  }

 private:
  static constexpr double kMinAcceptanceRate = 1e-6;
  static constexpr std::uint64_t kMinAttemptsForRateCheck = 10'000'000;
  static constexpr std::size_t kMonteCarloNormalizerDraws = 1'000'000;

  struct NormalizerCache {
    std::once_flag once;
    double value = 0.0;
  };

  double compute_normalizer() const {
    const auto d = mean_.size();
    if (diagonal_) {
      double z = 1.0;
      for (Eigen::Index i = 0; i < d; ++i) {
        const double sd = std::sqrt(scale_ * covariance_(i, i));
        z *= std::sqrt(2.0 * std::numbers::pi) * sd *
             detail::std_normal_mass((lower_[i] - mean_[i]) / sd, (upper_[i] - mean_[i]) / sd);
      }
      return z;
    }
    if (d == 2) {
      const double scale_tol = 1e-12 * std::sqrt(effective_covariance().determinant());
      auto inner = [&](double x) {
        return detail::adaptive_simpson(
            [&](double y) { return kernel(Vector{{x, y}}); }, lower_[1], upper_[1], scale_tol);
      };
      return detail::adaptive_simpson(inner, lower_[0], upper_[0], scale_tol);
    }
    // Full covariance above two dimensions: Gaussian volume times the Monte Carlo
    // estimate of the box probability.
    std::mt19937_64 rng(0x5eed'1234ULL);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double root_scale = std::sqrt(scale_);
    Vector z(d);
    std::size_t inside = 0;
    for (std::size_t k = 0; k < kMonteCarloNormalizerDraws; ++k) {
      for (Eigen::Index i = 0; i < d; ++i) z[i] = normal(rng);
      const Vector p = mean_ + root_scale * (chol_ * z);
      if ((p.array() >= lower_.array()).all() && (p.array() <= upper_.array()).all()) ++inside;
    }
    const double log_det = 2.0 * chol_.diagonal().array().log().sum() + static_cast<double>(d) * std::log(scale_);
    const double gaussian_volume =
        std::exp(0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + 0.5 * log_det);
    return gaussian_volume * static_cast<double>(inside) / static_cast<double>(kMonteCarloNormalizerDraws);
  }

  Vector mean_;
  Matrix covariance_;
  Vector lower_;
  Vector upper_;
  double scale_;
  Matrix chol_;
  bool diagonal_ = false;
  std::shared_ptr<NormalizerCache> cache_;
};

}  // namespace gpyield
