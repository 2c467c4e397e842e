#pragma once

// Gaussian process regression with a squared-exponential kernel, a constant prior
// mean equal to the training-target average, and an append-one-point Cholesky update.

#include "gpyield/core.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace gpyield {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double x) const { return x >= lo && x <= hi; }
  double clamp(double x) const { return std::min(hi, std::max(lo, x)); }
};

/// Hyperparameters of k(p, q) = signal * exp(-|p - q|^2 / (2 length_scale^2)) plus the
/// observation noise added on the diagonal of the training covariance.
struct KernelParams {
  double signal = 0.1;
  double length_scale = 1.0;
  double noise = 1e-5;
  Interval signal_bounds{1e-5, 1e-1};
  Interval length_bounds{1e-5, 1e5};

  void validate() const {
    if (!(signal > 0.0) || !(length_scale > 0.0)) {
      throw InvalidArgument("KernelParams: signal and length_scale must be positive");
    }
    if (!(noise >= 0.0)) throw InvalidArgument("KernelParams: noise must be nonnegative");
    if (!(signal_bounds.lo > 0.0 && signal_bounds.lo <= signal_bounds.hi) ||
        !(length_bounds.lo > 0.0 && length_bounds.lo <= length_bounds.hi)) {
      throw InvalidArgument("KernelParams: bounds must be positive, nonempty intervals");
    }
    if (!signal_bounds.contains(signal) || !length_bounds.contains(length_scale)) {
      throw InvalidArgument("KernelParams: signal/length_scale outside their bounds");
    }
  }
};

inline double kernel_eval(const KernelParams& k, const Vector& p, const Vector& q) {
  require_dimension(q.size(), p.size(), "kernel_eval");
  return k.signal * std::exp(-(p - q).squaredNorm() / (2.0 * k.length_scale * k.length_scale));
}

namespace detail {

/// Pairwise squared distances between the rows of a and the rows of b.
inline Matrix squared_distances(const Matrix& a, const Matrix& b) {
  Matrix d(a.rows(), b.rows());
  for (Eigen::Index j = 0; j < b.rows(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) d(i, j) = (a.row(i) - b.row(j)).squaredNorm();
  }
  return d;
}

inline Matrix rbf_from_distances(const Matrix& sq, double signal, double length_scale) {
  return signal * (sq.array() * (-0.5 / (length_scale * length_scale))).exp().matrix();
}

inline Matrix stack_rows(const std::vector<Vector>& points) {
  if (points.empty()) return {};
  Matrix m(static_cast<Eigen::Index>(points.size()), points.front().size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    require_dimension(points[i].size(), m.cols(), "stack_rows");
    m.row(static_cast<Eigen::Index>(i)) = points[i].transpose();
  }
  return m;
}

}  // namespace detail

/// Kernel matrix between the rows of a and the rows of b (no noise term).
inline Matrix kernel_matrix(const KernelParams& k, const Matrix& a, const Matrix& b) {
  require_dimension(b.cols(), a.cols(), "kernel_matrix");
  return detail::rbf_from_distances(detail::squared_distances(a, b), k.signal, k.length_scale);
}

struct Prediction {
  double mean = 0.0;
  double std = 0.0;
};

class GprModel {
 public:
  /// Posterior variances below this (after round-off) are treated as a conditioning failure.
  static constexpr double kNegativeVarianceTolerance = 1e-8;

  GprModel() = default;

  static GprModel fit(const std::vector<Vector>& inputs, const std::vector<double>& targets,
                      const KernelParams& kernel) {
    if (inputs.size() != targets.size()) {
      throw DimensionError("GprModel::fit: " + std::to_string(inputs.size()) + " inputs but " +
                           std::to_string(targets.size()) + " targets");
    }
    return fit(detail::stack_rows(inputs), to_vector(targets), kernel);
  }

  static GprModel fit(Matrix inputs, Vector targets, const KernelParams& kernel) {
    kernel.validate();
    if (inputs.rows() == 0) throw InvalidArgument("GprModel::fit: need at least one training point");
    require_dimension(targets.size(), inputs.rows(), "GprModel::fit targets");
    if (!targets.allFinite() || !inputs.allFinite()) {
      throw InvalidArgument("GprModel::fit: training data must be finite");
    }
    GprModel m;
    m.kernel_ = kernel;
    m.inputs_ = std::move(inputs);
    m.targets_ = std::move(targets);
    m.duplicates_ = m.find_duplicates();
    if (m.duplicates_ && kernel.noise == 0.0) {
      throw ConditioningError("GprModel::fit: duplicate training inputs with zero noise");
    }
    m.factorize();
    return m;
  }

  bool fitted() const { return inputs_.rows() > 0; }
  std::size_t size() const { return static_cast<std::size_t>(inputs_.rows()); }
  std::size_t dimension() const { return static_cast<std::size_t>(inputs_.cols()); }
  const Matrix& inputs() const { return inputs_; }
  const Vector& targets() const { return targets_; }
  const KernelParams& kernel() const { return kernel_; }
  double prior_mean() const { return prior_mean_; }
  /// Lower-triangular L with L L^T = K + noise I.
  const Matrix& factor() const { return factor_; }
  /// w solving (K + noise I) w = targets - prior_mean.
  const Vector& dual_weights() const { return weights_; }
  /// Training inputs contain exact duplicates (only possible with noise > 0).
  bool has_duplicates() const { return duplicates_; }

  Prediction predict(const Vector& p) const {
    require_fitted("predict");
    require_dimension(p.size(), inputs_.cols(), "GprModel::predict");
    Vector k(inputs_.rows());
    for (Eigen::Index i = 0; i < inputs_.rows(); ++i) k[i] = kernel_eval(kernel_, inputs_.row(i).transpose(), p);
    const Vector v = factor_.triangularView<Eigen::Lower>().solve(k);
    return {prior_mean_ + k.dot(weights_), posterior_std(kernel_.signal - v.squaredNorm())};
  }

  /// Predictions at every row of `points`.
  std::vector<Prediction> predict_many(const Matrix& points) const {
    require_fitted("predict_many");
    require_dimension(points.cols(), inputs_.cols(), "GprModel::predict_many");
    const Matrix k = kernel_matrix(kernel_, inputs_, points);
    const Matrix v = factor_.triangularView<Eigen::Lower>().solve(k);
    const Vector mean = (k.transpose() * weights_).array() + prior_mean_;
    const Vector sq = v.colwise().squaredNorm().transpose();
    std::vector<Prediction> out(static_cast<std::size_t>(points.rows()));
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
      out[static_cast<std::size_t>(i)] = {mean[i], posterior_std(kernel_.signal - sq[i])};
    }
    return out;
  }

  /// Appends one training point, extending the Cholesky factor by one row (O(n^2)).
  /// The prior mean is recomputed from the augmented targets.
  void add_point(const Vector& p, double s) {
    require_fitted("add_point");
    require_dimension(p.size(), inputs_.cols(), "GprModel::add_point");
    if (!p.allFinite() || !std::isfinite(s)) throw InvalidArgument("GprModel::add_point: non-finite data");
    const Eigen::Index n = inputs_.rows();
    bool duplicate = false;
    for (Eigen::Index i = 0; i < n && !duplicate; ++i) duplicate = (inputs_.row(i).transpose() == p);
    if (duplicate && kernel_.noise == 0.0) {
      throw ConditioningError("GprModel::add_point: point duplicates a training input and noise is zero");
    }
    Vector k(n);
    for (Eigen::Index i = 0; i < n; ++i) k[i] = kernel_eval(kernel_, inputs_.row(i).transpose(), p);
    const Vector row = factor_.triangularView<Eigen::Lower>().solve(k);
    const double pivot = kernel_.signal + kernel_.noise - row.squaredNorm();
    if (!(pivot > std::numeric_limits<double>::epsilon() * kernel_.signal)) {
      throw ConditioningError("GprModel::add_point: covariance update is not positive definite (pivot " +
                              std::to_string(pivot) + "); the new point is numerically dependent on the " +
                              "training set");
    }
    inputs_.conservativeResize(n + 1, Eigen::NoChange);
    inputs_.row(n) = p.transpose();
    targets_.conservativeResize(n + 1);
    targets_[n] = s;
    factor_.conservativeResize(n + 1, n + 1);
    factor_.col(n).setZero();
    factor_.row(n).head(n) = row.transpose();
    factor_(n, n) = std::sqrt(pivot);
    duplicates_ = duplicates_ || duplicate;
    solve_weights();
  }

  GprModel updated(const Vector& p, double s) const {
    GprModel next = *this;
    next.add_point(p, s);
    return next;
  }

  /// log p(S | P, theta) = -1/2 y^T (K + noise I)^-1 y - 1/2 log det(K + noise I) - n/2 log 2 pi.
  double log_marginal_likelihood() const {
    require_fitted("log_marginal_likelihood");
    const Vector centered = targets_.array() - prior_mean_;
    return -0.5 * centered.dot(weights_) - factor_.diagonal().array().log().sum() -
           0.5 * static_cast<double>(size()) * std::log(2.0 * std::numbers::pi);
  }

 private:
  void require_fitted(const char* what) const {
    if (!fitted()) throw UnfittedModel(std::string("GprModel::") + what + ": model is not fitted");
  }

  double posterior_std(double variance) const {
    if (variance < -kNegativeVarianceTolerance) {
      throw ConditioningError("GprModel: posterior variance " + std::to_string(variance) +
                              " is negative beyond round-off");
    }
    return std::sqrt(std::max(0.0, variance));
  }

  bool find_duplicates() const {
    for (Eigen::Index i = 0; i < inputs_.rows(); ++i) {
      for (Eigen::Index j = i + 1; j < inputs_.rows(); ++j) {
        if (inputs_.row(i) == inputs_.row(j)) return true;
      }
    }
    return false;
  }

  void factorize() {
    Matrix k = kernel_matrix(kernel_, inputs_, inputs_);
    k.diagonal().array() += kernel_.noise;
    Eigen::LLT<Matrix> llt(k);
    if (llt.info() != Eigen::Success) {
      double min_dist = std::numeric_limits<double>::infinity();
      const Matrix d = detail::squared_distances(inputs_, inputs_);
      for (Eigen::Index i = 0; i < d.rows(); ++i) {
        for (Eigen::Index j = i + 1; j < d.cols(); ++j) min_dist = std::min(min_dist, std::sqrt(d(i, j)));
      }
      throw ConditioningError("GprModel::fit: Cholesky factorization failed (n = " + std::to_string(size()) +
                              ", closest pair distance " + std::to_string(min_dist) + ", length_scale " +
                              std::to_string(kernel_.length_scale) + ", noise " + std::to_string(kernel_.noise) +
                              ")");
    }
    factor_ = llt.matrixL();
    solve_weights();
  }

  void solve_weights() {
    prior_mean_ = targets_.mean();
    const Vector centered = targets_.array() - prior_mean_;
    const Vector half = factor_.triangularView<Eigen::Lower>().solve(centered);
    weights_ = factor_.triangularView<Eigen::Lower>().transpose().solve(half);
  }

  KernelParams kernel_;
  Matrix inputs_;
  Vector targets_;
  double prior_mean_ = 0.0;
  Matrix factor_;
  Vector weights_;
  bool duplicates_ = false;
};

namespace detail {

/// Nelder-Mead minimization of f over a box; the objective sees clamped coordinates only.
template <typename Fn>
std::pair<Vector, double> nelder_mead_box(Fn&& f, Vector x0, const Vector& lo, const Vector& hi,
                                          double initial_step, std::size_t max_iterations,
                                          std::size_t& evaluations) {
  const auto n = x0.size();
  auto clamp = [&](Vector x) { return Vector(x.cwiseMax(lo).cwiseMin(hi)); };
  auto eval = [&](const Vector& x) {
    ++evaluations;
    return f(x);
  };
  std::vector<Vector> simplex;
  std::vector<double> values;
  x0 = clamp(std::move(x0));
  simplex.push_back(x0);
  values.push_back(eval(x0));
  for (Eigen::Index i = 0; i < n; ++i) {
    Vector x = x0;
    x[i] += (x0[i] + initial_step <= hi[i]) ? initial_step : -initial_step;
    x = clamp(x);
    simplex.push_back(x);
    values.push_back(eval(x));
  }
  std::vector<std::size_t> order(simplex.size());
  for (std::size_t it = 0; it < max_iterations; ++it) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    const std::size_t best = order.front();
    const std::size_t worst = order.back();
    const std::size_t second = order[order.size() - 2];
    double spread = 0.0;
    double size = 0.0;
    for (std::size_t i = 0; i < simplex.size(); ++i) {
      spread = std::max(spread, std::abs(values[i] - values[best]));
      size = std::max(size, (simplex[i] - simplex[best]).cwiseAbs().maxCoeff());
    }
    if (spread <= 1e-12 * (1.0 + std::abs(values[best])) && size <= 1e-8) break;

    Vector centroid = Vector::Zero(n);
    for (std::size_t i = 0; i < simplex.size(); ++i) {
      if (i != worst) centroid += simplex[i];
    }
    centroid /= static_cast<double>(n);
    const Vector reflected = clamp(centroid + (centroid - simplex[worst]));
    const double fr = eval(reflected);
    if (fr < values[best]) {
      const Vector expanded = clamp(centroid + 2.0 * (centroid - simplex[worst]));
      const double fe = eval(expanded);
      if (fe < fr) {
        simplex[worst] = expanded;
        values[worst] = fe;
      } else {
        simplex[worst] = reflected;
        values[worst] = fr;
      }
      continue;
    }
    if (fr < values[second]) {
      simplex[worst] = reflected;
      values[worst] = fr;
      continue;
    }
    const bool outside = fr < values[worst];
    const Vector contracted =
        clamp(outside ? Vector(centroid + 0.5 * (reflected - centroid)) : Vector(centroid + 0.5 * (simplex[worst] - centroid)));
    const double fc = eval(contracted);
    if (fc < (outside ? fr : values[worst])) {
      simplex[worst] = contracted;
      values[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i < simplex.size(); ++i) {
      if (i == best) continue;
      simplex[i] = clamp(simplex[best] + 0.5 * (simplex[i] - simplex[best]));
      values[i] = eval(simplex[i]);
    }
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] < values[best]) best = i;
  }
  return {simplex[best], values[best]};
}

}  // namespace detail

struct HyperparameterResult {
  GprModel model;
  double log_marginal_likelihood = 0.0;
  /// False when no start improved on the incoming hyperparameters; the model is then unchanged.
  bool improved = false;
  std::size_t evaluations = 0;
};

/// Maximizes the log marginal likelihood over (signal, length_scale) inside their bounds.
/// Search runs in log space: the first start is the incoming kernel, the remaining
/// `restarts - 1` starts are log-uniform in the box.
inline HyperparameterResult optimize_hyperparameters(const GprModel& model, std::size_t restarts = 10,
                                                     std::uint64_t seed = 0x6a09e667f3bcc909ULL) {
  if (!model.fitted()) throw UnfittedModel("optimize_hyperparameters: model is not fitted");
  if (model.size() < 2) throw InvalidArgument("optimize_hyperparameters: need at least two training points");
  restarts = std::max<std::size_t>(1, restarts);

  const KernelParams base = model.kernel();
  const Matrix sq = detail::squared_distances(model.inputs(), model.inputs());
  const Vector centered = model.targets().array() - model.targets().mean();
  const double n = static_cast<double>(model.size());

  auto negative_lml = [&](const Vector& theta) {
    Matrix k = detail::rbf_from_distances(sq, std::exp(theta[0]), std::exp(theta[1]));
    k.diagonal().array() += base.noise;
    Eigen::LLT<Matrix> llt(k);
    if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
    const Matrix l = llt.matrixL();
    const Vector half = l.triangularView<Eigen::Lower>().solve(centered);
    return 0.5 * half.squaredNorm() + l.diagonal().array().log().sum() + 0.5 * n * std::log(2.0 * std::numbers::pi);
  };

  const Vector lo{{std::log(base.signal_bounds.lo), std::log(base.length_bounds.lo)}};
  const Vector hi{{std::log(base.signal_bounds.hi), std::log(base.length_bounds.hi)}};
  const Vector start{{std::log(base.signal), std::log(base.length_scale)}};

  HyperparameterResult result;
  result.model = model;
  const double incoming = negative_lml(start);
  result.log_marginal_likelihood = -incoming;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vector best_theta = start;
  double best = incoming;
  for (std::size_t r = 0; r < restarts; ++r) {
    Vector x0 = start;
    if (r > 0) {
      for (Eigen::Index i = 0; i < 2; ++i) x0[i] = lo[i] + unit(rng) * (hi[i] - lo[i]);
    }
    auto [theta, value] = detail::nelder_mead_box(negative_lml, x0, lo, hi, 0.5, 400, result.evaluations);
    if (value < best) {
      best = value;
      best_theta = theta;
    }
  }
  if (!(best < incoming) || !std::isfinite(best)) return result;

  KernelParams tuned = base;
  tuned.signal = base.signal_bounds.clamp(std::exp(best_theta[0]));
  tuned.length_scale = base.length_bounds.clamp(std::exp(best_theta[1]));
  result.model = GprModel::fit(model.inputs(), model.targets(), tuned);
  result.log_marginal_likelihood = result.model.log_marginal_likelihood();
  result.improved = true;
  return result;
}

inline nlohmann::json to_json(const KernelParams& k) {
  return {{"signal", k.signal},
          {"length_scale", k.length_scale},
          {"noise", k.noise},
          {"signal_bounds", {k.signal_bounds.lo, k.signal_bounds.hi}},
          {"length_bounds", {k.length_bounds.lo, k.length_bounds.hi}}};
}

inline KernelParams kernel_from_json(const nlohmann::json& j) {
  KernelParams k;
  k.signal = j.at("signal").get<double>();
  k.length_scale = j.at("length_scale").get<double>();
  k.noise = j.at("noise").get<double>();
  k.signal_bounds = {j.at("signal_bounds").at(0).get<double>(), j.at("signal_bounds").at(1).get<double>()};
  k.length_bounds = {j.at("length_bounds").at(0).get<double>(), j.at("length_bounds").at(1).get<double>()};
  return k;
}

/// Model dump: training data plus hyperparameters. Loading refits, so the factor is not stored.
inline nlohmann::json to_json(const GprModel& m) {
  nlohmann::json inputs = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.inputs().rows(); ++i) inputs.push_back(to_std(m.inputs().row(i).transpose()));
  return {{"inputs", inputs}, {"targets", to_std(m.targets())}, {"kernel", to_json(m.kernel())}};
}

inline GprModel model_from_json(const nlohmann::json& j) {
  std::vector<Vector> inputs;
  for (const auto& row : j.at("inputs")) inputs.push_back(to_vector(row.get<std::vector<double>>()));
  return GprModel::fit(inputs, j.at("targets").get<std::vector<double>>(), kernel_from_json(j.at("kernel")));
}

}  // namespace gpyield
