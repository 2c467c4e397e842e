#pragma once

#include "gpyield/core.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <string>
#include <vector>

namespace gpyield {

using Complex = std::complex<double>;

namespace physics {
inline constexpr double c0 = 299'792'458.0;                   // m/s
inline constexpr double mu0 = 4e-7 * std::numbers::pi;        // H/m
inline constexpr double eps0 = 1.0 / (mu0 * c0 * c0);         // F/m
}  // namespace physics

inline double ghz_to_rad_s(double f_ghz) { return 2.0 * std::numbers::pi * f_ghz * 1e9; }
inline double rad_s_to_ghz(double omega) { return omega / (2.0 * std::numbers::pi * 1e9); }

/// 20 log10 |s|.
inline double to_db(double magnitude) { return 20.0 * std::log10(magnitude); }
inline double to_db(Complex s) { return to_db(std::abs(s)); }

/// Discrete angular frequencies (rad/s) inside a band, strictly increasing.
class FrequencyGrid {
 public:
  FrequencyGrid(std::vector<double> points, double band_lo, double band_hi)
      : points_(std::move(points)), band_lo_(band_lo), band_hi_(band_hi) {
    if (points_.empty()) throw InvalidArgument("FrequencyGrid: need at least one frequency point");
    if (!(band_lo_ <= band_hi_)) throw InvalidArgument("FrequencyGrid: empty band");
    for (std::size_t i = 0; i < points_.size(); ++i) {
      if (points_[i] < band_lo_ || points_[i] > band_hi_) {
        throw InvalidArgument("FrequencyGrid: point " + std::to_string(i) + " outside the band");
      }
      if (i > 0 && !(points_[i] > points_[i - 1])) {
        throw InvalidArgument("FrequencyGrid: points must be strictly increasing");
      }
    }
  }

  /// `count` equidistant points spanning [lo, hi] (rad/s) including both ends.
  static FrequencyGrid equidistant(double lo, double hi, std::size_t count) {
    if (count == 0) throw InvalidArgument("FrequencyGrid::equidistant: count must be >= 1");
    std::vector<double> pts(count);
    if (count == 1) {
      pts[0] = 0.5 * (lo + hi);
    } else {
      for (std::size_t i = 0; i < count; ++i) {
        pts[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
      }
      pts.back() = hi;
    }
    return {std::move(pts), lo, hi};
  }

  std::size_t size() const { return points_.size(); }
  double operator[](std::size_t j) const { return points_.at(j); }
  const std::vector<double>& points() const { return points_; }
  double band_lo() const { return band_lo_; }
  double band_hi() const { return band_hi_; }

 private:
  std::vector<double> points_;
  double band_lo_;
  double band_hi_;
};

/// One complex S-parameter per grid frequency.
using SParamSample = std::vector<Complex>;

/// Rectangular waveguide (TE10) with a dispersive dielectric inlay. Lengths in mm.
/// Parameter vector p = [inlay length p1 (mm), offset p2 (mm), p3, p4] where p3, p4 set
///   eps_r(w) = 1 + p3 + (1 - p3) / (1 + j w / (2 pi 5 GHz))
///   mu_r(w)  = 1 + p4 + (2 - p4) / (1 + j w / (1.1 * 2 pi 20 GHz)).
struct WaveguideConfig {
  double width_mm = 30.0;
  double length_mm = 30.0;

  static constexpr std::size_t kParameterCount = 4;

  double cutoff_rad_s() const { return std::numbers::pi * physics::c0 / (width_mm * 1e-3); }

  void validate() const {
    if (!(width_mm > 0.0)) throw InvalidArgument("WaveguideConfig: width must be positive");
    if (!(length_mm > 0.0)) throw InvalidArgument("WaveguideConfig: length must be positive");
  }

  void validate(const Vector& p, const FrequencyGrid& grid) const {
    validate();
    require_dimension(p.size(), kParameterCount, "waveguide parameters");
    if (!p.allFinite()) throw OracleDomainError("waveguide: non-finite parameters");
    if (p[0] < 0.0 || p[1] < 0.0 || p[0] + p[1] > length_mm) {
      throw OracleDomainError("waveguide: inlay [" + std::to_string(p[1]) + ", " + std::to_string(p[0] + p[1]) +
                              "] mm does not fit in a guide of length " + std::to_string(length_mm) + " mm");
    }
    if (!(grid[0] > cutoff_rad_s())) {
      throw OracleDomainError("waveguide: TE10 is evanescent at " + std::to_string(rad_s_to_ghz(grid[0])) +
                              " GHz (cutoff " + std::to_string(rad_s_to_ghz(cutoff_rad_s())) + " GHz)");
    }
  }
};

inline Complex inlay_permittivity(double omega, double p3) {
  const Complex j(0.0, 1.0);
  return 1.0 + p3 + (1.0 - p3) / (1.0 + j * omega / (2.0 * std::numbers::pi * 5e9));
}

inline Complex inlay_permeability(double omega, double p4) {
  const Complex j(0.0, 1.0);
  return 1.0 + p4 + (2.0 - p4) / (1.0 + j * omega / (1.1 * 2.0 * std::numbers::pi * 20e9));
}

namespace detail {

struct Abcd {
  Complex a, b, c, d;

  Abcd operator*(const Abcd& o) const {
    return {a * o.a + b * o.c, a * o.b + b * o.d, c * o.a + d * o.c, c * o.b + d * o.d};
  }
};

/// Uniform line section of length `len` with propagation constant beta and wave impedance z.
inline Abcd line_section(Complex beta, Complex z, double len) {
  const Complex j(0.0, 1.0);
  const Complex cs = std::cos(beta * len);
  const Complex sn = std::sin(beta * len);
  return {cs, j * z * sn, j * sn / z, cs};
}

}  // namespace detail

/// S11 of the TE10 mode at one angular frequency, referenced at the guide input with
/// vacuum-filled ports: vacuum (p2) | inlay (p1) | vacuum (L - p1 - p2).
inline Complex waveguide_s11(const WaveguideConfig& cfg, const Vector& p, double omega) {
  using physics::eps0;
  using physics::mu0;
  const double kc = std::numbers::pi / (cfg.width_mm * 1e-3);
  const double kc2 = kc * kc;
  const double k0sq = omega * omega * mu0 * eps0;
  if (!(k0sq > kc2)) throw OracleDomainError("waveguide: TE10 is evanescent at this frequency");

  const Complex beta0 = std::sqrt(Complex(k0sq - kc2, 0.0));
  const Complex z0 = omega * mu0 / beta0;
  const Complex eps_r = inlay_permittivity(omega, p[2]);
  const Complex mu_r = inlay_permeability(omega, p[3]);
  // Principal root: with exp(+j w t) and lossy media Im(beta^2) < 0, so Im(beta) <= 0 (decaying wave).
  const Complex beta1 = std::sqrt(k0sq * eps_r * mu_r - kc2);
  const Complex z1 = omega * mu0 * mu_r / beta1;

  const double p1 = p[0] * 1e-3;
  const double p2 = p[1] * 1e-3;
  const double rest = cfg.length_mm * 1e-3 - p1 - p2;
  const detail::Abcd m =
      detail::line_section(beta0, z0, p2) * detail::line_section(beta1, z1, p1) * detail::line_section(beta0, z0, rest);
  return (m.a + m.b / z0 - m.c * z0 - m.d) / (m.a + m.b / z0 + m.c * z0 + m.d);
}

inline SParamSample waveguide_eval(const WaveguideConfig& cfg, const Vector& p, const FrequencyGrid& grid) {
  cfg.validate(p, grid);
  SParamSample out(grid.size());
  for (std::size_t j = 0; j < grid.size(); ++j) out[j] = waveguide_s11(cfg, p, grid[j]);
  return out;
}

/// How high-fidelity cost is accounted.
enum class CostModel {
  per_frequency,  ///< one evaluation per (point, frequency); short-circuit saves work
  per_call,       ///< one call returns every grid frequency
};

inline const char* to_string(CostModel c) { return c == CostModel::per_frequency ? "per_frequency" : "per_call"; }

/// High-fidelity QoI provider over a fixed frequency grid.
class Oracle {
 public:
  virtual ~Oracle() = default;

  virtual const FrequencyGrid& grid() const = 0;
  virtual std::size_t dimension() const = 0;
  virtual CostModel cost_model() const = 0;
  /// S at grid frequency j.
  virtual Complex evaluate_at(const Vector& p, std::size_t j) = 0;
  /// S at every grid frequency.
  virtual SParamSample evaluate_all(const Vector& p) = 0;
  /// True when concurrent calls are safe.
  virtual bool thread_safe() const { return false; }
};

/// In-process waveguide model. Pure, so safe for concurrent calls.
class WaveguideOracle final : public Oracle {
 public:
  WaveguideOracle(WaveguideConfig cfg, FrequencyGrid grid, CostModel cost = CostModel::per_frequency)
      : cfg_(cfg), grid_(std::move(grid)), cost_(cost) {
    cfg_.validate();
    if (!(grid_[0] > cfg_.cutoff_rad_s())) {
      throw OracleDomainError("WaveguideOracle: TE10 is evanescent at the lowest grid frequency");
    }
  }

  const FrequencyGrid& grid() const override { return grid_; }
  std::size_t dimension() const override { return WaveguideConfig::kParameterCount; }
  CostModel cost_model() const override { return cost_; }
  bool thread_safe() const override { return true; }
  const WaveguideConfig& config() const { return cfg_; }

  Complex evaluate_at(const Vector& p, std::size_t j) override {
    cfg_.validate(p, grid_);
    return waveguide_s11(cfg_, p, grid_[j]);
  }

  SParamSample evaluate_all(const Vector& p) override { return waveguide_eval(cfg_, p, grid_); }

 private:
  WaveguideConfig cfg_;
  FrequencyGrid grid_;
  CostModel cost_;
};

/// High-fidelity evaluation counters. offline = training data, online = estimation phase.
/// In per-frequency mode the unit is one (point, frequency) evaluation; in per-call mode one call.
struct EvalCounters {
  std::size_t offline = 0;
  std::size_t online = 0;
  std::size_t batch_size = 1;

  std::size_t total() const { return offline + online; }
  static std::size_t effective_of(std::size_t count, std::size_t batch) {
    return batch == 0 ? count : (count + batch - 1) / batch;
  }
  std::size_t effective() const { return effective_of(total(), batch_size); }
  std::size_t effective_online() const { return effective_of(online, batch_size); }
  std::size_t effective_offline() const { return effective_of(offline, batch_size); }
};

}  // namespace gpyield
