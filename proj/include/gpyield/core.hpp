#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <exception>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace gpyield {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument that is not a dimension problem (out-of-range scale, empty input, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A distribution with zero spread was asked for something only a proper density has.
class DegenerateDistribution : public Error {
 public:
  using Error::Error;
};

/// Rejection sampling could not make progress.
class SamplingError : public Error {
 public:
  using Error::Error;
};

/// Factorization failed or a posterior variance went meaningfully negative.
class ConditioningError : public Error {
 public:
  using Error::Error;
};

class UnfittedModel : public Error {
 public:
  using Error::Error;
};

/// Non-physical oracle input (evanescent mode, inlay outside the guide, ...).
class OracleDomainError : public Error {
 public:
  using Error::Error;
};

inline void require_dimension(Eigen::Index got, Eigen::Index expected, const char* what) {
  if (got != expected) {
    throw DimensionError(std::string(what) + ": expected dimension " + std::to_string(expected) +
                         ", got " + std::to_string(got));
  }
}

inline Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

/// Runs fn(begin, end) over contiguous chunks of [0, n) on up to `workers` threads.
/// Each index is owned by exactly one chunk, so writes into per-index slots need no locking.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    if (n > 0) fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(workers);
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    threads.emplace_back([&, w, begin, end] {
      try {
        fn(begin, end);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace gpyield
