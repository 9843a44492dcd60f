#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "chromalayer/error.hpp"

namespace chromalayer {

inline constexpr double kLleRelativeRegularizer = 1e-3;
inline constexpr double kLleAbsoluteRegularizer = 1e-6;

/// Affine reconstruction weights (sum to one, sign unconstrained) of a target
/// from its neighbors, via the regularized local Gram system G w = 1.
///
/// Holds scratch buffers so repeated solves do not allocate; one instance per
/// thread.
class LleSolver {
public:
  /// `neighbors` holds `count` vectors of length `target.size()` back to back.
  std::span<const double> solve(std::span<const double> target, std::span<const double> neighbors) {
    const std::size_t dim = target.size();
    if (dim == 0 || neighbors.size() % dim != 0 || neighbors.empty()) {
      throw InvalidArgument("lle_weights needs at least one neighbor of the target's dimension");
    }
    const std::size_t k = neighbors.size() / dim;
    if (dim < k) return solve_low_rank(target, neighbors, k);
    diff_.resize(k * dim);
    gram_.resize(k * k);
    weights_.resize(k);
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t d = 0; d < dim; ++d) diff_[j * dim + d] = target[d] - neighbors[j * dim + d];
    }
    double trace = 0.0;
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = 0; b <= a; ++b) {
        double s = 0.0;
        for (std::size_t d = 0; d < dim; ++d) s += diff_[a * dim + d] * diff_[b * dim + d];
        gram_[a * k + b] = s;
        gram_[b * k + a] = s;
      }
      trace += gram_[a * k + a];
    }
    const double reg = trace > 0.0 ? kLleRelativeRegularizer * trace : kLleAbsoluteRegularizer;
    for (std::size_t a = 0; a < k; ++a) gram_[a * k + a] += reg;

    // in-place Cholesky, lower triangle
    for (std::size_t j = 0; j < k; ++j) {
      double d = gram_[j * k + j];
      for (std::size_t m = 0; m < j; ++m) d -= gram_[j * k + m] * gram_[j * k + m];
      d = std::sqrt(d);
      gram_[j * k + j] = d;
      for (std::size_t i = j + 1; i < k; ++i) {
        double s = gram_[i * k + j];
        for (std::size_t m = 0; m < j; ++m) s -= gram_[i * k + m] * gram_[j * k + m];
        gram_[i * k + j] = s / d;
      }
    }
    for (std::size_t i = 0; i < k; ++i) {
      double s = 1.0;
      for (std::size_t m = 0; m < i; ++m) s -= gram_[i * k + m] * weights_[m];
      weights_[i] = s / gram_[i * k + i];
    }
    for (std::size_t i = k; i-- > 0;) {
      double s = weights_[i];
      for (std::size_t m = i + 1; m < k; ++m) s -= gram_[m * k + i] * weights_[m];
      weights_[i] = s / gram_[i * k + i];
    }
    double sum = 0.0;
    for (double w : weights_) sum += w;
    for (double& w : weights_) w /= sum;
    return weights_;
  }

private:
  // With fewer dimensions than neighbors G = D D^T + rI has low rank plus
  // identity, and the Woodbury identity reduces the solve to dim x dim:
  // w ~ 1 - D (rI + D^T D)^{-1} D^T 1.
  std::span<const double> solve_low_rank(std::span<const double> target, std::span<const double> neighbors,
                                         std::size_t k) {
    const std::size_t dim = target.size();
    diff_.resize(k * dim);
    small_.assign(dim * dim, 0.0);
    rhs_.assign(dim, 0.0);
    weights_.resize(k);
    double trace = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double* row = diff_.data() + j * dim;
      for (std::size_t d = 0; d < dim; ++d) {
        diff_[j * dim + d] = target[d] - neighbors[j * dim + d];
        trace += row[d] * row[d];
        rhs_[d] += row[d];
      }
      for (std::size_t a = 0; a < dim; ++a) {
        for (std::size_t b = 0; b <= a; ++b) small_[a * dim + b] += row[a] * row[b];
      }
    }
    const double reg = trace > 0.0 ? kLleRelativeRegularizer * trace : kLleAbsoluteRegularizer;
    for (std::size_t a = 0; a < dim; ++a) small_[a * dim + a] += reg;
    for (std::size_t j = 0; j < dim; ++j) {
      double d = small_[j * dim + j];
      for (std::size_t m = 0; m < j; ++m) d -= small_[j * dim + m] * small_[j * dim + m];
      d = std::sqrt(d);
      small_[j * dim + j] = d;
      for (std::size_t i = j + 1; i < dim; ++i) {
        double s = small_[i * dim + j];
        for (std::size_t m = 0; m < j; ++m) s -= small_[i * dim + m] * small_[j * dim + m];
        small_[i * dim + j] = s / d;
      }
    }
    for (std::size_t i = 0; i < dim; ++i) {
      double s = rhs_[i];
      for (std::size_t m = 0; m < i; ++m) s -= small_[i * dim + m] * rhs_[m];
      rhs_[i] = s / small_[i * dim + i];
    }
    for (std::size_t i = dim; i-- > 0;) {
      double s = rhs_[i];
      for (std::size_t m = i + 1; m < dim; ++m) s -= small_[m * dim + i] * rhs_[m];
      rhs_[i] = s / small_[i * dim + i];
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      double s = 1.0;
      for (std::size_t d = 0; d < dim; ++d) s -= diff_[j * dim + d] * rhs_[d];
      weights_[j] = s;
      sum += s;
    }
    for (double& w : weights_) w /= sum;
    return weights_;
  }

  std::vector<double> small_;
  std::vector<double> rhs_;
  std::vector<double> diff_;
  std::vector<double> gram_;
  std::vector<double> weights_;
};

/// Convenience wrapper over LleSolver for one-off solves.
inline std::vector<double> lle_weights(std::span<const double> target, std::span<const double> neighbors) {
  LleSolver solver;
  auto w = solver.solve(target, neighbors);
  return {w.begin(), w.end()};
}

} // namespace chromalayer
