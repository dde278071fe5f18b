#pragma once

// Straightforward reference implementations used as test oracles. They are
// written independently of the library code and favour obviousness over
// speed.

#include <cstddef>
#include <vector>

#include "mjplab/tensor.hpp"

namespace oracle {

using mjplab::Tensor;

/// Triple-loop product of [m, k] and [k, n].
Tensor matmul(const Tensor& a, const Tensor& b);

/// SSIM with a uniform window slid over every valid offset of each channel,
/// computed from plain per-window sums (no integral images).
double ssim(const Tensor& a, const Tensor& b, std::size_t window);

/// |DFT| of each channel of an [H, W, C] image by the O(N^2) definition.
Tensor dft_magnitude(const Tensor& image);

/// Eigenvalues (descending) and matching unit eigenvectors (as columns of an
/// [n, n] tensor) of a symmetric matrix by cyclic Jacobi rotations.
struct EigenDecomposition {
  std::vector<double> values;
  Tensor vectors;
};
EigenDecomposition symmetric_eigen(const Tensor& sym);

/// Sample covariance numerator X^T X of the mean-centered rows.
Tensor centered_gram(const Tensor& rows);

/// Longest common subsequence length by dynamic programming.
std::size_t lcs(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b);

/// Multinomial logistic regression (bias folded in as a trailing feature)
/// fitted by full-batch gradient descent.
struct Logistic {
  std::vector<std::vector<double>> weights;  // one row per class (softmax)
  std::size_t predict(const std::vector<double>& x) const;
};
Logistic fit_logistic(const std::vector<std::vector<double>>& x, const std::vector<std::size_t>& y,
                      std::size_t classes, std::size_t epochs, double lr);

}  // namespace oracle
