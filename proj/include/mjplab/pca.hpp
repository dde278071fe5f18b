#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mjplab/tensor.hpp"

namespace mjplab {

struct PcaProjection {
  Tensor mean;        // [D]
  Tensor components;  // [k, D], orthonormal rows
  Tensor projected;   // [n, k]
  std::vector<double> explained_variance_ratio;  // k entries, nonincreasing
  std::vector<double> singular_values;           // all min(n, D) of the centered rows
};

/// Principal components of the rows of an [n, D] table via SVD of the
/// centered data. Each component is oriented so that its largest-magnitude
/// coordinate is positive (first such coordinate on ties).
PcaProjection pca_fit_project(const Tensor& rows, std::size_t k);

/// projected * components, i.e. the rank-k approximation of the centered rows.
Tensor pca_back_project(const PcaProjection& p);

struct ExplainedVarianceRow {
  std::string model;
  std::size_t dim = 0;
  double percent = 0.0;  // cumulative, in [0, 100]
};

/// Cumulative explained variance (percent) of each named table at each dim.
std::vector<ExplainedVarianceRow> explained_variance_table(
    const std::vector<std::pair<std::string, Tensor>>& tables, const std::vector<std::size_t>& dims);

struct SimilarityScatter {
  Tensor truth_coords;      // [n, 2]
  Tensor recovered_coords;  // [n, 2]
  std::vector<double> cosine;
};

/// Joint 2-D PCA of paired truth / recovered rows plus their row-wise cosine
/// similarity (0 when either row is zero).
SimilarityScatter pe_similarity_scatter(const Tensor& truth, const Tensor& recovered);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace mjplab
