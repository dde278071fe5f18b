#include "mjplab/pca.hpp"
#include "mjplab/autodiff.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mjplab {

namespace {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require_matrix(const Tensor& rows) {
  if (rows.rank() != 2) throw ShapeError("pca expects an [n, D] table, got " + shape_str(rows.shape()));
}

}  // namespace

PcaProjection pca_fit_project(const Tensor& rows, std::size_t k) {
  require_matrix(rows);
  const std::size_t n = rows.shape()[0], d = rows.shape()[1];
  if (n < 2) throw std::invalid_argument("pca needs at least two rows");
  if (k < 1 || k > std::min(n, d)) {
    throw std::out_of_range("pca dimension " + std::to_string(k) + " outside [1, " + std::to_string(std::min(n, d)) + "]");
  }
  Matrix x = Eigen::Map<const Matrix>(rows.data().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  const Eigen::RowVectorXd mu = x.colwise().mean();
  x.rowwise() -= mu;

  Eigen::BDCSVD<Matrix> svd(x, Eigen::ComputeThinV);
  const Eigen::VectorXd s = svd.singularValues();
  const Matrix v = svd.matrixV();

  PcaProjection out;
  out.mean = Tensor({d}, std::vector<double>(mu.data(), mu.data() + d));
  out.singular_values.assign(s.data(), s.data() + s.size());
  const double total = s.squaredNorm();

  out.components = Tensor({k, d});
  for (std::size_t c = 0; c < k; ++c) {
    Eigen::VectorXd axis = v.col(static_cast<Eigen::Index>(c));
    Eigen::Index pivot = 0;
    for (Eigen::Index i = 1; i < axis.size(); ++i) {
      if (std::abs(axis[i]) > std::abs(axis[pivot])) pivot = i;
    }
    if (axis[pivot] < 0) axis = -axis;
    for (std::size_t j = 0; j < d; ++j) out.components[c * d + j] = axis[static_cast<Eigen::Index>(j)];
    out.explained_variance_ratio.push_back(total > 0 ? s[static_cast<Eigen::Index>(c)] * s[static_cast<Eigen::Index>(c)] / total : 0.0);
  }

  const Matrix basis = Eigen::Map<const Matrix>(out.components.data().data(), static_cast<Eigen::Index>(k),
                                                static_cast<Eigen::Index>(d));
  const Matrix proj = x * basis.transpose();
  out.projected = Tensor({n, k}, std::vector<double>(proj.data(), proj.data() + proj.size()));
  return out;
}

Tensor pca_back_project(const PcaProjection& p) {
  return kernels::matmul(p.projected, p.components);
}

std::vector<ExplainedVarianceRow> explained_variance_table(
    const std::vector<std::pair<std::string, Tensor>>& tables, const std::vector<std::size_t>& dims) {
  std::vector<ExplainedVarianceRow> out;
  for (const auto& [name, table] : tables) {
    require_matrix(table);
    const std::size_t max_dim = *std::max_element(dims.begin(), dims.end());
    const PcaProjection p = pca_fit_project(table, max_dim);
    for (std::size_t dim : dims) {
      double cumulative = 0.0;
      for (std::size_t i = 0; i < dim; ++i) cumulative += p.explained_variance_ratio[i];
      out.push_back({name, dim, 100.0 * std::min(cumulative, 1.0)});
    }
  }
  return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine of vectors with different lengths");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  if (na == nb && std::equal(a.begin(), a.end(), b.begin())) return 1.0;
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

SimilarityScatter pe_similarity_scatter(const Tensor& truth, const Tensor& recovered) {
  require_matrix(truth);
  if (truth.shape() != recovered.shape()) {
    throw ShapeError("paired rows differ: " + shape_str(truth.shape()) + " vs " + shape_str(recovered.shape()));
  }
  const std::size_t n = truth.shape()[0], d = truth.shape()[1];
  std::vector<double> joint(truth.values());
  joint.insert(joint.end(), recovered.values().begin(), recovered.values().end());
  const std::size_t k = std::min<std::size_t>({2, 2 * n, d});
  const PcaProjection p = pca_fit_project(Tensor({2 * n, d}, std::move(joint)), k);

  SimilarityScatter out{Tensor({n, 2}), Tensor({n, 2}), {}};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < k; ++c) {
      out.truth_coords[i * 2 + c] = p.projected[i * k + c];
      out.recovered_coords[i * 2 + c] = p.projected[(n + i) * k + c];
    }
    out.cosine.push_back(cosine_similarity(truth.data().subspan(i * d, d), recovered.data().subspan(i * d, d)));
  }
  return out;
}

}  // namespace mjplab
