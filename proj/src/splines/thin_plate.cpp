#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "../common/text_io.hpp"
#include "droughtrisk/splines.hpp"

namespace droughtrisk::splines {

double thin_plate_kernel(double r) {
  if (r <= 0.0) return 0.0;
  return r * r * std::log(r) / (8.0 * std::numbers::pi);
}

ThinPlateBasis ThinPlateBasis::from_points(std::span<const Point2> points, int dim) {
  if (dim < 3) throw std::invalid_argument("thin plate spline: basis dimension must be >= 3");
  std::vector<Point2> centers(points.begin(), points.end());
  for (const auto& p : centers) {
    if (!std::isfinite(p[0]) || !std::isfinite(p[1])) {
      throw std::invalid_argument("thin plate spline: non-finite coordinate");
    }
  }
  std::sort(centers.begin(), centers.end());
  centers.erase(std::unique(centers.begin(), centers.end()), centers.end());
  const auto n = static_cast<Eigen::Index>(centers.size());
  if (n < 3) {
    throw std::invalid_argument("thin plate spline: need at least 3 distinct locations");
  }
  if (dim > n) {
    throw std::invalid_argument("thin plate spline: basis dimension " + std::to_string(dim) +
                                " exceeds the number of distinct locations " +
                                std::to_string(n));
  }

  ThinPlateBasis out;
  for (const auto& c : centers) {
    out.shift_[0] += c[0] / static_cast<double>(n);
    out.shift_[1] += c[1] / static_cast<double>(n);
  }

  Matrix poly(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    poly(i, 0) = 1.0;
    poly(i, 1) = centers[i][0] - out.shift_[0];
    poly(i, 2) = centers[i][1] - out.shift_[1];
  }
  Eigen::HouseholderQR<Matrix> qr(poly);
  const Matrix r = qr.matrixQR().topRows(3).triangularView<Eigen::Upper>();
  const double rscale = r.cwiseAbs().maxCoeff();
  if (std::abs(r(2, 2)) < 1e-10 * rscale || std::abs(r(1, 1)) < 1e-10 * rscale) {
    throw std::invalid_argument("thin plate spline: locations are collinear");
  }
  const Matrix q = qr.householderQ() * Matrix::Identity(n, n);
  const Matrix complement = q.rightCols(n - 3);

  Matrix kernel(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      kernel(i, j) = thin_plate_kernel(std::hypot(centers[i][0] - centers[j][0],
                                                  centers[i][1] - centers[j][1]));
    }
  }
  Matrix projected = complement.transpose() * kernel * complement;
  projected = 0.5 * (projected + projected.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Matrix> es(projected);

  const Eigen::Index rank = dim - 3;
  // Eigenvalues ascend; keep the leading `rank` from the top.
  const Matrix top_vectors = es.eigenvectors().rightCols(rank).rowwise().reverse();
  const Vector top_values = es.eigenvalues().tail(rank).reverse();
  out.projection_ = complement * top_vectors;
  out.penalty_ = Matrix::Zero(dim, dim);
  for (Eigen::Index i = 0; i < rank; ++i) out.penalty_(i, i) = std::max(0.0, top_values[i]);
  out.centers_ = std::move(centers);
  return out;
}

Matrix ThinPlateBasis::evaluate(std::span<const Point2> points) const {
  const auto n = static_cast<Eigen::Index>(points.size());
  const auto nc = static_cast<Eigen::Index>(centers_.size());
  const Eigen::Index rank = projection_.cols();
  Matrix kernel(n, nc);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = points[static_cast<std::size_t>(i)];
    if (!std::isfinite(p[0]) || !std::isfinite(p[1])) {
      throw std::invalid_argument("thin plate spline: non-finite coordinate");
    }
    for (Eigen::Index j = 0; j < nc; ++j) {
      kernel(i, j) = thin_plate_kernel(std::hypot(p[0] - centers_[j][0], p[1] - centers_[j][1]));
    }
  }
  Matrix out(n, rank + 3);
  out.leftCols(rank) = kernel * projection_;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = points[static_cast<std::size_t>(i)];
    out(i, rank) = 1.0;
    out(i, rank + 1) = p[0] - shift_[0];
    out(i, rank + 2) = p[1] - shift_[1];
  }
  return out;
}

void ThinPlateBasis::write(std::ostream& os) const {
  std::vector<double> flat;
  flat.reserve(centers_.size() * 2);
  for (const auto& c : centers_) {
    flat.push_back(c[0]);
    flat.push_back(c[1]);
  }
  textio::write_vector(os, "centers", flat);
  textio::write_vector(os, "shift", {shift_[0], shift_[1]});
  textio::write_matrix(os, "projection", projection_);
  const Vector diag = penalty_.diagonal();
  textio::write_vector(os, "penalty_diag", std::vector<double>(diag.data(), diag.data() + diag.size()));
}

ThinPlateBasis ThinPlateBasis::read(std::istream& is) {
  ThinPlateBasis out;
  const auto flat = textio::read_vector(is, "centers");
  for (std::size_t i = 0; i + 1 < flat.size(); i += 2) out.centers_.push_back({flat[i], flat[i + 1]});
  const auto shift = textio::read_vector(is, "shift");
  if (shift.size() != 2) throw std::runtime_error("fit file: bad thin plate shift");
  out.shift_ = {shift[0], shift[1]};
  out.projection_ = textio::read_matrix(is, "projection");
  const auto diag = textio::read_vector(is, "penalty_diag");
  out.penalty_ = Matrix::Zero(static_cast<Eigen::Index>(diag.size()),
                              static_cast<Eigen::Index>(diag.size()));
  for (std::size_t i = 0; i < diag.size(); ++i) {
    out.penalty_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = diag[i];
  }
  if (out.projection_.rows() != static_cast<Eigen::Index>(out.centers_.size()) ||
      out.projection_.cols() + 3 != out.penalty_.rows()) {
    throw std::runtime_error("fit file: inconsistent thin plate dimensions");
  }
  return out;
}

BasisRealization build_thin_plate(std::span<const Point2> coords, int dim) {
  const auto basis = ThinPlateBasis::from_points(coords, dim);
  BasisRealization out;
  out.design = basis.evaluate(coords);
  out.penalty_blocks = {basis.penalty()};
  out.null_space_dim = basis.null_space_dim();
  return out;
}

}  // namespace droughtrisk::splines
