#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "../common/text_io.hpp"
#include "droughtrisk/splines.hpp"

namespace droughtrisk::splines {
namespace {

struct KnotSystem {
  Matrix second_deriv;
  Matrix penalty;
};

// Natural boundary: second derivatives vanish at the first and last knot.
KnotSystem natural_system(const std::vector<double>& knots) {
  const int k = static_cast<int>(knots.size());
  std::vector<double> h(k - 1);
  for (int i = 0; i + 1 < k; ++i) h[i] = knots[i + 1] - knots[i];

  Matrix d = Matrix::Zero(k - 2, k);
  Matrix b = Matrix::Zero(k - 2, k - 2);
  for (int i = 0; i < k - 2; ++i) {
    d(i, i) = 1.0 / h[i];
    d(i, i + 1) = -1.0 / h[i] - 1.0 / h[i + 1];
    d(i, i + 2) = 1.0 / h[i + 1];
    b(i, i) = (h[i] + h[i + 1]) / 3.0;
    if (i + 1 < k - 2) {
      b(i, i + 1) = h[i + 1] / 6.0;
      b(i + 1, i) = h[i + 1] / 6.0;
    }
  }
  Eigen::LDLT<Matrix> ldlt(b);
  const Matrix interior = ldlt.solve(d);
  KnotSystem out;
  out.second_deriv = Matrix::Zero(k, k);
  out.second_deriv.middleRows(1, k - 2) = interior;
  out.penalty = d.transpose() * interior;
  out.penalty = 0.5 * (out.penalty + out.penalty.transpose()).eval();
  return out;
}

KnotSystem cyclic_system(const std::vector<double>& knots, double period) {
  const int k = static_cast<int>(knots.size());
  std::vector<double> h(k);
  for (int i = 0; i < k; ++i) {
    h[i] = (i + 1 < k ? knots[i + 1] : knots[0] + period) - knots[i];
  }
  Matrix d = Matrix::Zero(k, k);
  Matrix b = Matrix::Zero(k, k);
  for (int i = 0; i < k; ++i) {
    const int prev = (i + k - 1) % k;
    const int next = (i + 1) % k;
    const double hp = h[prev];
    const double hi = h[i];
    b(i, i) += (hp + hi) / 3.0;
    b(i, next) += hi / 6.0;
    b(i, prev) += hp / 6.0;
    d(i, prev) += 1.0 / hp;
    d(i, i) += -1.0 / hp - 1.0 / hi;
    d(i, next) += 1.0 / hi;
  }
  Eigen::LDLT<Matrix> ldlt(b);
  KnotSystem out;
  out.second_deriv = ldlt.solve(d);
  out.penalty = d.transpose() * out.second_deriv;
  out.penalty = 0.5 * (out.penalty + out.penalty.transpose()).eval();
  return out;
}

// Adds the cubic-spline row for x in [x_j, x_j + h] to `row`.
void add_interval_row(Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row, const Matrix& second_deriv,
                      int j, int j_next, double h, double x_from_left) {
  const double right = h - x_from_left;
  const double a_minus = right / h;
  const double a_plus = x_from_left / h;
  const double c_minus = (right * right * right / h - h * right) / 6.0;
  const double c_plus = (x_from_left * x_from_left * x_from_left / h - h * x_from_left) / 6.0;
  row(j) += a_minus;
  row(j_next) += a_plus;
  row += c_minus * second_deriv.row(j) + c_plus * second_deriv.row(j_next);
}

void require_finite(std::span<const double> x, const char* who) {
  for (double v : x) {
    if (!std::isfinite(v)) throw std::invalid_argument(std::string(who) + ": non-finite covariate");
  }
}

}  // namespace

bool is_symmetric_psd(const Matrix& m, double rel_floor) {
  if (m.rows() != m.cols()) return false;
  if (m.size() == 0) return true;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) return false;
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  const double max_abs = ev.cwiseAbs().maxCoeff();
  return ev.minCoeff() >= -rel_floor * max_abs;
}

Matrix row_kronecker(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw std::invalid_argument("row_kronecker: mismatched observation counts");
  }
  Matrix out(a.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.cols(); ++i) {
    out.middleCols(i * b.cols(), b.cols()) = b.array().colwise() * a.col(i).array();
  }
  return out;
}

CubicRegressionBasis::CubicRegressionBasis(std::vector<double> knots) : knots_(std::move(knots)) {
  if (knots_.size() < 3) throw std::invalid_argument("cubic regression spline needs >= 3 knots");
  for (std::size_t i = 1; i < knots_.size(); ++i) {
    if (!(knots_[i] > knots_[i - 1])) {
      throw std::invalid_argument("cubic regression spline knots must be strictly increasing");
    }
  }
  auto sys = natural_system(knots_);
  second_deriv_ = std::move(sys.second_deriv);
  penalty_ = std::move(sys.penalty);
}

CubicRegressionBasis CubicRegressionBasis::from_data(std::span<const double> x, int dim) {
  if (dim < 3) throw std::invalid_argument("cubic regression spline: basis dimension must be >= 3");
  require_finite(x, "cubic regression spline");
  std::vector<double> u(x.begin(), x.end());
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  if (static_cast<int>(u.size()) < dim) {
    throw std::invalid_argument("cubic regression spline: fewer unique covariate values (" +
                                std::to_string(u.size()) + ") than basis dimension (" +
                                std::to_string(dim) + ")");
  }
  std::vector<double> knots(dim);
  const double last = static_cast<double>(u.size() - 1);
  for (int j = 0; j < dim; ++j) {
    const double pos = last * j / (dim - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, u.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    knots[j] = u[lo] + frac * (u[hi] - u[lo]);
  }
  knots.front() = u.front();
  knots.back() = u.back();
  return CubicRegressionBasis(std::move(knots));
}

Matrix CubicRegressionBasis::evaluate(std::span<const double> x) const {
  require_finite(x, "cubic regression spline");
  const int k = dim();
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(x.size()), k);
  for (std::size_t r = 0; r < x.size(); ++r) {
    auto row = out.row(static_cast<Eigen::Index>(r));
    const double v = x[r];
    if (v < knots_.front()) {
      // f(x0) + (x - x0) f'(x0), with f'(x0) = (b1 - b0)/h - h (2 d0 + d1) / 6
      const double h = knots_[1] - knots_[0];
      const double dx = v - knots_[0];
      row(0) += 1.0 - dx / h;
      row(1) += dx / h;
      row -= dx * h / 6.0 * (2.0 * second_deriv_.row(0) + second_deriv_.row(1));
    } else if (v > knots_.back()) {
      const double h = knots_[k - 1] - knots_[k - 2];
      const double dx = v - knots_[k - 1];
      row(k - 1) += 1.0 + dx / h;
      row(k - 2) += -dx / h;
      row += dx * h / 6.0 * (second_deriv_.row(k - 2) + 2.0 * second_deriv_.row(k - 1));
    } else {
      auto it = std::upper_bound(knots_.begin(), knots_.end(), v);
      int j = static_cast<int>(it - knots_.begin()) - 1;
      j = std::clamp(j, 0, k - 2);
      add_interval_row(row, second_deriv_, j, j + 1, knots_[j + 1] - knots_[j], v - knots_[j]);
    }
  }
  return out;
}

void CubicRegressionBasis::write(std::ostream& os) const { textio::write_vector(os, "knots", knots_); }

CubicRegressionBasis CubicRegressionBasis::read(std::istream& is) {
  return CubicRegressionBasis(textio::read_vector(is, "knots"));
}

CyclicCubicBasis::CyclicCubicBasis(int dim, double period) : period_(period) {
  if (dim < 4) throw std::invalid_argument("cyclic cubic spline: basis dimension must be >= 4");
  if (!(period > 0.0) || !std::isfinite(period)) {
    throw std::invalid_argument("cyclic cubic spline: period must be positive");
  }
  knots_.resize(dim);
  for (int j = 0; j < dim; ++j) knots_[j] = period * j / dim;
  auto sys = cyclic_system(knots_, period_);
  second_deriv_ = std::move(sys.second_deriv);
  penalty_ = std::move(sys.penalty);
}

Matrix CyclicCubicBasis::evaluate(std::span<const double> x) const {
  require_finite(x, "cyclic cubic spline");
  const int k = dim();
  const double h = period_ / k;
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(x.size()), k);
  for (std::size_t r = 0; r < x.size(); ++r) {
    double v = std::fmod(x[r], period_);
    if (v < 0.0) v += period_;
    int j = std::clamp(static_cast<int>(std::floor(v / h)), 0, k - 1);
    double offset = v - knots_[j];
    if (offset < 0.0) offset = 0.0;
    add_interval_row(out.row(static_cast<Eigen::Index>(r)), second_deriv_, j, (j + 1) % k, h,
                     std::min(offset, h));
  }
  return out;
}

void CyclicCubicBasis::write(std::ostream& os) const {
  os << "cyclic " << knots_.size() << ' ' << textio::fmt_double(period_) << '\n';
}

CyclicCubicBasis CyclicCubicBasis::read(std::istream& is) {
  textio::expect(is, "cyclic");
  const int dim = textio::read_value<int>(is, "cyclic dimension");
  const double period = textio::read_double(is);
  return CyclicCubicBasis(dim, period);
}

BasisRealization build_cubic_regression(std::span<const double> x, int dim) {
  const auto basis = CubicRegressionBasis::from_data(x, dim);
  BasisRealization out;
  out.design = basis.evaluate(x);
  out.penalty_blocks = {basis.penalty()};
  out.null_space_dim = basis.null_space_dim();
  return out;
}

BasisRealization build_cyclic_cubic(std::span<const double> x, int dim, double period) {
  const CyclicCubicBasis basis(dim, period);
  BasisRealization out;
  out.design = basis.evaluate(x);
  out.penalty_blocks = {basis.penalty()};
  out.null_space_dim = basis.null_space_dim();
  return out;
}

}  // namespace droughtrisk::splines
