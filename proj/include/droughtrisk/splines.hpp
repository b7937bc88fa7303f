#pragma once

#include <array>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace droughtrisk::splines {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Point2 = std::array<double, 2>;

/// Named covariate columns, all of equal length (one entry per observation).
using CovariateTable = std::map<std::string, std::vector<double>>;

enum class SmoothKind { thin_plate_2d, cubic_regression_1d, cyclic_cubic_1d, tensor_product };

struct SmoothSpec {
  SmoothKind kind = SmoothKind::cubic_regression_1d;
  int basis_dim = 10;
  std::vector<std::string> covariate_names;
  std::vector<SmoothSpec> child_specs;
  std::optional<double> period;

  /// Throws std::invalid_argument for a malformed smooth description.
  void validate() const;

  /// Compact textual form, e.g. "te(tps(lon,lat;40),cc(month;6;12))".
  std::string to_string() const;
  static SmoothSpec parse(std::string_view text);

  static SmoothSpec thin_plate(std::string x, std::string y, int dim);
  static SmoothSpec cubic_regression(std::string x, int dim);
  static SmoothSpec cyclic_cubic(std::string x, int dim, double period);
  static SmoothSpec tensor(std::vector<SmoothSpec> children);
};

/// Parses "a + b + ..." into a list of smooth specs. "1" or an empty string
/// yields an intercept-only formula.
std::vector<SmoothSpec> parse_formula(std::string_view text);
std::string formula_to_string(const std::vector<SmoothSpec>& terms);

struct BasisRealization {
  Matrix design;
  std::vector<Matrix> penalty_blocks;
  int null_space_dim = 0;
  /// Column sums of the uncentered design; empty until apply_centering.
  Eigen::RowVectorXd centering_constraint;
  /// Maps centered coefficients to uncentered ones; empty means identity.
  Matrix constraint_basis;

  Eigen::Index width() const { return design.cols(); }
};

/// Eigenvalue floor check: min eigenvalue >= -rel_floor * max |eigenvalue|.
bool is_symmetric_psd(const Matrix& m, double rel_floor = 1e-8);

/// Row-wise Kronecker product; column index is i * b.cols() + j.
Matrix row_kronecker(const Matrix& a, const Matrix& b);

/// Natural cubic regression spline in the value-at-knot parameterization.
/// Linear beyond the boundary knots.
class CubicRegressionBasis {
 public:
  explicit CubicRegressionBasis(std::vector<double> knots);
  /// Knots at quantiles of the unique values of x.
  static CubicRegressionBasis from_data(std::span<const double> x, int dim);

  Matrix evaluate(std::span<const double> x) const;
  const Matrix& penalty() const { return penalty_; }
  int dim() const { return static_cast<int>(knots_.size()); }
  int null_space_dim() const { return 2; }
  const std::vector<double>& knots() const { return knots_; }

  void write(std::ostream& os) const;
  static CubicRegressionBasis read(std::istream& is);

 private:
  std::vector<double> knots_;
  Matrix second_deriv_;  // knot second derivatives as a linear map of coefficients
  Matrix penalty_;
};

/// Periodic cubic regression spline with knots evenly spaced over one period.
class CyclicCubicBasis {
 public:
  CyclicCubicBasis(int dim, double period);

  Matrix evaluate(std::span<const double> x) const;
  const Matrix& penalty() const { return penalty_; }
  int dim() const { return static_cast<int>(knots_.size()); }
  int null_space_dim() const { return 1; }
  double period() const { return period_; }
  const std::vector<double>& knots() const { return knots_; }

  void write(std::ostream& os) const;
  static CyclicCubicBasis read(std::istream& is);

 private:
  double period_;
  std::vector<double> knots_;
  Matrix second_deriv_;
  Matrix penalty_;
};

/// Low-rank isotropic thin-plate spline in two dimensions.
///
/// The radial kernel r^2 log(r) / (8 pi) is evaluated at the distinct data
/// locations, projected onto the complement of the linear polynomials, and
/// truncated to its leading dim - 3 eigenvectors. The unpenalized terms
/// {1, x, y} complete the basis.
class ThinPlateBasis {
 public:
  static ThinPlateBasis from_points(std::span<const Point2> points, int dim);

  Matrix evaluate(std::span<const Point2> points) const;
  const Matrix& penalty() const { return penalty_; }
  int dim() const { return static_cast<int>(penalty_.rows()); }
  int null_space_dim() const { return 3; }
  const std::vector<Point2>& centers() const { return centers_; }

  void write(std::ostream& os) const;
  static ThinPlateBasis read(std::istream& is);

 private:
  ThinPlateBasis() = default;
  std::vector<Point2> centers_;
  Point2 shift_{0.0, 0.0};
  Matrix projection_;  // centers x (dim - 3)
  Matrix penalty_;
};

double thin_plate_kernel(double r);

using MarginalBasis = std::variant<CubicRegressionBasis, CyclicCubicBasis, ThinPlateBasis>;

BasisRealization build_cyclic_cubic(std::span<const double> x, int dim, double period);
BasisRealization build_cubic_regression(std::span<const double> x, int dim);
BasisRealization build_thin_plate(std::span<const Point2> coords, int dim);
BasisRealization build_tensor_product(const std::vector<BasisRealization>& children);

/// Reparameterizes the block so its design columns sum to zero, removing one
/// column. A block whose columns already sum to zero is returned unchanged.
BasisRealization apply_centering(const BasisRealization& block);

/// One smooth term of a linear predictor: marginal bases plus the
/// sum-to-zero reparameterization fixed at construction.
class SmoothTerm {
 public:
  static SmoothTerm build(const SmoothSpec& spec, const CovariateTable& data);

  /// Centered design block for arbitrary covariate rows.
  Matrix design(const CovariateTable& data) const;
  Matrix raw_design(const CovariateTable& data) const;

  const SmoothSpec& spec() const { return spec_; }
  const std::vector<Matrix>& penalties() const { return penalties_; }
  Eigen::Index width() const { return constraint_basis_.cols(); }
  int null_space_dim() const { return null_space_dim_; }
  /// Largest attainable effective degrees of freedom.
  Eigen::Index max_edf() const { return width(); }
  const std::vector<MarginalBasis>& marginals() const { return marginals_; }

  void write(std::ostream& os) const;
  static SmoothTerm read(std::istream& is);

 private:
  SmoothSpec spec_;
  std::vector<MarginalBasis> marginals_;
  Matrix constraint_basis_;
  std::vector<Matrix> penalties_;
  int null_space_dim_ = 0;
};

}  // namespace droughtrisk::splines
