#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "droughtrisk/numerics.hpp"
#include "droughtrisk/splines.hpp"

namespace droughtrisk::gam {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using splines::CovariateTable;
using splines::SmoothSpec;

/// log psi = intercept + scale_formula terms; log alpha = intercept + shape_formula terms.
struct GammaGamSpec {
  std::vector<SmoothSpec> scale_formula;
  std::vector<SmoothSpec> shape_formula;
  int accumulation_m = 1;

  void validate() const;
};

/// Positive responses with one covariate row per response.
struct GammaData {
  std::vector<double> x;
  CovariateTable covariates;
};

enum class Predictor { scale, shape };

/// Position of one smooth term inside the joint coefficient and lambda vectors.
struct TermLayout {
  Predictor predictor;
  std::size_t term_index;
  Eigen::Index offset;
  Eigen::Index width;
  std::size_t first_lambda;
  std::size_t n_lambda;
};

/// log h(x; alpha, psi) for the shape/scale Gamma density.
double gamma_log_density(double x, double alpha, double psi);

/// Realized smooth terms for both linear predictors, independent of any
/// particular set of rows. Coefficients are ordered
/// [scale intercept, scale terms..., shape intercept, shape terms...].
class ModelStructure {
 public:
  static ModelStructure build(const GammaGamSpec& spec, const CovariateTable& training);

  const GammaGamSpec& spec() const { return spec_; }
  const std::vector<splines::SmoothTerm>& scale_terms() const { return scale_terms_; }
  const std::vector<splines::SmoothTerm>& shape_terms() const { return shape_terms_; }
  const std::vector<TermLayout>& layout() const { return layout_; }
  const std::vector<double>& penalty_scale() const { return penalty_scale_; }

  Eigen::Index n_coef() const { return n_scale_ + n_shape_; }
  Eigen::Index n_scale_coef() const { return n_scale_; }
  Eigen::Index n_shape_coef() const { return n_shape_; }
  std::size_t n_lambda() const { return penalty_scale_.size(); }

  Matrix scale_design(const CovariateTable& rows) const;
  Matrix shape_design(const CovariateTable& rows) const;

  /// Scaled penalty k embedded in the full coefficient space.
  Matrix penalty_component(std::size_t k) const;
  /// S_lambda = sum_k lambda_k S_k.
  Matrix penalty_matrix(const Vector& lambda) const;
  /// R with R^T R = S_lambda over the penalized subspace of each term, so
  /// beta^T S beta = |R beta|^2 is evaluated without cancellation.
  Matrix penalty_root(const Vector& lambda) const;
  /// Term-local scaled penalty blocks for the term.
  std::vector<Matrix> term_penalties(const TermLayout& term) const;
  int term_null_space_dim(const TermLayout& term) const;
  const splines::SmoothTerm& term(const TermLayout& t) const;

  void write(std::ostream& os) const;
  static ModelStructure read(std::istream& is);

 private:
  void finalize_layout();

  GammaGamSpec spec_;
  std::vector<splines::SmoothTerm> scale_terms_;
  std::vector<splines::SmoothTerm> shape_terms_;
  std::vector<double> penalty_scale_;
  std::vector<TermLayout> layout_;
  Eigen::Index n_scale_ = 0;
  Eigen::Index n_shape_ = 0;
};

/// Model structure bound to a training data set.
class GammaGamModel {
 public:
  static GammaGamModel build(const GammaGamSpec& spec, const GammaData& data);

  const ModelStructure& structure() const { return structure_; }
  const std::vector<double>& response() const { return x_; }
  const Matrix& scale_design() const { return scale_design_; }
  const Matrix& shape_design() const { return shape_design_; }
  Eigen::Index n_obs() const { return static_cast<Eigen::Index>(x_.size()); }

  double loglik(const Vector& beta) const;
  double penalized_loglik(const Vector& beta, const Vector& lambda) const;

  struct Derivatives {
    double loglik = 0.0;
    Vector gradient;
    Matrix neg_hessian;
  };
  Derivatives derivatives(const Vector& beta) const;
  /// Expected information; positive definite for any beta since
  /// alpha * trigamma(alpha) > 1.
  Matrix fisher_information(const Vector& beta) const;

  /// Method-of-moments intercepts, all smooth coefficients zero.
  Vector initial_beta() const;

 private:
  ModelStructure structure_;
  std::vector<double> x_;
  std::vector<double> log_x_;
  Matrix scale_design_;
  Matrix shape_design_;
};

struct InnerFit {
  Vector beta;
  /// Negative Hessian of the penalized log-likelihood at beta.
  Matrix hessian;
  double penalized_loglik = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  std::string message;
};

double penalized_loglik(const GammaGamModel& model, const Vector& beta, const Vector& lambda);

/// Newton iteration on beta for fixed lambda with step halving and a ridge
/// fallback when the penalized Hessian is not positive definite.
InnerFit fit_inner(const GammaGamModel& model, const Vector& lambda,
                   const std::optional<Vector>& warm_start = std::nullopt, int max_iter = 200);

struct RemlEvaluation {
  double value = 0.0;
  Vector gradient;  // with respect to log(lambda)
  InnerFit inner;
};

/// Laplace-approximate restricted log-likelihood at lambda (constant dropped).
double reml_criterion(const GammaGamModel& model, const Vector& lambda);
/// Criterion value and its exact gradient in log(lambda).
RemlEvaluation reml_evaluate(const GammaGamModel& model, const Vector& lambda,
                             const std::optional<Vector>& warm_start = std::nullopt);

/// Effective degrees of freedom per smooth term (layout order).
std::vector<double> effective_dof(const ModelStructure& structure, const Matrix& hessian,
                                  const Vector& lambda);

struct GammaGamFit {
  ModelStructure structure;
  Vector beta;
  Vector lambda;
  Matrix penalty;
  Matrix hessian;
  std::vector<double> edf_per_smooth;
  double reml_value = 0.0;
  bool converged = false;
  int outer_iterations = 0;
  std::string message;
  std::size_t n_obs = 0;
  std::size_t n_zero_excluded = 0;
  /// Convex hull of the training locations of the first two-dimensional smooth.
  std::vector<std::string> hull_covariates;
  std::vector<splines::Point2> training_hull;
  /// Training range of every covariate used by a one-dimensional non-cyclic smooth.
  std::map<std::string, std::pair<double, double>> covariate_ranges;
};

struct FitOptions {
  numerics::ToleranceConfig outer{1e-8, 1e-6, 100};
  double log_lambda_min = -12.0;
  double log_lambda_max = 12.0;
  /// Throw FitError instead of returning a fit flagged as not converged.
  bool require_convergence = true;
};

/// Penalized likelihood fit with REML smoothing-parameter selection.
/// Zero responses are dropped and counted; negative responses are rejected.
GammaGamFit fit(const GammaData& data, const GammaGamSpec& spec, const FitOptions& options = {});

/// Same as fit() on an already built model; lambda held fixed.
GammaGamFit fit_fixed_lambda(const GammaGamModel& model, const Vector& lambda);

std::vector<double> effective_dof(const GammaGamFit& fit);

struct Prediction {
  double alpha = 0.0;
  double psi = 0.0;
  bool extrapolated = false;
};

std::vector<Prediction> predict(const GammaGamFit& fit, const CovariateTable& rows);
Prediction predict(const GammaGamFit& fit, const std::map<std::string, double>& row);

/// Versioned text serialization sufficient for reload-and-predict.
void write_fit(std::ostream& os, const GammaGamFit& fit);
GammaGamFit read_fit(std::istream& is);

/// Convex hull (counter-clockwise) and point-in-hull test.
std::vector<splines::Point2> convex_hull(std::vector<splines::Point2> points);
bool inside_hull(const std::vector<splines::Point2>& hull, const splines::Point2& p,
                 double tol = 1e-9);

}  // namespace droughtrisk::gam
