#include <cmath>
#include <limits>
#include <stdexcept>

#include "droughtrisk/errors.hpp"
#include "droughtrisk/gamma_gam.hpp"

namespace droughtrisk::gam {
namespace {

constexpr double kMaxLinearPredictor = 700.0;

Matrix with_intercept(const std::vector<splines::SmoothTerm>& terms, const CovariateTable& rows,
                      Eigen::Index n_rows, Eigen::Index width) {
  Matrix x(n_rows, width);
  x.col(0).setOnes();
  Eigen::Index col = 1;
  for (const auto& t : terms) {
    x.middleCols(col, t.width()) = t.design(rows);
    col += t.width();
  }
  return x;
}

Eigen::Index row_count(const CovariateTable& rows) {
  if (rows.empty()) return -1;
  const auto n = rows.begin()->second.size();
  for (const auto& [name, col] : rows) {
    if (col.size() != n) throw std::invalid_argument("covariate column '" + name + "' has a different length");
  }
  return static_cast<Eigen::Index>(n);
}

}  // namespace

void GammaGamSpec::validate() const {
  if (accumulation_m < 1) throw std::invalid_argument("accumulation period must be >= 1");
  for (const auto& s : scale_formula) s.validate();
  for (const auto& s : shape_formula) s.validate();
}

double gamma_log_density(double x, double alpha, double psi) {
  if (!(x > 0.0) || !(alpha > 0.0) || !(psi > 0.0) || !std::isfinite(x) || !std::isfinite(alpha) ||
      !std::isfinite(psi)) {
    throw std::domain_error("gamma_log_density: arguments must be positive and finite");
  }
  return -alpha * std::log(psi) + (alpha - 1.0) * std::log(x) - x / psi -
         numerics::log_gamma_fn(alpha);
}

ModelStructure ModelStructure::build(const GammaGamSpec& spec, const CovariateTable& training) {
  spec.validate();
  ModelStructure out;
  out.spec_ = spec;
  for (const auto& s : spec.scale_formula) out.scale_terms_.push_back(splines::SmoothTerm::build(s, training));
  for (const auto& s : spec.shape_formula) out.shape_terms_.push_back(splines::SmoothTerm::build(s, training));
  out.finalize_layout();

  // Rescale each penalty so that its Frobenius norm matches that of the
  // term's cross-product matrix; lambda then lives on a comparable scale for
  // every term and the outer optimizer starts from sensible curvature.
  out.penalty_scale_.assign(out.penalty_scale_.size(), 1.0);
  for (const auto& t : out.layout_) {
    const auto& term = out.term(t);
    const Matrix x = term.design(training);
    const double xx = (x.transpose() * x).norm();
    for (std::size_t j = 0; j < t.n_lambda; ++j) {
      const double s = term.penalties()[j].norm();
      out.penalty_scale_[t.first_lambda + j] = (s > 0.0 && xx > 0.0) ? xx / s : 1.0;
    }
  }
  return out;
}

void ModelStructure::finalize_layout() {
  layout_.clear();
  std::size_t n_lambda = 0;
  Eigen::Index offset = 1;
  for (std::size_t i = 0; i < scale_terms_.size(); ++i) {
    const auto& t = scale_terms_[i];
    layout_.push_back({Predictor::scale, i, offset, t.width(), n_lambda, t.penalties().size()});
    offset += t.width();
    n_lambda += t.penalties().size();
  }
  n_scale_ = offset;
  offset += 1;
  for (std::size_t i = 0; i < shape_terms_.size(); ++i) {
    const auto& t = shape_terms_[i];
    layout_.push_back({Predictor::shape, i, offset, t.width(), n_lambda, t.penalties().size()});
    offset += t.width();
    n_lambda += t.penalties().size();
  }
  n_shape_ = offset - n_scale_;
  penalty_scale_.resize(n_lambda, 1.0);
}

const splines::SmoothTerm& ModelStructure::term(const TermLayout& t) const {
  return t.predictor == Predictor::scale ? scale_terms_.at(t.term_index) : shape_terms_.at(t.term_index);
}

Matrix ModelStructure::scale_design(const CovariateTable& rows) const {
  const auto n = row_count(rows);
  if (n < 0) throw std::invalid_argument("empty covariate table");
  return with_intercept(scale_terms_, rows, n, n_scale_);
}

Matrix ModelStructure::shape_design(const CovariateTable& rows) const {
  const auto n = row_count(rows);
  if (n < 0) throw std::invalid_argument("empty covariate table");
  return with_intercept(shape_terms_, rows, n, n_shape_);
}

std::vector<Matrix> ModelStructure::term_penalties(const TermLayout& t) const {
  std::vector<Matrix> out;
  const auto& pens = term(t).penalties();
  for (std::size_t j = 0; j < pens.size(); ++j) out.push_back(penalty_scale_[t.first_lambda + j] * pens[j]);
  return out;
}

int ModelStructure::term_null_space_dim(const TermLayout& t) const { return term(t).null_space_dim(); }

Matrix ModelStructure::penalty_component(std::size_t k) const {
  Matrix s = Matrix::Zero(n_coef(), n_coef());
  for (const auto& t : layout_) {
    if (k >= t.first_lambda && k < t.first_lambda + t.n_lambda) {
      const std::size_t j = k - t.first_lambda;
      s.block(t.offset, t.offset, t.width, t.width) = penalty_scale_[k] * term(t).penalties()[j];
      return s;
    }
  }
  throw std::out_of_range("penalty index out of range");
}

Matrix ModelStructure::penalty_matrix(const Vector& lambda) const {
  if (static_cast<std::size_t>(lambda.size()) != n_lambda()) {
    throw std::invalid_argument("lambda has " + std::to_string(lambda.size()) + " entries, model has " +
                                std::to_string(n_lambda()) + " penalties");
  }
  Matrix s = Matrix::Zero(n_coef(), n_coef());
  for (const auto& t : layout_) {
    const auto& pens = term(t).penalties();
    for (std::size_t j = 0; j < pens.size(); ++j) {
      const std::size_t k = t.first_lambda + j;
      s.block(t.offset, t.offset, t.width, t.width) += lambda[static_cast<Eigen::Index>(k)] * penalty_scale_[k] * pens[j];
    }
  }
  return s;
}

Matrix ModelStructure::penalty_root(const Vector& lambda) const {
  const Matrix s = penalty_matrix(lambda);
  std::vector<Matrix> blocks;
  std::vector<Eigen::Index> offsets;
  Eigen::Index rows = 0;
  for (const auto& t : layout_) {
    if (t.n_lambda == 0) continue;
    Eigen::SelfAdjointEigenSolver<Matrix> es(s.block(t.offset, t.offset, t.width, t.width));
    const Vector& ev = es.eigenvalues();
    const Eigen::Index rank = std::max<Eigen::Index>(0, t.width - term_null_space_dim(t));
    // The structural rank already excludes the null space; only roundoff
    // negatives are dropped so that widely different lambdas sharing a
    // block all keep their directions.
    Matrix r = Matrix::Zero(rank, t.width);
    for (Eigen::Index i = 0; i < rank; ++i) {
      const Eigen::Index c = t.width - rank + i;
      if (ev[c] > 0.0) r.row(i) = std::sqrt(ev[c]) * es.eigenvectors().col(c).transpose();
    }
    blocks.push_back(std::move(r));
    offsets.push_back(t.offset);
    rows += rank;
  }
  Matrix root = Matrix::Zero(rows, n_coef());
  Eigen::Index at = 0;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    root.block(at, offsets[b], blocks[b].rows(), blocks[b].cols()) = blocks[b];
    at += blocks[b].rows();
  }
  return root;
}

GammaGamModel GammaGamModel::build(const GammaGamSpec& spec, const GammaData& data) {
  if (data.x.empty()) throw DataError("no observations to fit");
  for (double v : data.x) {
    if (!(v > 0.0) || !std::isfinite(v)) throw DataError("responses must be positive and finite");
  }
  for (const auto& [name, col] : data.covariates) {
    if (col.size() != data.x.size()) {
      throw DataError("covariate '" + name + "' length does not match the response");
    }
  }
  GammaGamModel m;
  m.structure_ = ModelStructure::build(spec, data.covariates);
  m.x_ = data.x;
  m.log_x_.resize(m.x_.size());
  for (std::size_t i = 0; i < m.x_.size(); ++i) m.log_x_[i] = std::log(m.x_[i]);
  const auto n = static_cast<Eigen::Index>(m.x_.size());
  m.scale_design_ = data.covariates.empty() ? Matrix::Ones(n, 1) : m.structure_.scale_design(data.covariates);
  m.shape_design_ = data.covariates.empty() ? Matrix::Ones(n, 1) : m.structure_.shape_design(data.covariates);
  return m;
}

double GammaGamModel::loglik(const Vector& beta) const {
  const auto ps = structure_.n_scale_coef();
  const Vector eta_s = scale_design_ * beta.head(ps);
  const Vector eta_a = shape_design_ * beta.tail(structure_.n_shape_coef());
  double total = 0.0;
  for (Eigen::Index i = 0; i < n_obs(); ++i) {
    const double s = eta_s[i];
    const double a = eta_a[i];
    if (!(std::abs(s) < kMaxLinearPredictor) || !(std::abs(a) < kMaxLinearPredictor)) {
      return -std::numeric_limits<double>::infinity();
    }
    const double alpha = std::exp(a);
    const auto ui = static_cast<std::size_t>(i);
    total += -alpha * s + (alpha - 1.0) * log_x_[ui] - x_[ui] * std::exp(-s) - numerics::log_gamma_fn(alpha);
  }
  return std::isfinite(total) ? total : -std::numeric_limits<double>::infinity();
}

double GammaGamModel::penalized_loglik(const Vector& beta, const Vector& lambda) const {
  if (beta.size() != structure_.n_coef()) throw std::invalid_argument("beta has the wrong length");
  const double ll = loglik(beta);
  if (!std::isfinite(ll)) return ll;
  return ll - 0.5 * (structure_.penalty_root(lambda) * beta).squaredNorm();
}

GammaGamModel::Derivatives GammaGamModel::derivatives(const Vector& beta) const {
  const auto ps = structure_.n_scale_coef();
  const auto pa = structure_.n_shape_coef();
  const auto n = n_obs();
  const Vector eta_s = scale_design_ * beta.head(ps);
  const Vector eta_a = shape_design_ * beta.tail(pa);

  Derivatives d;
  Vector gs(n), ga(n), wss(n), wsa(n), waa(n);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double s = eta_s[i];
    const double a = eta_a[i];
    if (!(std::abs(s) < kMaxLinearPredictor) || !(std::abs(a) < kMaxLinearPredictor)) {
      d.loglik = -std::numeric_limits<double>::infinity();
      return d;
    }
    const auto ui = static_cast<std::size_t>(i);
    const double alpha = std::exp(a);
    const double r = x_[ui] * std::exp(-s);
    const double l = log_x_[ui] - s - numerics::digamma(alpha);
    total += -alpha * s + (alpha - 1.0) * log_x_[ui] - r - numerics::log_gamma_fn(alpha);
    gs[i] = r - alpha;
    ga[i] = alpha * l;
    wss[i] = r;
    wsa[i] = alpha;
    waa[i] = alpha * alpha * numerics::trigamma(alpha) - alpha * l;
  }
  if (!std::isfinite(total)) {
    d.loglik = -std::numeric_limits<double>::infinity();
    return d;
  }
  d.loglik = total;
  d.gradient.resize(ps + pa);
  d.gradient.head(ps).noalias() = scale_design_.transpose() * gs;
  d.gradient.tail(pa).noalias() = shape_design_.transpose() * ga;

  d.neg_hessian.resize(ps + pa, ps + pa);
  const Matrix xs_w = scale_design_.array().colwise() * wss.array();
  d.neg_hessian.topLeftCorner(ps, ps).noalias() = xs_w.transpose() * scale_design_;
  const Matrix xa_w = shape_design_.array().colwise() * waa.array();
  d.neg_hessian.bottomRightCorner(pa, pa).noalias() = xa_w.transpose() * shape_design_;
  const Matrix xs_c = scale_design_.array().colwise() * wsa.array();
  d.neg_hessian.topRightCorner(ps, pa).noalias() = xs_c.transpose() * shape_design_;
  d.neg_hessian.bottomLeftCorner(pa, ps) = d.neg_hessian.topRightCorner(ps, pa).transpose();
  return d;
}

Matrix GammaGamModel::fisher_information(const Vector& beta) const {
  const auto ps = structure_.n_scale_coef();
  const auto pa = structure_.n_shape_coef();
  const Vector eta_a = shape_design_ * beta.tail(pa);
  const Vector alpha = eta_a.array().min(kMaxLinearPredictor).exp();
  Vector waa(alpha.size());
  for (Eigen::Index i = 0; i < alpha.size(); ++i) waa[i] = alpha[i] * alpha[i] * numerics::trigamma(alpha[i]);
  Matrix f(ps + pa, ps + pa);
  const Matrix xs_w = scale_design_.array().colwise() * alpha.array();
  f.topLeftCorner(ps, ps).noalias() = xs_w.transpose() * scale_design_;
  f.topRightCorner(ps, pa).noalias() = xs_w.transpose() * shape_design_;
  f.bottomLeftCorner(pa, ps) = f.topRightCorner(ps, pa).transpose();
  const Matrix xa_w = shape_design_.array().colwise() * waa.array();
  f.bottomRightCorner(pa, pa).noalias() = xa_w.transpose() * shape_design_;
  return f;
}

Vector GammaGamModel::initial_beta() const {
  double mean = 0.0;
  for (double v : x_) mean += v;
  mean /= static_cast<double>(x_.size());
  double var = 0.0;
  for (double v : x_) var += (v - mean) * (v - mean);
  var /= static_cast<double>(std::max<std::size_t>(1, x_.size() - 1));
  if (!(var > 1e-12 * mean * mean)) {
    throw FitError("responses are (numerically) constant; the Gamma model is degenerate");
  }
  Vector beta = Vector::Zero(structure_.n_coef());
  beta[0] = std::log(var / mean);
  beta[structure_.n_scale_coef()] = std::log(mean * mean / var);
  return beta;
}

double penalized_loglik(const GammaGamModel& model, const Vector& beta, const Vector& lambda) {
  return model.penalized_loglik(beta, lambda);
}

}  // namespace droughtrisk::gam
