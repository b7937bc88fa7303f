#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

#include <fmt/format.h>

#include "droughtrisk/errors.hpp"
#include "droughtrisk/gamma_gam.hpp"

namespace droughtrisk::gam {
namespace {

struct Factorized {
  double logdet = 0.0;
  Matrix inverse;
};

Factorized factorize(const Matrix& h) {
  const auto p = h.rows();
  Factorized out;
  Eigen::LLT<Matrix> llt(h);
  if (llt.info() == Eigen::Success) {
    const Matrix& l = llt.matrixLLT();
    for (Eigen::Index i = 0; i < p; ++i) out.logdet += 2.0 * std::log(l(i, i));
    out.inverse = llt.solve(Matrix::Identity(p, p));
    return out;
  }
  // Not positive definite: fall back to the pseudo-determinant and
  // pseudo-inverse over eigenvalues above a relative cutoff.
  Eigen::SelfAdjointEigenSolver<Matrix> es(h);
  const Vector& ev = es.eigenvalues();
  const double cut = 1e-8 * ev.cwiseAbs().maxCoeff();
  Vector inv = Vector::Zero(p);
  for (Eigen::Index i = 0; i < p; ++i) {
    if (ev[i] > cut) {
      out.logdet += std::log(ev[i]);
      inv[i] = 1.0 / ev[i];
    }
  }
  out.inverse = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
  return out;
}

// Newton direction H d = g. When H is not positive definite the expected
// information stands in for it (Fisher scoring); a ridge H + tau I is the
// last resort.
Vector newton_direction(const Matrix& h, const Vector& g, const std::function<Matrix()>& fisher) {
  Eigen::LLT<Matrix> llt(h);
  if (llt.info() == Eigen::Success) return llt.solve(g);
  Eigen::LLT<Matrix> scoring(fisher());
  if (scoring.info() == Eigen::Success) return scoring.solve(g);
  const double scale = std::max(1.0, h.diagonal().cwiseAbs().maxCoeff());
  double tau = 1e-8 * scale;
  for (int k = 0; k < 30; ++k, tau *= 10.0) {
    Eigen::LLT<Matrix> ridge(h + tau * Matrix::Identity(h.rows(), h.cols()));
    if (ridge.info() == Eigen::Success) return ridge.solve(g);
  }
  return g / scale;
}

struct PenaltyLogDet {
  double value = 0.0;
  // tr(S^+ lambda_k S_k) for each k.
  std::vector<double> trace;
};

// log|S_lambda|^+ evaluated term by term. The rank of each term's total
// penalty is structural (width minus null-space dimension), so it does not
// depend on lambda and the criterion stays smooth in log(lambda).
PenaltyLogDet penalty_logdet(const ModelStructure& st, const Vector& lambda) {
  PenaltyLogDet out;
  out.trace.assign(st.n_lambda(), 0.0);
  for (const auto& t : st.layout()) {
    if (t.n_lambda == 0) continue;
    const auto pens = st.term_penalties(t);
    Matrix total = Matrix::Zero(t.width, t.width);
    for (std::size_t j = 0; j < pens.size(); ++j) {
      total += lambda[static_cast<Eigen::Index>(t.first_lambda + j)] * pens[j];
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(total);
    const Eigen::Index rank = std::max<Eigen::Index>(0, t.width - st.term_null_space_dim(t));
    if (rank == 0) continue;
    const Vector ev = es.eigenvalues().tail(rank);
    const Matrix u = es.eigenvectors().rightCols(rank);
    const double floor = std::max(ev.maxCoeff(), 1e-300) * 1e-16;
    Vector inv(rank);
    for (Eigen::Index i = 0; i < rank; ++i) {
      const double e = std::max(ev[i], floor);
      out.value += std::log(e);
      inv[i] = 1.0 / e;
    }
    const Matrix pinv = u * inv.asDiagonal() * u.transpose();
    for (std::size_t j = 0; j < pens.size(); ++j) {
      const auto k = t.first_lambda + j;
      out.trace[k] = lambda[static_cast<Eigen::Index>(k)] * (pinv.array() * pens[j].array()).sum();
    }
  }
  return out;
}

Vector check_lambda(const ModelStructure& st, const Vector& lambda) {
  if (static_cast<std::size_t>(lambda.size()) != st.n_lambda()) {
    throw std::invalid_argument(fmt::format("lambda has {} entries, model has {} penalties",
                                            lambda.size(), st.n_lambda()));
  }
  for (Eigen::Index k = 0; k < lambda.size(); ++k) {
    if (!(lambda[k] > 0.0) || !std::isfinite(lambda[k])) {
      throw std::invalid_argument("smoothing parameters must be positive and finite");
    }
  }
  return lambda;
}

std::vector<splines::Point2> hull_points(const CovariateTable& rows, const std::string& a,
                                         const std::string& b) {
  const auto& x = rows.at(a);
  const auto& y = rows.at(b);
  std::vector<splines::Point2> pts(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) pts[i] = {x[i], y[i]};
  return pts;
}

void collect_support(const SmoothSpec& s, GammaGamFit& fit, const CovariateTable& rows) {
  switch (s.kind) {
    case splines::SmoothKind::thin_plate_2d:
      if (fit.hull_covariates.empty()) {
        fit.hull_covariates = s.covariate_names;
        fit.training_hull = convex_hull(hull_points(rows, s.covariate_names[0], s.covariate_names[1]));
      }
      break;
    case splines::SmoothKind::cubic_regression_1d: {
      const auto& col = rows.at(s.covariate_names[0]);
      const auto [lo, hi] = std::minmax_element(col.begin(), col.end());
      fit.covariate_ranges[s.covariate_names[0]] = {*lo, *hi};
      break;
    }
    case splines::SmoothKind::cyclic_cubic_1d:
      break;
    case splines::SmoothKind::tensor_product:
      for (const auto& c : s.child_specs) collect_support(c, fit, rows);
      break;
  }
}

double cross(const splines::Point2& o, const splines::Point2& a, const splines::Point2& b) {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

}  // namespace

InnerFit fit_inner(const GammaGamModel& model, const Vector& lambda,
                   const std::optional<Vector>& warm_start, int max_iter) {
  const auto& st = model.structure();
  check_lambda(st, lambda);
  const Matrix root = st.penalty_root(lambda);
  const Matrix s = root.transpose() * root;
  auto penalty = [&](const Vector& b) { return (root * b).squaredNorm(); };

  InnerFit out;
  out.beta = warm_start ? *warm_start : model.initial_beta();
  if (out.beta.size() != st.n_coef()) throw std::invalid_argument("warm start has the wrong length");

  auto objective = [&](const Vector& b) {
    const double ll = model.loglik(b);
    if (!std::isfinite(ll)) return -std::numeric_limits<double>::infinity();
    return ll - 0.5 * penalty(b);
  };

  auto d = model.derivatives(out.beta);
  if (!std::isfinite(d.loglik) && warm_start) {
    out.beta = model.initial_beta();
    d = model.derivatives(out.beta);
  }
  if (!std::isfinite(d.loglik)) throw FitError("penalized log-likelihood is not finite at the start");

  double lp = d.loglik - 0.5 * penalty(out.beta);
  Vector g = d.gradient - root.transpose() * (root * out.beta);
  Matrix h = d.neg_hessian + s;
  out.message = "iteration limit reached";

  int iter = 0;
  for (; iter < max_iter; ++iter) {
    const Vector step = newton_direction(h, g, [&] { return Matrix(model.fisher_information(out.beta) + s); });
    const double decrement = g.dot(step);
    if (g.norm() <= 1e-6 * (1.0 + std::abs(lp)) && std::abs(decrement) <= 1e-20 * (1.0 + std::abs(lp))) {
      out.message = "converged";
      break;
    }
    double t = 1.0;
    bool accepted = false;
    Vector trial;
    double lp_trial = 0.0;
    for (int k = 0; k < 50; ++k, t *= 0.5) {
      trial = out.beta + t * step;
      lp_trial = objective(trial);
      if (std::isfinite(lp_trial) && lp_trial >= lp - 1e-13 * (1.0 + std::abs(lp))) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      out.message = "step halving failed";
      break;
    }
    out.beta = std::move(trial);
    const double improvement = lp_trial - lp;
    d = model.derivatives(out.beta);
    lp = d.loglik - 0.5 * penalty(out.beta);
    g = d.gradient - root.transpose() * (root * out.beta);
    h = d.neg_hessian + s;
    if (improvement <= 0.0 && g.norm() <= 1e-6 * (1.0 + std::abs(lp))) {
      out.message = "converged (no further improvement)";
      ++iter;
      break;
    }
  }
  out.iterations = iter;
  out.penalized_loglik = lp;
  out.grad_norm = g.norm();
  out.hessian = 0.5 * (h + h.transpose());
  out.converged = out.grad_norm <= 1e-6 * (1.0 + std::abs(lp));
  if (!out.converged && out.message == "converged") out.message = "gradient tolerance not met";
  return out;
}

RemlEvaluation reml_evaluate(const GammaGamModel& model, const Vector& lambda,
                             const std::optional<Vector>& warm_start) {
  const auto& st = model.structure();
  RemlEvaluation out;
  out.inner = fit_inner(model, lambda, warm_start);
  if (!out.inner.converged) {
    throw FitError(fmt::format("inner Newton iteration did not converge ({}; |g| = {:.3g} after {} iterations)",
                               out.inner.message, out.inner.grad_norm, out.inner.iterations));
  }
  const Vector& beta = out.inner.beta;
  const auto fh = factorize(out.inner.hessian);
  const auto fs = penalty_logdet(st, lambda);
  out.value = out.inner.penalized_loglik + 0.5 * fs.value - 0.5 * fh.logdet;

  const auto nl = st.n_lambda();
  out.gradient = Vector::Zero(static_cast<Eigen::Index>(nl));
  if (nl == 0) return out;

  const auto ps = st.n_scale_coef();
  const auto pa = st.n_shape_coef();
  const auto n = model.n_obs();
  const Matrix& xs = model.scale_design();
  const Matrix& xa = model.shape_design();
  const Vector eta_s = xs * beta.head(ps);
  const Vector eta_a = xa * beta.tail(pa);
  const auto& x = model.response();

  // Diagonal 2x2 blocks of X H^{-1} X^T, one per observation.
  const Matrix& hi = fh.inverse;
  const Vector p_ss = ((xs * hi.topLeftCorner(ps, ps)).array() * xs.array()).rowwise().sum();
  const Vector p_aa = ((xa * hi.bottomRightCorner(pa, pa)).array() * xa.array()).rowwise().sum();
  const Vector p_sa = ((xs * hi.topRightCorner(ps, pa)).array() * xa.array()).rowwise().sum();

  Vector r(n), alpha(n), l_aaa(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double a = std::exp(eta_a[i]);
    const double lx = std::log(x[static_cast<std::size_t>(i)]);
    const double l = lx - eta_s[i] - numerics::digamma(a);
    const double tri = numerics::trigamma(a);
    const double l_aa = a * l - a * a * tri;
    alpha[i] = a;
    r[i] = x[static_cast<std::size_t>(i)] * std::exp(-eta_s[i]);
    l_aaa[i] = l_aa - 2.0 * a * a * tri - a * a * a * numerics::tetragamma(a);
  }

  for (std::size_t k = 0; k < nl; ++k) {
    const auto ki = static_cast<Eigen::Index>(k);
    const Matrix sk = st.penalty_component(k);
    const Vector skb = lambda[ki] * (sk * beta);
    const Vector dbeta = -(hi * skb);
    const Vector de_s = xs * dbeta.head(ps);
    const Vector de_a = xa * dbeta.tail(pa);
    double tr_w = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double dw_ss = -r[i] * de_s[i];
      const double dw_sa = alpha[i] * de_a[i];
      const double dw_aa = -l_aaa[i] * de_a[i] + alpha[i] * de_s[i];
      tr_w += dw_ss * p_ss[i] + 2.0 * dw_sa * p_sa[i] + dw_aa * p_aa[i];
    }
    const double tr_hs = lambda[ki] * (hi.array() * sk.array()).sum();
    out.gradient[ki] = -0.5 * beta.dot(skb) + 0.5 * fs.trace[k] - 0.5 * (tr_hs + tr_w);
  }
  return out;
}

double reml_criterion(const GammaGamModel& model, const Vector& lambda) {
  return reml_evaluate(model, lambda).value;
}

std::vector<double> effective_dof(const ModelStructure& st, const Matrix& hessian, const Vector& lambda) {
  const Matrix s = st.penalty_matrix(lambda);
  Eigen::LLT<Matrix> llt(hessian);
  Matrix f;
  if (llt.info() == Eigen::Success) {
    f = llt.solve(s);
  } else {
    const auto fh = factorize(hessian);
    if (fh.inverse.isZero()) throw FitError("singular Hessian: effective degrees of freedom undefined");
    f = fh.inverse * s;
  }
  std::vector<double> out;
  for (const auto& t : st.layout()) {
    double edf = 0.0;
    for (Eigen::Index i = t.offset; i < t.offset + t.width; ++i) edf += 1.0 - f(i, i);
    out.push_back(edf);
  }
  return out;
}

std::vector<double> effective_dof(const GammaGamFit& fit) {
  return effective_dof(fit.structure, fit.hessian, fit.lambda);
}

GammaGamFit fit_fixed_lambda(const GammaGamModel& model, const Vector& lambda) {
  const auto ev = reml_evaluate(model, lambda);
  GammaGamFit out;
  out.structure = model.structure();
  out.beta = ev.inner.beta;
  out.lambda = lambda;
  out.penalty = model.structure().penalty_matrix(lambda);
  out.hessian = ev.inner.hessian;
  out.edf_per_smooth = effective_dof(out.structure, out.hessian, lambda);
  out.reml_value = ev.value;
  out.converged = ev.inner.converged;
  out.n_obs = static_cast<std::size_t>(model.n_obs());
  out.message = ev.inner.message;
  return out;
}

GammaGamFit fit(const GammaData& data, const GammaGamSpec& spec, const FitOptions& options) {
  spec.validate();
  GammaData kept;
  for (const auto& [name, col] : data.covariates) {
    if (col.size() != data.x.size()) throw DataError("covariate '" + name + "' length does not match the response");
    kept.covariates[name];
  }
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < data.x.size(); ++i) {
    const double v = data.x[i];
    if (!std::isfinite(v) || v < 0.0) throw DataError(fmt::format("invalid response {} at row {}", v, i));
    if (v == 0.0) {
      ++zeros;
      continue;
    }
    kept.x.push_back(v);
    for (const auto& [name, col] : data.covariates) kept.covariates[name].push_back(col[i]);
  }
  const GammaGamModel model = GammaGamModel::build(spec, kept);
  const auto& st = model.structure();
  const auto nl = static_cast<Eigen::Index>(st.n_lambda());

  // The search runs in theta with rho = lo + (hi - lo) / (1 + exp(-theta)),
  // so log(lambda) never leaves [lo, hi] and the gradient fades at the
  // bounds instead of leaving a flat plateau beyond them.
  const double lo = options.log_lambda_min;
  const double hi = options.log_lambda_max;
  if (!(lo < hi)) throw std::invalid_argument("log_lambda_min must be below log_lambda_max");
  auto to_rho = [&](const Vector& theta) -> Vector {
    return theta.unaryExpr([&](double t) { return lo + (hi - lo) / (1.0 + std::exp(-t)); });
  };
  auto drho = [&](const Vector& theta) -> Vector {
    return theta.unaryExpr([&](double t) {
      const double u = 1.0 / (1.0 + std::exp(-t));
      return (hi - lo) * u * (1.0 - u);
    });
  };
  auto to_lambda = [&](const Vector& rho) -> Vector { return rho.array().exp(); };

  Vector warm = fit_inner(model, Vector::Ones(nl)).beta;
  Vector cached_theta;
  RemlEvaluation cached;
  bool have_cache = false;
  auto evaluate = [&](const Vector& theta) -> bool {
    if (have_cache && cached_theta.size() == theta.size() && cached_theta == theta) return true;
    try {
      cached = reml_evaluate(model, to_lambda(to_rho(theta)), warm);
    } catch (const FitError&) {
      have_cache = false;
      return false;
    }
    cached_theta = theta;
    have_cache = true;
    warm = cached.inner.beta;
    return true;
  };

  GammaGamFit out;
  Vector rho_hat = Vector::Zero(nl);
  if (nl > 0) {
    numerics::Objective obj;
    obj.value = [&](const Vector& theta) {
      return evaluate(theta) ? -cached.value : std::numeric_limits<double>::infinity();
    };
    obj.gradient = [&](const Vector& theta) -> Vector {
      if (!evaluate(theta)) return Vector::Zero(theta.size());
      return Vector(-cached.gradient.cwiseProduct(drho(theta)));
    };
    // Start at lambda = 1.
    const Vector theta0 = Vector::Constant(nl, std::log(-lo / hi));
    const auto res = numerics::minimize(obj, theta0, options.outer);
    rho_hat = to_rho(res.x);
    out.converged = res.converged;
    out.outer_iterations = res.iterations;
    out.message = res.message;
    if (!res.converged && options.require_convergence) {
      throw FitError(fmt::format("smoothing parameter search did not converge: {} (|g| = {:.3g} after {} iterations)",
                                 res.message, res.grad_norm, res.iterations));
    }
  } else {
    out.converged = true;
    out.message = "no smoothing parameters";
  }

  const Vector lambda = to_lambda(rho_hat);
  const auto ev = reml_evaluate(model, lambda, warm);
  out.structure = st;
  out.beta = ev.inner.beta;
  out.lambda = lambda;
  out.penalty = st.penalty_matrix(lambda);
  out.hessian = ev.inner.hessian;
  out.edf_per_smooth = effective_dof(st, out.hessian, lambda);
  out.reml_value = ev.value;
  out.n_obs = kept.x.size();
  out.n_zero_excluded = zeros;
  for (const auto& s : spec.scale_formula) collect_support(s, out, kept.covariates);
  for (const auto& s : spec.shape_formula) collect_support(s, out, kept.covariates);
  return out;
}

std::vector<Prediction> predict(const GammaGamFit& fit, const CovariateTable& rows) {
  const auto& st = fit.structure;
  Eigen::Index n = 1;
  if (!rows.empty()) n = static_cast<Eigen::Index>(rows.begin()->second.size());
  const Matrix xs = st.scale_terms().empty() ? Matrix::Ones(n, 1) : st.scale_design(rows);
  const Matrix xa = st.shape_terms().empty() ? Matrix::Ones(n, 1) : st.shape_design(rows);
  const Vector eta_s = xs * fit.beta.head(st.n_scale_coef());
  const Vector eta_a = xa * fit.beta.tail(st.n_shape_coef());
  std::vector<Prediction> out(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    auto& p = out[static_cast<std::size_t>(i)];
    p.psi = std::exp(eta_s[i]);
    p.alpha = std::exp(eta_a[i]);
    if (!fit.training_hull.empty()) {
      const splines::Point2 pt{rows.at(fit.hull_covariates[0])[static_cast<std::size_t>(i)],
                               rows.at(fit.hull_covariates[1])[static_cast<std::size_t>(i)]};
      if (!inside_hull(fit.training_hull, pt)) p.extrapolated = true;
    }
    for (const auto& [name, range] : fit.covariate_ranges) {
      const double v = rows.at(name)[static_cast<std::size_t>(i)];
      const double pad = 1e-9 * std::max(1.0, range.second - range.first);
      if (v < range.first - pad || v > range.second + pad) p.extrapolated = true;
    }
  }
  return out;
}

Prediction predict(const GammaGamFit& fit, const std::map<std::string, double>& row) {
  CovariateTable rows;
  for (const auto& [k, v] : row) rows[k] = {v};
  return predict(fit, rows).front();
}

std::vector<splines::Point2> convex_hull(std::vector<splines::Point2> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<splines::Point2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0.0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

bool inside_hull(const std::vector<splines::Point2>& hull, const splines::Point2& p, double tol) {
  if (hull.size() < 3) {
    return std::any_of(hull.begin(), hull.end(), [&](const auto& h) {
      return std::hypot(h[0] - p[0], h[1] - p[1]) <= tol;
    });
  }
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const auto& a = hull[i];
    const auto& b = hull[(i + 1) % hull.size()];
    const double len = std::hypot(b[0] - a[0], b[1] - a[1]);
    if (cross(a, b, p) < -tol * std::max(1.0, len)) return false;
  }
  return true;
}

}  // namespace droughtrisk::gam
