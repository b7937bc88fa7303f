#include <istream>
#include <ostream>
#include <string>

#include "../common/text_io.hpp"
#include "droughtrisk/gamma_gam.hpp"

namespace droughtrisk::gam {
namespace {

constexpr const char* kMagic = "droughtrisk-gamma-gam-fit";
constexpr int kVersion = 1;

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::string read_line_after(std::istream& is, const std::string& tag) {
  textio::expect(is, tag);
  std::string line;
  is >> std::ws;
  std::getline(is, line);
  return line;
}

}  // namespace

void ModelStructure::write(std::ostream& os) const {
  os << "accumulation_m " << spec_.accumulation_m << '\n';
  os << "scale_formula " << splines::formula_to_string(spec_.scale_formula) << '\n';
  os << "shape_formula " << splines::formula_to_string(spec_.shape_formula) << '\n';
  os << "scale_terms " << scale_terms_.size() << '\n';
  for (const auto& t : scale_terms_) t.write(os);
  os << "shape_terms " << shape_terms_.size() << '\n';
  for (const auto& t : shape_terms_) t.write(os);
  textio::write_vector(os, "penalty_scale", penalty_scale_);
}

ModelStructure ModelStructure::read(std::istream& is) {
  ModelStructure out;
  textio::expect(is, "accumulation_m");
  out.spec_.accumulation_m = textio::read_value<int>(is, "accumulation period");
  out.spec_.scale_formula = splines::parse_formula(read_line_after(is, "scale_formula"));
  out.spec_.shape_formula = splines::parse_formula(read_line_after(is, "shape_formula"));
  textio::expect(is, "scale_terms");
  const auto ns = textio::read_value<std::size_t>(is, "scale term count");
  for (std::size_t i = 0; i < ns; ++i) out.scale_terms_.push_back(splines::SmoothTerm::read(is));
  textio::expect(is, "shape_terms");
  const auto na = textio::read_value<std::size_t>(is, "shape term count");
  for (std::size_t i = 0; i < na; ++i) out.shape_terms_.push_back(splines::SmoothTerm::read(is));
  if (ns != out.spec_.scale_formula.size() || na != out.spec_.shape_formula.size()) {
    throw std::runtime_error("fit file: term count does not match the formula");
  }
  out.finalize_layout();
  const auto scale = textio::read_vector(is, "penalty_scale");
  if (scale.size() != out.penalty_scale_.size()) throw std::runtime_error("fit file: penalty count mismatch");
  out.penalty_scale_ = scale;
  return out;
}

void write_fit(std::ostream& os, const GammaGamFit& fit) {
  os << kMagic << ' ' << kVersion << '\n';
  fit.structure.write(os);
  textio::write_vector(os, "beta", to_std(fit.beta));
  textio::write_vector(os, "lambda", to_std(fit.lambda));
  textio::write_vector(os, "edf", fit.edf_per_smooth);
  os << "reml_value " << textio::fmt_double(fit.reml_value) << '\n';
  os << "converged " << (fit.converged ? 1 : 0) << '\n';
  os << "outer_iterations " << fit.outer_iterations << '\n';
  os << "n_obs " << fit.n_obs << '\n';
  os << "n_zero_excluded " << fit.n_zero_excluded << '\n';
  os << "hull_covariates " << fit.hull_covariates.size();
  for (const auto& c : fit.hull_covariates) os << ' ' << c;
  os << '\n';
  std::vector<double> flat;
  for (const auto& p : fit.training_hull) {
    flat.push_back(p[0]);
    flat.push_back(p[1]);
  }
  textio::write_vector(os, "hull", flat);
  os << "ranges " << fit.covariate_ranges.size() << '\n';
  for (const auto& [name, r] : fit.covariate_ranges) {
    os << name << ' ' << textio::fmt_double(r.first) << ' ' << textio::fmt_double(r.second) << '\n';
  }
  textio::write_matrix(os, "hessian", fit.hessian);
  os << "end\n";
}

GammaGamFit read_fit(std::istream& is) {
  textio::expect(is, kMagic);
  const int version = textio::read_value<int>(is, "format version");
  if (version != kVersion) {
    throw std::runtime_error("fit file: unsupported format version " + std::to_string(version));
  }
  GammaGamFit fit;
  fit.structure = ModelStructure::read(is);
  fit.beta = to_eigen(textio::read_vector(is, "beta"));
  fit.lambda = to_eigen(textio::read_vector(is, "lambda"));
  fit.edf_per_smooth = textio::read_vector(is, "edf");
  textio::expect(is, "reml_value");
  fit.reml_value = textio::read_double(is);
  textio::expect(is, "converged");
  fit.converged = textio::read_value<int>(is, "converged flag") != 0;
  textio::expect(is, "outer_iterations");
  fit.outer_iterations = textio::read_value<int>(is, "iteration count");
  textio::expect(is, "n_obs");
  fit.n_obs = textio::read_value<std::size_t>(is, "observation count");
  textio::expect(is, "n_zero_excluded");
  fit.n_zero_excluded = textio::read_value<std::size_t>(is, "zero count");
  textio::expect(is, "hull_covariates");
  const auto nh = textio::read_value<std::size_t>(is, "hull covariate count");
  for (std::size_t i = 0; i < nh; ++i) fit.hull_covariates.push_back(textio::read_value<std::string>(is, "name"));
  const auto flat = textio::read_vector(is, "hull");
  for (std::size_t i = 0; i + 1 < flat.size(); i += 2) fit.training_hull.push_back({flat[i], flat[i + 1]});
  textio::expect(is, "ranges");
  const auto nr = textio::read_value<std::size_t>(is, "range count");
  for (std::size_t i = 0; i < nr; ++i) {
    const auto name = textio::read_value<std::string>(is, "range name");
    const double lo = textio::read_double(is);
    const double hi = textio::read_double(is);
    fit.covariate_ranges[name] = {lo, hi};
  }
  fit.hessian = textio::read_matrix(is, "hessian");
  textio::expect(is, "end");
  const auto& st = fit.structure;
  if (fit.beta.size() != st.n_coef() || static_cast<std::size_t>(fit.lambda.size()) != st.n_lambda() ||
      fit.hessian.rows() != st.n_coef() || fit.edf_per_smooth.size() != st.layout().size()) {
    throw std::runtime_error("fit file: dimensions do not match the model structure");
  }
  fit.penalty = st.penalty_matrix(fit.lambda);
  return fit;
}

}  // namespace droughtrisk::gam
