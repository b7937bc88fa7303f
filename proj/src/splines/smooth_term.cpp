#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "../common/text_io.hpp"
#include "droughtrisk/splines.hpp"

namespace droughtrisk::splines {
namespace {

Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

// Penalty of one child direction embedded in the full tensor coefficient space.
Matrix embed_penalty(const std::vector<Eigen::Index>& widths, std::size_t child, const Matrix& p) {
  Eigen::Index before = 1;
  Eigen::Index after = 1;
  for (std::size_t j = 0; j < widths.size(); ++j) {
    if (j < child) before *= widths[j];
    if (j > child) after *= widths[j];
  }
  return kron(kron(Matrix::Identity(before, before), p), Matrix::Identity(after, after));
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Splits on `sep` at parenthesis depth zero.
std::vector<std::string_view> split_top(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  int depth = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '(') ++depth;
    if (s[i] == ')') --depth;
    if (depth < 0) throw std::invalid_argument("smooth spec: unbalanced parentheses");
    if (s[i] == sep && depth == 0) {
      parts.push_back(trim(s.substr(start, i - start)));
      start = i + 1;
    }
  }
  if (depth != 0) throw std::invalid_argument("smooth spec: unbalanced parentheses");
  parts.push_back(trim(s.substr(start)));
  return parts;
}

int parse_int(std::string_view s) {
  const std::string str(trim(s));
  std::size_t pos = 0;
  const int v = std::stoi(str, &pos);
  if (pos != str.size()) throw std::invalid_argument("smooth spec: bad integer '" + str + "'");
  return v;
}

double parse_real(std::string_view s) {
  const std::string str(trim(s));
  std::size_t pos = 0;
  const double v = std::stod(str, &pos);
  if (pos != str.size()) throw std::invalid_argument("smooth spec: bad number '" + str + "'");
  return v;
}

const std::vector<double>& column(const CovariateTable& data, const std::string& name) {
  auto it = data.find(name);
  if (it == data.end()) throw std::invalid_argument("missing covariate column '" + name + "'");
  return it->second;
}

std::vector<Point2> points_of(const CovariateTable& data, const SmoothSpec& spec) {
  const auto& x = column(data, spec.covariate_names[0]);
  const auto& y = column(data, spec.covariate_names[1]);
  if (x.size() != y.size()) throw std::invalid_argument("covariate columns differ in length");
  std::vector<Point2> pts(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) pts[i] = {x[i], y[i]};
  return pts;
}

MarginalBasis make_marginal(const SmoothSpec& spec, const CovariateTable& data) {
  switch (spec.kind) {
    case SmoothKind::cubic_regression_1d:
      return CubicRegressionBasis::from_data(column(data, spec.covariate_names[0]), spec.basis_dim);
    case SmoothKind::cyclic_cubic_1d:
      return CyclicCubicBasis(spec.basis_dim, *spec.period);
    case SmoothKind::thin_plate_2d: {
      const auto pts = points_of(data, spec);
      return ThinPlateBasis::from_points(pts, spec.basis_dim);
    }
    case SmoothKind::tensor_product:
      break;
  }
  throw std::invalid_argument("nested tensor products are not supported");
}

Matrix evaluate_marginal(const MarginalBasis& basis, const SmoothSpec& spec,
                         const CovariateTable& data) {
  return std::visit(
      [&](const auto& b) -> Matrix {
        using B = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<B, ThinPlateBasis>) {
          const auto pts = points_of(data, spec);
          return b.evaluate(pts);
        } else {
          return b.evaluate(column(data, spec.covariate_names[0]));
        }
      },
      basis);
}

const Matrix& marginal_penalty(const MarginalBasis& basis) {
  return std::visit([](const auto& b) -> const Matrix& { return b.penalty(); }, basis);
}

int marginal_null_dim(const MarginalBasis& basis) {
  return std::visit([](const auto& b) { return b.null_space_dim(); }, basis);
}

std::vector<SmoothSpec> marginal_specs(const SmoothSpec& spec) {
  if (spec.kind == SmoothKind::tensor_product) return spec.child_specs;
  return {spec};
}

// Uncentered penalties and null-space dimension for a list of marginals.
std::pair<std::vector<Matrix>, int> raw_penalties(const std::vector<MarginalBasis>& marginals) {
  if (marginals.size() == 1) {
    return {{marginal_penalty(marginals[0])}, marginal_null_dim(marginals[0])};
  }
  std::vector<Eigen::Index> widths;
  int null_dim = 1;
  for (const auto& m : marginals) {
    widths.push_back(marginal_penalty(m).rows());
    null_dim *= marginal_null_dim(m);
  }
  std::vector<Matrix> out;
  for (std::size_t j = 0; j < marginals.size(); ++j) {
    out.push_back(embed_penalty(widths, j, marginal_penalty(marginals[j])));
  }
  return {out, null_dim};
}

void write_spec_token(std::ostream& os, const SmoothSpec& spec) { os << spec.to_string() << '\n'; }

}  // namespace

void SmoothSpec::validate() const {
  switch (kind) {
    case SmoothKind::thin_plate_2d:
      if (covariate_names.size() != 2) throw std::invalid_argument("tps smooth needs two covariates");
      if (basis_dim < 3) throw std::invalid_argument("tps smooth: basis dimension must be >= 3");
      break;
    case SmoothKind::cubic_regression_1d:
      if (covariate_names.size() != 1) throw std::invalid_argument("cr smooth needs one covariate");
      if (basis_dim < 3) throw std::invalid_argument("cr smooth: basis dimension must be >= 3");
      break;
    case SmoothKind::cyclic_cubic_1d:
      if (covariate_names.size() != 1) throw std::invalid_argument("cc smooth needs one covariate");
      if (basis_dim < 4) throw std::invalid_argument("cc smooth: basis dimension must be >= 4");
      if (!period || !(*period > 0.0)) throw std::invalid_argument("cc smooth needs a positive period");
      break;
    case SmoothKind::tensor_product:
      if (child_specs.size() < 2) throw std::invalid_argument("tensor smooth needs >= 2 children");
      for (const auto& c : child_specs) {
        if (c.kind == SmoothKind::tensor_product) {
          throw std::invalid_argument("nested tensor products are not supported");
        }
        c.validate();
      }
      break;
  }
}

std::string SmoothSpec::to_string() const {
  std::ostringstream os;
  switch (kind) {
    case SmoothKind::thin_plate_2d:
      os << "tps(" << covariate_names.at(0) << ',' << covariate_names.at(1) << ';' << basis_dim << ')';
      break;
    case SmoothKind::cubic_regression_1d:
      os << "cr(" << covariate_names.at(0) << ';' << basis_dim << ')';
      break;
    case SmoothKind::cyclic_cubic_1d:
      os << "cc(" << covariate_names.at(0) << ';' << basis_dim << ';' << textio::fmt_double(*period)
         << ')';
      break;
    case SmoothKind::tensor_product:
      os << "te(";
      for (std::size_t i = 0; i < child_specs.size(); ++i) {
        if (i) os << ',';
        os << child_specs[i].to_string();
      }
      os << ')';
      break;
  }
  return os.str();
}

SmoothSpec SmoothSpec::parse(std::string_view text) {
  text = trim(text);
  const auto open = text.find('(');
  if (open == std::string_view::npos || text.back() != ')') {
    throw std::invalid_argument("smooth spec: expected kind(...), got '" + std::string(text) + "'");
  }
  const auto kind = trim(text.substr(0, open));
  const auto body = text.substr(open + 1, text.size() - open - 2);
  SmoothSpec spec;
  if (kind == "te") {
    spec.kind = SmoothKind::tensor_product;
    for (auto part : split_top(body, ',')) spec.child_specs.push_back(parse(part));
    spec.basis_dim = 1;
    for (const auto& c : spec.child_specs) spec.basis_dim *= c.basis_dim;
  } else {
    const auto fields = split_top(body, ';');
    if (fields.size() < 2) throw std::invalid_argument("smooth spec: missing basis dimension");
    for (auto name : split_top(fields[0], ',')) spec.covariate_names.emplace_back(name);
    spec.basis_dim = parse_int(fields[1]);
    if (kind == "tps") {
      spec.kind = SmoothKind::thin_plate_2d;
    } else if (kind == "cr" || kind == "ncs") {
      spec.kind = SmoothKind::cubic_regression_1d;
    } else if (kind == "cc" || kind == "ccs") {
      spec.kind = SmoothKind::cyclic_cubic_1d;
      if (fields.size() < 3) throw std::invalid_argument("cc smooth needs a period");
      spec.period = parse_real(fields[2]);
    } else {
      throw std::invalid_argument("smooth spec: unknown kind '" + std::string(kind) + "'");
    }
  }
  spec.validate();
  return spec;
}

SmoothSpec SmoothSpec::thin_plate(std::string x, std::string y, int dim) {
  SmoothSpec s;
  s.kind = SmoothKind::thin_plate_2d;
  s.basis_dim = dim;
  s.covariate_names = {std::move(x), std::move(y)};
  return s;
}

SmoothSpec SmoothSpec::cubic_regression(std::string x, int dim) {
  SmoothSpec s;
  s.kind = SmoothKind::cubic_regression_1d;
  s.basis_dim = dim;
  s.covariate_names = {std::move(x)};
  return s;
}

SmoothSpec SmoothSpec::cyclic_cubic(std::string x, int dim, double period) {
  SmoothSpec s;
  s.kind = SmoothKind::cyclic_cubic_1d;
  s.basis_dim = dim;
  s.covariate_names = {std::move(x)};
  s.period = period;
  return s;
}

SmoothSpec SmoothSpec::tensor(std::vector<SmoothSpec> children) {
  SmoothSpec s;
  s.kind = SmoothKind::tensor_product;
  s.basis_dim = 1;
  for (const auto& c : children) s.basis_dim *= c.basis_dim;
  s.child_specs = std::move(children);
  return s;
}

std::vector<SmoothSpec> parse_formula(std::string_view text) {
  text = trim(text);
  std::vector<SmoothSpec> out;
  if (text.empty() || text == "1") return out;
  for (auto part : split_top(text, '+')) {
    if (part == "1") continue;
    out.push_back(SmoothSpec::parse(part));
  }
  return out;
}

std::string formula_to_string(const std::vector<SmoothSpec>& terms) {
  if (terms.empty()) return "1";
  std::string out;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (i) out += " + ";
    out += terms[i].to_string();
  }
  return out;
}

BasisRealization build_tensor_product(const std::vector<BasisRealization>& children) {
  if (children.size() < 2) throw std::invalid_argument("tensor product needs >= 2 children");
  const auto n = children.front().design.rows();
  for (const auto& c : children) {
    if (c.design.rows() != n) throw std::invalid_argument("tensor product: mismatched observation counts");
  }
  BasisRealization out;
  out.design = children.front().design;
  for (std::size_t j = 1; j < children.size(); ++j) {
    out.design = row_kronecker(out.design, children[j].design);
  }
  std::vector<Eigen::Index> widths;
  for (const auto& c : children) widths.push_back(c.width());
  out.null_space_dim = 1;
  for (std::size_t j = 0; j < children.size(); ++j) {
    const auto& c = children[j];
    out.null_space_dim *= c.penalty_blocks.empty() ? static_cast<int>(c.width()) : c.null_space_dim;
    for (const auto& p : c.penalty_blocks) out.penalty_blocks.push_back(embed_penalty(widths, j, p));
  }
  return out;
}

BasisRealization apply_centering(const BasisRealization& block) {
  const Eigen::RowVectorXd sums = block.design.colwise().sum();
  const double scale = std::max(1.0, block.design.cwiseAbs().maxCoeff()) *
                       std::sqrt(static_cast<double>(std::max<Eigen::Index>(1, block.design.rows())));
  if (block.width() <= 1 || sums.norm() <= 1e-10 * scale) return block;

  const Eigen::Index d = block.width();
  Eigen::HouseholderQR<Matrix> qr(sums.transpose());
  const Matrix q = qr.householderQ() * Matrix::Identity(d, d);
  const Matrix z = q.rightCols(d - 1);

  BasisRealization out;
  out.design = block.design * z;
  for (const auto& p : block.penalty_blocks) {
    Matrix pz = z.transpose() * p * z;
    out.penalty_blocks.push_back(0.5 * (pz + pz.transpose()));
  }
  // Every supported basis reproduces constants inside its penalty null space.
  out.null_space_dim = std::max(0, block.null_space_dim - 1);
  out.centering_constraint = sums;
  out.constraint_basis = block.constraint_basis.size() ? Matrix(block.constraint_basis * z) : z;
  return out;
}

SmoothTerm SmoothTerm::build(const SmoothSpec& spec, const CovariateTable& data) {
  spec.validate();
  SmoothTerm term;
  term.spec_ = spec;
  for (const auto& ms : marginal_specs(spec)) term.marginals_.push_back(make_marginal(ms, data));

  BasisRealization raw;
  raw.design = term.raw_design(data);
  std::tie(raw.penalty_blocks, raw.null_space_dim) = raw_penalties(term.marginals_);
  const auto centered = apply_centering(raw);
  term.constraint_basis_ = centered.constraint_basis.size()
                               ? centered.constraint_basis
                               : Matrix(Matrix::Identity(raw.width(), raw.width()));
  term.penalties_ = centered.penalty_blocks;
  term.null_space_dim_ = centered.null_space_dim;
  return term;
}

Matrix SmoothTerm::raw_design(const CovariateTable& data) const {
  const auto specs = marginal_specs(spec_);
  Matrix out = evaluate_marginal(marginals_[0], specs[0], data);
  for (std::size_t j = 1; j < marginals_.size(); ++j) {
    out = row_kronecker(out, evaluate_marginal(marginals_[j], specs[j], data));
  }
  return out;
}

Matrix SmoothTerm::design(const CovariateTable& data) const {
  return raw_design(data) * constraint_basis_;
}

void SmoothTerm::write(std::ostream& os) const {
  os << "term ";
  write_spec_token(os, spec_);
  const auto specs = marginal_specs(spec_);
  for (std::size_t j = 0; j < marginals_.size(); ++j) {
    std::visit([&](const auto& b) { b.write(os); }, marginals_[j]);
  }
  textio::write_matrix(os, "constraint_basis", constraint_basis_);
  os << "null_space_dim " << null_space_dim_ << '\n';
}

SmoothTerm SmoothTerm::read(std::istream& is) {
  textio::expect(is, "term");
  std::string spec_text;
  is >> std::ws;
  std::getline(is, spec_text);
  SmoothTerm term;
  term.spec_ = SmoothSpec::parse(spec_text);
  for (const auto& ms : marginal_specs(term.spec_)) {
    switch (ms.kind) {
      case SmoothKind::cubic_regression_1d:
        term.marginals_.emplace_back(CubicRegressionBasis::read(is));
        break;
      case SmoothKind::cyclic_cubic_1d:
        term.marginals_.emplace_back(CyclicCubicBasis::read(is));
        break;
      case SmoothKind::thin_plate_2d:
        term.marginals_.emplace_back(ThinPlateBasis::read(is));
        break;
      case SmoothKind::tensor_product:
        throw std::runtime_error("fit file: nested tensor term");
    }
  }
  term.constraint_basis_ = textio::read_matrix(is, "constraint_basis");
  textio::expect(is, "null_space_dim");
  term.null_space_dim_ = textio::read_value<int>(is, "null space dimension");
  auto [pens, nd] = raw_penalties(term.marginals_);
  (void)nd;
  for (auto& p : pens) {
    if (p.rows() != term.constraint_basis_.rows()) {
      throw std::runtime_error("fit file: constraint basis does not match the marginal bases");
    }
    Matrix pz = term.constraint_basis_.transpose() * p * term.constraint_basis_;
    term.penalties_.push_back(0.5 * (pz + pz.transpose()));
  }
  return term;
}

}  // namespace droughtrisk::splines
