#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include <doctest.h>

#include "droughtrisk/splines.hpp"

namespace sp = droughtrisk::splines;
using doctest::Approx;

namespace {

std::vector<sp::Point2> random_points(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> lon(-10.0, 5.0);
  std::uniform_real_distribution<double> lat(36.0, 44.0);
  std::vector<sp::Point2> out(n);
  for (auto& p : out) p = {lon(rng), lat(rng)};
  return out;
}

// Penalized least squares fit, returning fitted values.
sp::Vector penalized_fit(const sp::BasisRealization& b, const sp::Vector& y, double lambda) {
  sp::Matrix a = b.design.transpose() * b.design;
  for (const auto& s : b.penalty_blocks) a += lambda * s;
  const sp::Vector beta = a.ldlt().solve(b.design.transpose() * y);
  return b.design * beta;
}

sp::Matrix kron(const sp::Matrix& a, const sp::Matrix& b) {
  sp::Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  }
  return out;
}

void check_psd_forms(const sp::Matrix& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  CHECK(sp::is_symmetric_psd(s));
  CHECK((s - s.transpose()).norm() <= 1e-12 * std::max(1.0, s.norm()));
  for (int i = 0; i < 1000; ++i) {
    sp::Vector beta(s.rows());
    for (auto& v : beta) v = z(rng);
    CHECK(beta.dot(s * beta) >= -1e-12 * s.norm() * beta.squaredNorm());
  }
}

}  // namespace

TEST_CASE("cyclic cubic basis is periodic") {
  std::vector<double> x;
  for (double v = -3.0; v < 15.0; v += 0.37) x.push_back(v);
  std::vector<double> shifted = x;
  for (auto& v : shifted) v += 12.0;
  const auto a = sp::build_cyclic_cubic(x, 6, 12.0);
  const auto b = sp::build_cyclic_cubic(shifted, 6, 12.0);
  CHECK((a.design - b.design).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("cyclic cubic basis joins smoothly at the period ends") {
  const sp::CyclicCubicBasis basis(6, 12.0);
  const double h = 1e-4;
  const std::vector<double> lo{0.0, h, 2.0 * h};
  const std::vector<double> hi{12.0, 12.0 - h, 12.0 - 2.0 * h};
  const sp::Matrix l = basis.evaluate(lo);
  const sp::Matrix r = basis.evaluate(hi);
  // Values, one-sided first and second differences agree on both sides.
  CHECK((l.row(0) - r.row(0)).lpNorm<Eigen::Infinity>() <= 1e-12);
  const sp::Matrix d1_lo = (l.row(1) - l.row(0)) / h;
  const sp::Matrix d1_hi = (r.row(0) - r.row(1)) / h;
  CHECK((d1_lo - d1_hi).lpNorm<Eigen::Infinity>() <= 1e-3);
  const sp::Matrix d2_lo = (l.row(2) - 2.0 * l.row(1) + l.row(0)) / (h * h);
  const sp::Matrix d2_hi = (r.row(2) - 2.0 * r.row(1) + r.row(0)) / (h * h);
  CHECK((d2_lo - d2_hi).lpNorm<Eigen::Infinity>() <= 1e-2);
}

TEST_CASE("cyclic cubic on twelve months") {
  std::vector<double> months;
  for (int m = 1; m <= 12; ++m) months.push_back(m);
  const auto b = sp::build_cyclic_cubic(months, 6, 12.0);
  CHECK(b.design.rows() == 12);
  CHECK(b.design.cols() == 6);
  const sp::Vector sums = b.design.rowwise().sum();
  CHECK((sums.array() - sums[0]).abs().maxCoeff() <= 1e-12);
  REQUIRE(b.penalty_blocks.size() == 1);
  CHECK((b.penalty_blocks[0] * sp::Vector::Ones(6)).norm() <= 1e-10 * b.penalty_blocks[0].norm());
  check_psd_forms(b.penalty_blocks[0], 21);
  CHECK(b.null_space_dim == 1);
}

TEST_CASE("cyclic cubic errors") {
  const std::vector<double> x{1.0, 2.0, 3.0};
  CHECK_THROWS(sp::build_cyclic_cubic(x, 3, 12.0));
  CHECK_THROWS(sp::build_cyclic_cubic(x, 6, 0.0));
  const std::vector<double> bad{1.0, std::numeric_limits<double>::quiet_NaN()};
  CHECK_THROWS(sp::build_cyclic_cubic(bad, 6, 12.0));
}

TEST_CASE("cubic regression basis") {
  std::mt19937_64 rng(22);
  std::normal_distribution<double> temp(18.0, 5.0);
  std::vector<double> x(258);
  for (auto& v : x) v = temp(rng);
  const auto b = sp::build_cubic_regression(x, 15);
  CHECK(b.design.rows() == 258);
  CHECK(b.design.cols() == 15);
  CHECK(b.null_space_dim == 2);
  REQUIRE(b.penalty_blocks.size() == 1);
  check_psd_forms(b.penalty_blocks[0], 23);

  // Linear data is reproduced at any smoothing level.
  sp::Vector y(258);
  for (int i = 0; i < 258; ++i) y[i] = 3.0 - 0.7 * x[i];
  for (double lambda : {0.0, 1.0, 1e4, 1e8}) {
    CHECK((penalized_fit(b, y, lambda) - y).lpNorm<Eigen::Infinity>() <= 1e-6);
  }

  // Exactly two zero eigenvalues.
  Eigen::SelfAdjointEigenSolver<sp::Matrix> es(b.penalty_blocks[0]);
  const double top = es.eigenvalues().maxCoeff();
  int zeros = 0;
  for (double e : es.eigenvalues()) zeros += std::abs(e) <= 1e-9 * top;
  CHECK(zeros == 2);
}

TEST_CASE("cubic regression is linear beyond the boundary knots") {
  std::vector<double> x;
  for (int i = 0; i < 50; ++i) x.push_back(i * 0.2);
  const auto basis = sp::CubicRegressionBasis::from_data(x, 8);
  const double hi = basis.knots().back();
  const double lo = basis.knots().front();
  const std::vector<double> right{hi + 1.0, hi + 2.0, hi + 3.0};
  const std::vector<double> left{lo - 3.0, lo - 2.0, lo - 1.0};
  for (const auto& pts : {right, left}) {
    const sp::Matrix e = basis.evaluate(pts);
    CHECK((e.row(2) - 2.0 * e.row(1) + e.row(0)).lpNorm<Eigen::Infinity>() <= 1e-12);
  }
  // Interpolates knot values: the knot-value parameterization.
  const sp::Matrix at_knots = basis.evaluate(basis.knots());
  CHECK((at_knots - sp::Matrix::Identity(8, 8)).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("cubic regression errors") {
  const std::vector<double> few{1.0, 2.0, 2.0, 3.0, 1.0};
  CHECK_THROWS(sp::build_cubic_regression(few, 4));
  CHECK_THROWS(sp::build_cubic_regression(few, 2));
}

TEST_CASE("thin plate basis") {
  const auto pts = random_points(258, 24);
  const auto b = sp::build_thin_plate(pts, 40);
  CHECK(b.design.rows() == 258);
  CHECK(b.design.cols() == 40);
  CHECK(b.null_space_dim == 3);
  REQUIRE(b.penalty_blocks.size() == 1);
  const auto& s = b.penalty_blocks[0];
  check_psd_forms(s, 25);

  // Planar data is reproduced at any smoothing level.
  sp::Vector y(258);
  for (int i = 0; i < 258; ++i) y[i] = 1.5 + 0.3 * pts[i][0] - 0.8 * pts[i][1];
  for (double lambda : {0.0, 1.0, 1e6}) {
    CHECK((penalized_fit(b, y, lambda) - y).lpNorm<Eigen::Infinity>() <= 1e-6);
  }
  // The coefficients of a plane carry no penalty.
  const sp::Vector beta = b.design.colPivHouseholderQr().solve(y);
  CHECK(std::abs(beta.dot(s * beta)) <= 1e-9 * s.norm() * beta.squaredNorm());

  Eigen::SelfAdjointEigenSolver<sp::Matrix> es(s);
  const double top = es.eigenvalues().maxCoeff();
  int zeros = 0;
  for (double e : es.eigenvalues()) zeros += std::abs(e) <= 1e-9 * top;
  CHECK(zeros == 3);
}

TEST_CASE("thin plate repeated observations of the same stations") {
  const auto stations = random_points(30, 26);
  std::vector<sp::Point2> obs;
  for (int rep = 0; rep < 5; ++rep) obs.insert(obs.end(), stations.begin(), stations.end());
  const auto b = sp::build_thin_plate(obs, 20);
  CHECK(b.design.rows() == 150);
  CHECK((b.design.topRows(30) - b.design.middleRows(30, 30)).norm() == 0.0);
  CHECK_THROWS(sp::build_thin_plate(obs, 31));
}

TEST_CASE("thin plate errors") {
  const std::vector<sp::Point2> same(10, sp::Point2{1.0, 2.0});
  CHECK_THROWS(sp::build_thin_plate(same, 3));
  const auto pts = random_points(5, 27);
  CHECK_THROWS(sp::build_thin_plate(pts, 6));
  CHECK_THROWS(sp::build_thin_plate(random_points(10, 28), 2));
}

TEST_CASE("tensor product structure") {
  const auto pts = random_points(60, 29);
  std::vector<sp::Point2> p;
  std::vector<double> month;
  for (int m = 1; m <= 12; ++m) {
    for (const auto& q : pts) {
      p.push_back(q);
      month.push_back(m);
    }
  }
  const auto a = sp::build_thin_plate(p, 40);
  const auto c = sp::build_cyclic_cubic(month, 6, 12.0);
  const auto t = sp::build_tensor_product({a, c});
  CHECK(t.design.cols() == 240);
  CHECK(t.design.rows() == 720);
  REQUIRE(t.penalty_blocks.size() == 2);
  for (Eigen::Index r = 0; r < 720; r += 97) {
    for (Eigen::Index i = 0; i < 40; i += 7) {
      for (Eigen::Index j = 0; j < 6; ++j) {
        CHECK(t.design(r, i * 6 + j) == Approx(a.design(r, i) * c.design(r, j)).epsilon(1e-14));
      }
    }
  }
  // Each direction's penalty is the child penalty with identity factors.
  const sp::Matrix s0 = kron(a.penalty_blocks[0], sp::Matrix::Identity(6, 6));
  const sp::Matrix s1 = kron(sp::Matrix::Identity(40, 40), c.penalty_blocks[0]);
  CHECK((t.penalty_blocks[0] - s0).norm() <= 1e-12 * s0.norm());
  CHECK((t.penalty_blocks[1] - s1).norm() <= 1e-12 * s1.norm());
  for (const auto& s : t.penalty_blocks) CHECK(sp::is_symmetric_psd(s));

  const auto cen = sp::apply_centering(t);
  CHECK(cen.design.cols() == 239);
  CHECK(cen.design.colwise().sum().cwiseAbs().maxCoeff() <= 1e-10 * std::max(1.0, t.design.norm()));
  for (const auto& s : cen.penalty_blocks) {
    CHECK(s.rows() == 239);
    CHECK(sp::is_symmetric_psd(s));
  }
  CHECK(sp::apply_centering(cen).design.cols() == 239);
}

TEST_CASE("tensor with a constant child reproduces the other child") {
  std::vector<double> x;
  for (int i = 0; i < 40; ++i) x.push_back(0.1 * i);
  const auto a = sp::build_cubic_regression(x, 6);
  sp::BasisRealization one;
  one.design = sp::Matrix::Ones(40, 1);
  one.penalty_blocks = {sp::Matrix::Zero(1, 1)};
  const auto t = sp::build_tensor_product({a, one});
  CHECK((t.design - a.design).norm() == 0.0);
  CHECK((t.penalty_blocks[0] - a.penalty_blocks[0]).norm() == 0.0);

  sp::BasisRealization short_child = one;
  short_child.design = sp::Matrix::Ones(39, 1);
  CHECK_THROWS(sp::build_tensor_product({a, short_child}));
  CHECK_THROWS(sp::build_tensor_product({a}));
}

TEST_CASE("centering") {
  std::vector<double> x;
  for (int i = 0; i < 100; ++i) x.push_back(std::sin(0.3 * i) * 4.0);
  const auto b = sp::build_cubic_regression(x, 10);
  const auto c = sp::apply_centering(b);
  CHECK(c.design.cols() == 9);
  CHECK(c.design.colwise().sum().cwiseAbs().maxCoeff() <= 1e-10);
  CHECK(c.centering_constraint.size() == 10);
  // The constraint basis maps centered coefficients back.
  CHECK((b.design * c.constraint_basis - c.design).norm() <= 1e-10);
  const auto twice = sp::apply_centering(c);
  CHECK(twice.design.cols() == c.design.cols());
  CHECK((twice.design - c.design).norm() == 0.0);
}

TEST_CASE("formula parsing") {
  const auto terms = sp::parse_formula("te(tps(lon,lat;40),cc(month;6;12)) + cr(tmax;15)");
  REQUIRE(terms.size() == 2);
  CHECK(terms[0].kind == sp::SmoothKind::tensor_product);
  CHECK(terms[0].child_specs.size() == 2);
  CHECK(terms[0].child_specs[0].basis_dim == 40);
  CHECK(terms[0].child_specs[1].period.value() == 12.0);
  CHECK(terms[1].kind == sp::SmoothKind::cubic_regression_1d);
  CHECK(sp::formula_to_string(terms) == "te(tps(lon,lat;40),cc(month;6;12)) + cr(tmax;15)");
  CHECK(sp::parse_formula("1").empty());
  CHECK(sp::parse_formula("").empty());
  CHECK_THROWS(sp::parse_formula("te(tps(lon,lat;40))"));
  CHECK_THROWS(sp::parse_formula("cr(tmax;2)"));
  CHECK_THROWS(sp::parse_formula("cc(month;6)"));
  CHECK_THROWS(sp::parse_formula("bogus(x;4)"));
}

TEST_CASE("smooth term builds, predicts and round-trips") {
  const auto pts = random_points(25, 30);
  sp::CovariateTable data;
  for (int m = 1; m <= 12; ++m) {
    for (const auto& q : pts) {
      data["lon"].push_back(q[0]);
      data["lat"].push_back(q[1]);
      data["month"].push_back(m);
      data["tmax"].push_back(15.0 + 0.5 * m + q[1] * 0.1);
    }
  }
  const auto spec = sp::SmoothSpec::parse("te(tps(lon,lat;20),cc(month;6;12))");
  const auto term = sp::SmoothTerm::build(spec, data);
  CHECK(term.width() == 119);
  CHECK(term.max_edf() == 119);
  CHECK(term.penalties().size() == 2);
  const sp::Matrix x = term.design(data);
  CHECK(x.cols() == 119);
  CHECK(x.colwise().sum().cwiseAbs().maxCoeff() <= 1e-9);

  std::stringstream ss;
  term.write(ss);
  const auto back = sp::SmoothTerm::read(ss);
  CHECK(back.spec().to_string() == term.spec().to_string());
  CHECK((back.design(data) - x).norm() == 0.0);
  for (std::size_t k = 0; k < term.penalties().size(); ++k) {
    CHECK((back.penalties()[k] - term.penalties()[k]).norm() == 0.0);
  }

  const auto cr = sp::SmoothTerm::build(sp::SmoothSpec::parse("cr(tmax;8)"), data);
  CHECK(cr.width() == 7);
  CHECK(cr.null_space_dim() == 1);
  CHECK_THROWS(sp::SmoothTerm::build(sp::SmoothSpec::parse("cr(elev;8)"), data));
}
