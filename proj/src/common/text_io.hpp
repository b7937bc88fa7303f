#pragma once

// Token-oriented text serialization helpers shared by the fit file readers
// and writers. Numbers are written with 17 significant digits so that a
// write/read cycle reproduces every double exactly.

#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

namespace droughtrisk::textio {

inline std::string fmt_double(double v) { return fmt::format("{:.17g}", v); }

inline void expect(std::istream& is, const std::string& token) {
  std::string got;
  if (!(is >> got) || got != token) {
    throw std::runtime_error("fit file: expected '" + token + "', found '" + got + "'");
  }
}

template <typename T>
T read_value(std::istream& is, const char* what) {
  T v{};
  if (!(is >> v)) throw std::runtime_error(std::string("fit file: cannot read ") + what);
  return v;
}

inline double read_double(std::istream& is) {
  std::string tok;
  if (!(is >> tok)) throw std::runtime_error("fit file: missing number");
  std::size_t pos = 0;
  const double v = std::stod(tok, &pos);
  if (pos != tok.size()) throw std::runtime_error("fit file: bad number '" + tok + "'");
  return v;
}

inline void write_vector(std::ostream& os, const std::string& tag, const std::vector<double>& v) {
  os << tag << ' ' << v.size();
  for (double x : v) os << ' ' << fmt_double(x);
  os << '\n';
}

inline std::vector<double> read_vector(std::istream& is, const std::string& tag) {
  expect(is, tag);
  const auto n = read_value<std::size_t>(is, "vector length");
  std::vector<double> v(n);
  for (auto& x : v) x = read_double(is);
  return v;
}

inline void write_matrix(std::ostream& os, const std::string& tag, const Eigen::MatrixXd& m) {
  os << tag << ' ' << m.rows() << ' ' << m.cols();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) os << ' ' << fmt_double(m(i, j));
  }
  os << '\n';
}

inline Eigen::MatrixXd read_matrix(std::istream& is, const std::string& tag) {
  expect(is, tag);
  const auto r = read_value<Eigen::Index>(is, "matrix rows");
  const auto c = read_value<Eigen::Index>(is, "matrix cols");
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = read_double(is);
  }
  return m;
}

}  // namespace droughtrisk::textio
