#include <algorithm>
#include <cmath>
#include <random>

#include <boost/math/quadrature/tanh_sinh.hpp>
#include <doctest.h>

#include "droughtrisk/egpd.hpp"
#include "droughtrisk/errors.hpp"
#include "droughtrisk/tail_risk.hpp"

namespace eg = droughtrisk::egpd;
using doctest::Approx;

namespace {

eg::EgpdParams random_params(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  eg::EgpdParams p;
  p.kappa = std::exp(-1.5 + 3.0 * u(rng));
  p.sigma = std::exp(-1.0 + 2.0 * u(rng));
  p.xi = -0.45 + 0.9 * u(rng);
  return p;
}

double upper_endpoint(const eg::EgpdParams& p) { return p.xi < 0.0 ? p.sigma / -p.xi : INFINITY; }

std::vector<double> gpd_sample(std::size_t n, double xi, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) {
    const double w = u(rng);
    x = xi == 0.0 ? -sigma * std::log1p(-w) : sigma / xi * (std::pow(1.0 - w, -xi) - 1.0);
  }
  return v;
}

}  // namespace

TEST_CASE("tail split") {
  const std::vector<double> d{-1.2, 0.5, 0.0, 2.0, -0.3};
  const auto s = eg::split_tails(d);
  CHECK(s.wet == std::vector<double>{0.5, 2.0});
  CHECK(s.dry == std::vector<double>{1.2, 0.3});
  CHECK(s.zeros == 1);
  CHECK(s.wet.size() + s.dry.size() + s.zeros == d.size());
  const std::vector<double> wet_only{0.4, 1.0, 2.0};
  CHECK_THROWS_AS(eg::split_tails(wet_only), droughtrisk::DataError);
  const std::vector<double> dry_only{-0.4, -1.0};
  CHECK_THROWS_AS(eg::split_tails(dry_only), droughtrisk::DataError);
}

TEST_CASE("kappa one is the generalized Pareto") {
  std::mt19937_64 rng(81);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    auto p = random_params(rng);
    p.kappa = 1.0;
    const double z = std::min(upper_endpoint(p), 20.0) * u(rng);
    CHECK(std::abs(eg::egpd_cdf(z, p) - droughtrisk::tails::gpd_cdf(z, p.xi, p.sigma, 0.0)) <= 1e-12);
  }
}

TEST_CASE("closed forms") {
  const eg::EgpdParams two{2.0, 1.0, 0.0};
  CHECK(eg::egpd_cdf(std::log(2.0), two) == Approx(0.25).epsilon(1e-14));
  CHECK(std::abs(eg::egpd_quantile(0.25, two) - std::log(2.0)) <= 1e-12);
  const eg::EgpdParams expo{1.0, 1.0, 0.0};
  CHECK(eg::egpd_quantile(0.5, expo) == Approx(0.6931472).epsilon(1e-7));
  CHECK(eg::egpd_cdf(0.0, two) == 0.0);
  CHECK_THROWS_AS(eg::egpd_cdf(-1.0, two), std::domain_error);
  const eg::EgpdParams bounded{1.5, 1.0, -0.5};
  CHECK(eg::egpd_cdf(2.0, bounded) == Approx(1.0));
  CHECK_THROWS_AS(eg::egpd_cdf(3.0, bounded), std::domain_error);
  CHECK_THROWS(eg::EgpdParams{0.0, 1.0, 0.0}.validate());
  CHECK_THROWS(eg::EgpdParams{1.0, -1.0, 0.0}.validate());
  CHECK_THROWS(eg::egpd_quantile(1.5, two));
}

TEST_CASE("quantile round trip and monotonicity") {
  std::mt19937_64 rng(82);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const auto p = random_params(rng);
    const double q = 1e-6 + (1.0 - 2e-6) * u(rng);
    CHECK(std::abs(eg::egpd_cdf(eg::egpd_quantile(q, p), p) - q) <= 1e-9);
  }
  for (int i = 0; i < 50; ++i) {
    const auto p = random_params(rng);
    double prev = 0.0;
    for (int k = 1; k < 1000; ++k) {
      const double z = eg::egpd_quantile(k / 1000.0, p);
      CHECK(z > prev);
      prev = z;
    }
  }
}

TEST_CASE("density integrates to one and matches the cdf slope") {
  std::mt19937_64 rng(83);
  boost::math::quadrature::tanh_sinh<double> ts;
  for (int i = 0; i < 100; ++i) {
    const auto p = random_params(rng);
    const double hi = upper_endpoint(p);
    // Split at the median so a long or unbounded support does not hide the bulk.
    const double mid = eg::egpd_quantile(0.5, p);
    auto f = [&](double z) { return eg::egpd_pdf(z, p); };
    const double mass = ts.integrate(f, 0.0, mid, 1e-12) + ts.integrate(f, mid, hi, 1e-12);
    CHECK(std::abs(mass - 1.0) <= 1e-5);

    const double z = eg::egpd_quantile(0.3, p);
    const double h = 1e-6 * std::max(z, 1e-3);
    const double fd = (eg::egpd_cdf(z + h, p) - eg::egpd_cdf(z - h, p)) / (2 * h);
    CHECK(eg::egpd_pdf(z, p) == Approx(fd).epsilon(1e-6));
    CHECK(eg::egpd_pdf(z, p) >= 0.0);
    CHECK(std::exp(eg::egpd_log_pdf(z, p)) == Approx(eg::egpd_pdf(z, p)).epsilon(1e-13));
  }
}

TEST_CASE("fit recovers an exponential") {
  const auto z = gpd_sample(5000, 0.0, 2.0, 84);
  const auto f = eg::egpd_fit(z);
  CHECK(f.converged);
  CHECK(f.n == 5000);
  CHECK(std::abs(f.params.sigma - 2.0) <= 0.1);
  CHECK(std::abs(f.params.xi) <= 0.1);
  CHECK(std::abs(f.params.kappa - 1.0) <= 0.15);
}

TEST_CASE("fit recovers a generalized Pareto shape") {
  const auto f = eg::egpd_fit(gpd_sample(5000, 0.2, 1.0, 85));
  CHECK(std::abs(f.params.xi - 0.2) <= 0.1);
}

TEST_CASE("light tails give a small shape and respect the endpoint") {
  std::mt19937_64 rng(86);
  std::normal_distribution<double> g;
  std::vector<double> z(3000);
  for (auto& x : z) x = std::abs(g(rng));
  const auto f = eg::egpd_fit(z);
  CHECK(f.params.xi < 0.1);
  if (f.params.xi < 0.0) CHECK(*std::max_element(z.begin(), z.end()) < f.params.sigma / -f.params.xi);
  CHECK(std::isfinite(f.loglik));
}

TEST_CASE("fit refuses tiny or invalid samples") {
  CHECK_THROWS_AS(eg::egpd_fit(gpd_sample(20, 0.1, 1.0, 87)), droughtrisk::FitError);
  auto z = gpd_sample(100, 0.1, 1.0, 88);
  z[3] = -1.0;
  CHECK_THROWS(eg::egpd_fit(z));
}

TEST_CASE("return levels") {
  const eg::EgpdParams wet{1.3, 0.6, 0.05};
  const eg::EgpdParams dry{0.9, 0.7, -0.1};
  const std::vector<double> T{5, 10, 20, 50};
  // 240 of 480 monthly values are wet over 40 years: 6 wet events a year.
  const auto r = eg::return_levels(wet, dry, 240, 220, 480, T, 40.0);
  CHECK(r.obs_per_year == Approx(12.0));
  CHECK(r.wet.annual_rate == Approx(6.0));
  CHECK(r.dry.annual_rate == Approx(5.5));
  REQUIRE(r.wet.rows.size() == 4);
  CHECK(r.wet.rows[1].exceed_prob == Approx(1.0 / 60.0));
  CHECK(r.wet.rows[1].level == Approx(eg::egpd_quantile(1.0 - 1.0 / 60.0, wet)).epsilon(1e-14));
  CHECK(r.dry.rows[1].level == Approx(-eg::egpd_quantile(1.0 - 1.0 / 55.0, dry)).epsilon(1e-14));
  for (std::size_t i = 0; i < T.size(); ++i) {
    CHECK(r.wet.rows[i].defined);
    CHECK(r.wet.rows[i].level > 0.0);
    CHECK(r.dry.rows[i].level < 0.0);
    if (i > 0) {
      CHECK(r.wet.rows[i].level > r.wet.rows[i - 1].level);
      CHECK(r.dry.rows[i].level < r.dry.rows[i - 1].level);
      CHECK(r.wet.rows[i].exceed_prob < r.wet.rows[i - 1].exceed_prob);
    }
  }
  CHECK(r.wet.tail == eg::Tail::wet);
  CHECK(r.dry.tail == eg::Tail::dry);
  CHECK(eg::tail_name(eg::Tail::dry) == "dry");

  // Too rare a tail to support a 1-in-T event is marked undefined.
  const std::vector<double> short_T{0.1, 5.0};
  const auto thin = eg::return_levels(wet, dry, 1, 1, 480, short_T, 40.0, 0.5);
  CHECK_FALSE(thin.wet.rows[0].defined);
}
