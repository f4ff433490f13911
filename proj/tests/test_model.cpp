#include "doctest.h"

#include <cmath>
#include <numbers>

#include "glabc/model.hpp"
#include "glabc/zoo.hpp"

using namespace glabc;

namespace {

Vector v1(double x) { return Vector::Constant(1, x); }
Vector v2(double a, double b) { return (Vector(2) << a, b).finished(); }

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("Gaussian kernel values") {
    const GaussianKernel k(0.1);
    const double peak = 1.0 / (std::sqrt(2.0 * std::numbers::pi) * 0.1);
    CHECK(std::exp(k.log_value(v1(0.3), v1(0.3))) == doctest::Approx(peak));
    CHECK(std::exp(k.log_value(v2(1, 2), v2(1, 2))) == doctest::Approx(peak * peak));
    CHECK(std::exp(k.log_value(v1(0.1), v1(0.0))) == doctest::Approx(peak * std::exp(-0.5)));
    CHECK(k.log_value(v1(std::nan("")), v1(0.0)) == kNegInf);
    CHECK(k.log_value(v1(INFINITY), v1(0.0)) == kNegInf);
    CHECK(k.gaussian_bandwidth().value() == 0.1);
    CHECK_THROWS_AS(GaussianKernel(0.0), std::invalid_argument);
  }

  TEST_CASE("mean absolute discrepancy kernel") {
    const MeanAbsDiscrepancyKernel k(0.5);
    const double d = (0.2 + 0.4) / 2.0;
    CHECK(k.log_value(v2(0.2, -0.4), v2(0, 0)) == doctest::Approx(log_normal_density(d, 0.0, 0.5)));
    CHECK_FALSE(k.gaussian_bandwidth().has_value());
  }

  TEST_CASE("log_sum_exp") {
    CHECK(log_sum_exp({kNegInf, kNegInf}) == kNegInf);
    CHECK(log_sum_exp({std::log(2.0), std::log(3.0)}) == doctest::Approx(std::log(5.0)));
    CHECK(log_sum_exp({1000.0, 1000.0}) == doctest::Approx(1000.0 + std::log(2.0)));
  }

  TEST_CASE("distributions: support, density and draws") {
    SeedStream s(1, 2);
    const DiagonalGaussian g(v2(1, -1), v2(2, 0.5));
    CHECK(g.log_density(v2(1, -1)) ==
          doctest::Approx(log_normal_density(1, 1, 2) + log_normal_density(-1, -1, 0.5)));
    CHECK(g.grad_log_density(v2(3, -1))[0] == doctest::Approx(-0.5));

    const UniformBox u(v2(-1, 0), v2(1, 4));
    CHECK(u.log_density(v2(0, 1)) == doctest::Approx(-std::log(8.0)));
    CHECK(u.log_density(v2(2, 1)) == kNegInf);
    for (int i = 0; i < 100; ++i) {
      const Vector x = u.sample(s);
      CHECK(u.log_density(x) > kNegInf);
    }

    const ProductGamma pg(v2(3, 2), v2(5, 1));
    CHECK(pg.mean()[0] == doctest::Approx(0.6));
    CHECK(pg.log_density(v2(-0.1, 1)) == kNegInf);
    CHECK(pg.log_density(v2(0.5, 1)) ==
          doctest::Approx(3 * std::log(5.0) - std::lgamma(3.0) + 2 * std::log(0.5) - 2.5 + (-1.0)));

    const Categorical c({v1(0), v1(1), v1(2)}, {0.2, 0.3, 0.5});
    CHECK(c.log_density(v1(1)) == doctest::Approx(std::log(0.3)));
    CHECK(c.log_density(v1(1.5)) == kNegInf);
    int hits = 0;
    for (int i = 0; i < 20000; ++i) hits += c.sample(s)[0] == 2.0;
    CHECK(hits / 20000.0 == doctest::Approx(0.5).epsilon(0.05));
  }

  TEST_CASE("mixture density integrates to one on a fine grid") {
    const IsotropicGaussianMixture m({v2(1, 1), v2(-1, 1)}, 0.3);
    double sum = 0.0;
    const double h = 0.02;
    for (double x = -4; x <= 4; x += h)
      for (double y = -3; y <= 5; y += h) sum += std::exp(m.log_density(v2(x, y))) * h * h;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-3));
  }

  TEST_CASE("target: simulate, prior support, numerator") {
    const ModelInfo g = make_gauss1d(0.1);
    const AbcTarget& t = *g.target;

    SeedStream s1(3, 4), s2(3, 4);
    const auto x = t.simulate(v1(0.0), s1);
    REQUIRE(x);
    CHECK((*x)[0] == doctest::Approx(0.1 * s2.normal()));

    SeedStream a(8, 1), b(8, 1);
    CHECK(*t.simulate(v1(0.4), a) == *t.simulate(v1(0.4), b));

    ParamPoint p;
    p.theta = v1(0.0);
    p.log_prior = t.prior().log_density(p.theta);
    p.sim_data = v1(0.0);
    p.log_kernel = t.log_kernel(p.sim_data);
    CHECK(t.log_unnorm_posterior(p) ==
          doctest::Approx(log_normal_density(0, 0, 1) + log_normal_density(0, 0, 0.1)));
    p.log_kernel = kNegInf;
    CHECK(t.log_unnorm_posterior(p) == kNegInf);

    const ModelInfo v = vdp_target();
    ParamPoint q;
    q.theta = (Vector(5) << -1, 0.5, 0.1, 0.6, 0.01).finished();
    q.log_prior = v.target->prior().log_density(q.theta);
    q.log_kernel = 0.0;
    CHECK(v.target->log_unnorm_posterior(q) == kNegInf);
  }

  TEST_CASE("prior draws") {
    const ModelInfo g = make_gauss1d(0.1);
    SeedStream s(10, 0);
    double m = 0.0;
    for (int i = 0; i < 100000; ++i) m += g.target->prior_sample(s)[0];
    CHECK(std::abs(m / 1e5) < 0.02);

    const ModelInfo mix = make_model("mixture");
    CHECK(mix.target->prior_sample(s).size() == 2);
    SeedStream r1(4, 4), r2(4, 4);
    CHECK(mix.target->prior_sample(r1) == mix.target->prior_sample(r2));
  }

  TEST_CASE("raw weight equals kernel value when the proposal is the prior") {
    const ModelInfo g = make_gauss1d(0.1);
    const AbcTarget& t = *g.target;
    SeedStream s(12, 0);
    for (int i = 0; i < 50; ++i) {
      WeightedCandidate c;
      c.point = t.evaluate(t.prior_sample(s), s);
      c.log_proposal = t.prior().log_density(c.point.theta);
      c.log_weight = c.point.log_prior + c.point.log_kernel - c.log_proposal;
      CHECK(c.raw_weight() == doctest::Approx(c.point.kernel_value()).epsilon(1e-12));
    }
  }

  TEST_CASE("gauss1d Monte Carlo likelihood matches the closed form") {
    const ModelInfo g = make_gauss1d(0.1);
    const AbcTarget& t = *g.target;
    for (double theta : {0.0, 0.3, -0.3, 0.5, -0.5}) {
      SeedStream s(99, static_cast<std::uint64_t>(10 * (theta + 2)));
      const int n = 100000;
      double m = 0.0, m2 = 0.0;
      for (int i = 0; i < n; ++i) {
        const double w = t.kernel_weight(*t.simulate(v1(theta), s));
        m += w;
        m2 += w * w;
      }
      m /= n;
      const double se = std::sqrt((m2 / n - m * m) / n);
      const double exact = std::exp(gauss1d_closed_form(theta, 0.1).loglik);
      CHECK(std::abs(m - exact) < 3.0 * se + 1e-12);
    }
  }

  TEST_CASE("gauss1d simulator is continuous in theta for a fixed seed") {
    const ModelInfo g = make_gauss1d(0.1);
    for (double h : {1e-1, 1e-3, 1e-6}) {
      double worst = 0.0;
      for (double theta = -1.0; theta <= 1.0; theta += 0.25) {
        SeedStream a(5, 5), b(5, 5);
        worst = std::max(worst, std::abs((*g.target->simulate(v1(theta + h), a))[0] -
                                         (*g.target->simulate(v1(theta), b))[0]));
      }
      CHECK(worst <= 1.0001 * h);
    }
  }

  TEST_CASE("simulation counters track calls and failures") {
    auto prior = std::make_shared<DiagonalGaussian>(v1(0), v1(1));
    AbcTarget t(
        "fails", prior,
        [](const Vector& th, SeedStream&) -> Vector {
          if (th[0] < 0) throw SimulationFailure("negative");
          return th;
        },
        std::make_shared<GaussianKernel>(1.0), v1(0));
    SeedStream s(1, 1);
    CHECK(t.simulate(v1(1), s).has_value());
    CHECK_FALSE(t.simulate(v1(-1), s).has_value());
    const ParamPoint p = t.evaluate(v1(-1), s);
    CHECK(p.sim_failed);
    CHECK(p.log_numerator() == kNegInf);
    CHECK(t.simulation_calls() == 3);
    CHECK(t.simulation_failures() == 2);
  }
}
