#include "doctest.h"

#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>

#include "glabc/grad.hpp"
#include "glabc/zoo.hpp"

using namespace glabc;

namespace {

Vector v1(double x) { return Vector::Constant(1, x); }

// x = theta + 0.1 z, componentwise, y = (0.2, -0.1).
std::shared_ptr<AbcTarget> linear2d(std::shared_ptr<const Kernel> kernel = std::make_shared<GaussianKernel>(0.1)) {
  auto prior = std::make_shared<DiagonalGaussian>(Vector::Zero(2), Vector::Ones(2));
  auto sim = [](const Vector& th, SeedStream& s) {
    Vector x = th;
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] += 0.1 * s.normal();
    return x;
  };
  return std::make_shared<AbcTarget>("linear2d", prior, sim, std::move(kernel), (Vector(2) << 0.2, -0.1).finished());
}

// Draws of the simulator noise for one panel, replayed from the seeds.
std::vector<Vector> panel_noise(const AbcTarget& t, const CrnPanel& panel) {
  std::vector<Vector> out;
  for (const auto& seed : panel.seeds()) {
    SeedStream s = seed;
    out.push_back(*t.simulate(Vector::Zero(static_cast<Eigen::Index>(t.dim())), s));
  }
  return out;
}

GradEstimator est(GradMethod m, std::size_t S, double d) {
  GradEstimator e;
  e.method = m;
  e.S = S;
  e.d_theta = v1(d);
  return e;
}

}  // namespace

TEST_SUITE("grad") {
  TEST_CASE("method names round-trip") {
    for (auto m : {GradMethod::mc_random, GradMethod::crn_max, GradMethod::crn_mean, GradMethod::gaussian_crn,
                   GradMethod::analytic})
      CHECK(parse_grad_method(to_string(m)) == m);
    CHECK_THROWS_AS(parse_grad_method("spsa"), std::invalid_argument);
  }

  TEST_CASE("estimator validation") {
    const ModelInfo g = make_gauss1d(0.1);
    SeedStream s(1, 1);
    CHECK_THROWS_AS(estimate_gradient(*g.target, v1(0), est(GradMethod::crn_mean, 0, 0.1), s), std::invalid_argument);
    CHECK_THROWS_AS(estimate_gradient(*g.target, v1(0), est(GradMethod::crn_mean, 10, 0.0), s), std::invalid_argument);
    CHECK_THROWS_AS(estimate_gradient(*g.target, v1(0), est(GradMethod::gaussian_crn, 1, 0.1), s),
                    std::invalid_argument);
    CHECK_THROWS_AS(estimate_gradient(*g.target, Vector::Zero(2), est(GradMethod::crn_mean, 10, 0.1), s),
                    std::invalid_argument);
    auto e = est(GradMethod::crn_mean, 10, 0.1);
    e.d_theta = Vector::Constant(3, 0.1);
    CHECK_THROWS_AS(estimate_gradient(*linear2d(), Vector::Zero(2), e, s), std::invalid_argument);

    auto mad = linear2d(std::make_shared<MeanAbsDiscrepancyKernel>(0.1));
    CHECK_THROWS_AS(grad_gaussian_crn(*mad, Vector::Zero(2), est(GradMethod::gaussian_crn, 10, 0.1), s),
                    std::invalid_argument);
    CHECK_THROWS_AS(grad_analytic(*linear2d(), Vector::Zero(2)), std::logic_error);
  }

  TEST_CASE("loglik_crn is the log of the summed kernel over the panel") {
    auto t = linear2d();
    SeedStream s(5, 5);
    const CrnPanel panel = fresh_panel(s, 20);
    const Vector theta = (Vector(2) << 0.1, 0.05).finished();
    double sum = 0.0;
    for (const Vector& z : panel_noise(*t, panel)) {
      const Vector r = theta + z - t->observed();
      sum += std::exp(-r.squaredNorm() / (2 * 0.01)) / (2 * std::numbers::pi * 0.01);
    }
    bool degen = true;
    CHECK(loglik_crn(*t, theta, panel, &degen) == doctest::Approx(std::log(sum)));
    CHECK_FALSE(degen);
  }

  TEST_CASE("gaussian_crn on a location model equals the synthetic-likelihood derivative") {
    // Shared noise shifts the sample mean by exactly +-d and leaves the
    // variance alone, so the central difference of the quadratic is exact.
    const ModelInfo g = make_gauss1d(0.1);
    for (double theta : {-0.7, 0.0, 0.4}) {
      SeedStream s(8, static_cast<std::uint64_t>(100 * (theta + 1)));
      SeedStream replay = s;
      const auto e = est(GradMethod::gaussian_crn, 50, 0.05);
      const GradResult r = grad_gaussian_crn(*g.target, v1(theta), e, s);
      const auto z = panel_noise(*g.target, fresh_panel(replay, 50));
      double m = 0.0, m2 = 0.0;
      for (const auto& zi : z) m += zi[0];
      m /= 50.0;
      for (const auto& zi : z) m2 += (zi[0] - m) * (zi[0] - m);
      const double var = m2 / 49.0 + 0.01;
      CHECK(r.grad[0] == doctest::Approx(-(theta + m) / var).epsilon(1e-8));
      CHECK(r.sims_used == 100);
    }
  }

  TEST_CASE("crn_max differences the best seed at each side") {
    const ModelInfo g = make_gauss1d(0.1);
    const double theta = 0.3, d = 0.05;
    SeedStream s(9, 9);
    SeedStream replay = s;
    const GradResult r = grad_crn_max(*g.target, v1(theta), est(GradMethod::crn_max, 30, d), s);
    const auto z = panel_noise(*g.target, fresh_panel(replay, 30));
    double bp = INFINITY, bm = INFINITY;
    for (const auto& zi : z) {
      bp = std::min(bp, std::abs(theta + d + zi[0]));
      bm = std::min(bm, std::abs(theta - d + zi[0]));
    }
    const double expect = (-(bp * bp) + bm * bm) / (2 * 0.01) / (2 * d);
    CHECK(r.grad[0] == doctest::Approx(expect).epsilon(1e-8));
  }

  TEST_CASE("mc_random uses independent panels, crn_mean a shared one") {
    const ModelInfo g = make_gauss1d(0.1);
    SeedStream a(3, 3), b(3, 3);
    const GradResult crn = grad_crn_mean(*g.target, v1(0.2), est(GradMethod::crn_mean, 40, 0.05), a);
    const GradResult mc = grad_mc_random(*g.target, v1(0.2), est(GradMethod::mc_random, 40, 0.05), b);
    // Both draw the plus panel first from identical streams.
    CHECK(crn.loglik_plus[0] == mc.loglik_plus[0]);
    CHECK(crn.loglik_minus[0] != mc.loglik_minus[0]);
    CHECK(crn.sims_used == 80);
    CHECK(mc.sims_used == 80);
  }

  TEST_CASE("estimates are deterministic for a fixed stream") {
    auto t = linear2d();
    for (auto m : {GradMethod::mc_random, GradMethod::crn_max, GradMethod::crn_mean, GradMethod::gaussian_crn}) {
      SeedStream a(21, 4), b(21, 4);
      const auto e = est(m, 25, 0.05);
      CHECK(estimate_gradient(*t, Vector::Zero(2), e, a).grad == estimate_gradient(*t, Vector::Zero(2), e, b).grad);
    }
  }

  TEST_CASE("gaussian_crn averages to the closed form") {
    const ModelInfo g = make_gauss1d(0.1);
    for (double theta : {-0.5, 0.25, 0.8}) {
      SeedStream s(11, 11);
      double sum = 0.0;
      const int reps = 400;
      for (int r = 0; r < reps; ++r) sum += grad_gaussian_crn(*g.target, v1(theta), est(GradMethod::gaussian_crn, 100, 0.05), s).grad[0];
      const double exact = gauss1d_closed_form(theta, 0.1).grad;
      CHECK(sum / reps == doctest::Approx(exact).epsilon(0.05));
    }
  }

  TEST_CASE("zero kernel mass is flagged as degenerate") {
    auto zero = std::make_shared<FunctionKernel>([](const Vector&, const Vector&) { return kNegInf; }, 1.0);
    auto t = linear2d(zero);
    SeedStream s(2, 2);
    const GradResult r = grad_crn_mean(*t, Vector::Zero(2), est(GradMethod::crn_mean, 10, 0.1), s);
    CHECK(r.degenerate);
    CHECK(std::isnan(r.grad[0]));
    CHECK(std::isnan(r.grad[1]));
  }

  TEST_CASE("analytic gradient for gauss1d") {
    const ModelInfo g = make_gauss1d(0.1);
    CHECK(grad_analytic(*g.target, v1(0.5)).grad[0] == doctest::Approx(-25.0));
    CHECK(grad_analytic(*g.target, v1(0.5)).sims_used == 0);
  }
}
