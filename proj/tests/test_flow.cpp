#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>

#include "glabc/flow.hpp"
#include "glabc/zoo.hpp"

using namespace glabc;

namespace {

FlowModel random_flow(std::size_t dim, std::uint64_t seed, double sd = 0.3) {
  Matrix chol = Matrix::Identity(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  if (dim == 2) chol(1, 0) = 0.4;
  chol(0, 0) = 1.5;
  FlowModel f(dim, FlowSpec{3, 8, 2.0}, Vector::Constant(static_cast<Eigen::Index>(dim), 0.5), chol);
  SeedStream s(seed, 77);
  Vector p(static_cast<Eigen::Index>(f.num_parameters()));
  for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = sd * s.normal();
  f.set_parameters(p);
  return f;
}

double log_mvn(const Vector& x, const Vector& mean, const Matrix& chol) {
  const Vector z = chol.triangularView<Eigen::Lower>().solve(x - mean);
  return -0.5 * z.squaredNorm() - chol.diagonal().array().log().sum() -
         0.5 * static_cast<double>(x.size()) * std::log(2 * std::numbers::pi);
}

}  // namespace

TEST_SUITE("flow") {
  TEST_CASE("a fresh flow is the whitened Gaussian") {
    Matrix chol(2, 2);
    chol << 2.0, 0.0, 0.5, 0.7;
    const Vector shift = (Vector(2) << 1.0, -1.0).finished();
    const FlowModel f(2, FlowSpec{}, shift, chol);
    SeedStream s(1, 1);
    for (int i = 0; i < 20; ++i) {
      const Vector th = (Vector(2) << 3 * s.normal(), 3 * s.normal()).finished();
      CHECK(f.log_density(th) == doctest::Approx(log_mvn(th, shift, chol)));
    }
    const FlowModel m = FlowModel::matched_to(*make_gauss1d().target->prior_ptr());
    CHECK(m.log_density(Vector::Constant(1, 0.7)) == doctest::Approx(log_normal_density(0.7, 0.0, 1.0)));
  }

  TEST_CASE("transform and inverse are mutual inverses") {
    for (std::size_t dim : {1, 2, 5}) {
      const FlowModel f = random_flow(dim, dim);
      SeedStream s(2, dim);
      for (int i = 0; i < 20; ++i) {
        Vector u(static_cast<Eigen::Index>(dim));
        for (Eigen::Index k = 0; k < u.size(); ++k) u[k] = s.normal();
        CHECK((f.inverse(f.transform(u)) - u).cwiseAbs().maxCoeff() < 1e-10);
      }
    }
  }

  TEST_CASE("densities integrate to one") {
    const FlowModel f2 = random_flow(2, 3, 0.5);
    const int n = 1200;
    const double lo = -30, hi = 30, h = (hi - lo) / n;
    double mass = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        mass += std::exp(f2.log_density((Vector(2) << lo + (i + 0.5) * h, lo + (j + 0.5) * h).finished()));
    CHECK(mass * h * h == doctest::Approx(1.0).epsilon(2e-3));

    const FlowModel f1 = random_flow(1, 4, 0.5);
    double m1 = 0.0;
    for (int i = 0; i < 8000; ++i) m1 += std::exp(f1.log_density(Vector::Constant(1, -10.0 + (i + 0.5) * 20.0 / 8000)));
    CHECK(m1 * 20.0 / 8000 == doctest::Approx(1.0).epsilon(1e-3));
  }

  TEST_CASE("sampled density agrees with log_density") {
    const FlowModel f = random_flow(3, 5);
    SeedStream s(3, 3);
    for (int i = 0; i < 20; ++i) {
      const auto [th, lp] = f.sample_with_density(s);
      CHECK(lp == doctest::Approx(f.log_density(th)).epsilon(1e-9));
    }
  }

  TEST_CASE("parameter and input gradients match finite differences") {
    const FlowModel f = random_flow(2, 6);
    SeedStream s(4, 4);
    std::vector<Vector> th;
    std::vector<double> lw;
    for (int i = 0; i < 6; ++i) {
      th.push_back((Vector(2) << s.normal(), s.normal()).finished());
      lw.push_back(s.normal());
    }
    Vector g;
    f.weighted_nll(th, lw, &g);
    const double h = 1e-6;
    for (Eigen::Index k = 0; k < g.size(); k += 7) {
      FlowModel a = f, b = f;
      Vector pa = f.parameters(), pb = f.parameters();
      pa[k] += h;
      pb[k] -= h;
      a.set_parameters(pa);
      b.set_parameters(pb);
      const double fd = (*a.weighted_nll(th, lw, nullptr) - *b.weighted_nll(th, lw, nullptr)) / (2 * h);
      CHECK(g[k] == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
    }
    const Vector x = th[0];
    const Vector gx = f.grad_log_density(x);
    for (Eigen::Index j = 0; j < 2; ++j) {
      Vector xp = x, xm = x;
      xp[j] += h;
      xm[j] -= h;
      CHECK(gx[j] == doctest::Approx((f.log_density(xp) - f.log_density(xm)) / (2 * h)).epsilon(1e-5));
    }
  }

  TEST_CASE("json and file round trips preserve the density") {
    const FlowModel f = random_flow(2, 7);
    const FlowModel g = FlowModel::from_json(f.to_json());
    const auto path = std::filesystem::temp_directory_path() / "glabc_flow_test.json";
    f.save(path.string());
    const FlowModel h = FlowModel::load(path.string());
    std::filesystem::remove(path);
    const Vector th = (Vector(2) << 0.3, -0.2).finished();
    CHECK(g.log_density(th) == f.log_density(th));
    CHECK(h.log_density(th) == f.log_density(th));
    nlohmann::json bad = f.to_json();
    bad["params"] = std::vector<double>{1.0};
    CHECK_THROWS(FlowModel::from_json(bad));
  }

  TEST_CASE("training lowers the weighted loss and skips empty weights") {
    FlowModel f(1, FlowSpec{2, 8, 2.0});
    TrainBuffer buf(500);
    SeedStream s(8, 8);
    for (int i = 0; i < 500; ++i) buf.add(Vector::Constant(1, 0.3 * s.normal() + 1.0), 0.0);
    CHECK(buf.full());
    double first = 0.0, last = 0.0;
    FlowTrainer trainer(FlowOptimizer::sgd, 0.05);
    for (int it = 0; it < 200; ++it) {
      const double l = *trainer.step(f, buf);
      if (it == 0) first = l;
      last = l;
    }
    CHECK(last < first - 0.1);

    const FlowModel g(1, FlowSpec{2, 8, 2.0});
    double loss = 0.0;
    const FlowModel sgd = flow_train_step(g, buf, 0.05, &loss);
    FlowModel viatrainer = g;
    FlowTrainer t2(FlowOptimizer::sgd, 0.05);
    t2.step(viatrainer, buf);
    CHECK(sgd.parameters() == viatrainer.parameters());

    TrainBuffer dead(2);
    dead.add(Vector::Zero(1), kNegInf);
    dead.add(Vector::Ones(1), kNegInf);
    CHECK(flow_train_step(g, dead, 0.1).parameters() == g.parameters());
    CHECK_FALSE(t2.step(viatrainer, dead).has_value());
    CHECK(parse_flow_optimizer(to_string(FlowOptimizer::adam)) == FlowOptimizer::adam);
    CHECK_THROWS_AS(parse_flow_optimizer("lbfgs"), std::invalid_argument);
  }

  TEST_CASE("adaptive i-SIR refits every collect_stages stages") {
    const ModelInfo m = make_gauss1d(0.1);
    FlowAdaptiveIsir a(FlowModel::matched_to(m.target->prior()), 4, 5, FlowOptimizer::sgd, 0.01);
    a.set_max_updates(3);
    SeedStream s(9, 9);
    ChainState st = init_chain(*m.target, Vector::Zero(1), s);
    for (int i = 0; i < 14; ++i) {
      const IsirResult r = a.step(st, *m.target, s);
      CHECK(r.state.sims_used == 4);
      st = r.state;
    }
    CHECK(a.updates() == 2);
    for (int i = 0; i < 30; ++i) st = a.step(st, *m.target, s).state;
    CHECK(a.updates() == 3);
    CHECK(a.loss_history().size() == 3);
  }

  TEST_CASE("a frozen flow proposal leaves the posterior invariant") {
    const ModelInfo m = make_gauss1d(0.1);
    FlowAdaptiveIsir a(random_flow(1, 10, 0.2), 8, 0, FlowOptimizer::sgd, 0.01);
    SeedStream s(10, 10);
    ChainState st = init_chain(*m.target, Vector::Zero(1), s);
    double s1 = 0.0, s2 = 0.0;
    const int n = 40000;
    for (int i = 0; i < n; ++i) {
      st = a.step(st, *m.target, s).state;
      s1 += st.point.theta[0];
      s2 += st.point.theta[0] * st.point.theta[0];
    }
    CHECK(a.updates() == 0);
    CHECK(std::abs(s1 / n) < 0.02);
    CHECK(s2 / n - (s1 / n) * (s1 / n) == doctest::Approx(1.0 / 51.0).epsilon(0.1));
  }
}
