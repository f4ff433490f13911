#include "doctest.h"

#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>

#include "discrete_toy.hpp"
#include "glabc/kernels.hpp"
#include "glabc/zoo.hpp"

using namespace glabc;

namespace {

Vector v1(double x) { return Vector::Constant(1, x); }

// Four support points, x = theta + 0.5 z, Gaussian kernel 0.5, y = 1.
struct DiscreteToy {
  std::vector<Vector> support{v1(0.0), v1(1.0), v1(2.0), v1(3.0)};
  std::vector<double> probs{0.4, 0.3, 0.2, 0.1};
  std::shared_ptr<const Categorical> prior = std::make_shared<Categorical>(support, probs);
  std::shared_ptr<AbcTarget> target;
  std::vector<double> exact;

  DiscreteToy() {
    auto sim = [](const Vector& th, SeedStream& s) { return Vector(th.array() + 0.5 * s.normal()); };
    target = std::make_shared<AbcTarget>("discrete", prior, sim, std::make_shared<GaussianKernel>(0.5), v1(1.0));
    double z = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
      const double r = support[k][0] - 1.0;
      exact.push_back(probs[k] * std::exp(-r * r / (2 * 0.5)));
      z += exact.back();
    }
    for (double& e : exact) e /= z;
  }

  double tv(const GlobalLocalConfig& cfg, std::size_t n, std::uint64_t seed) const {
    SeedStream s(seed, 1);
    ChainState st = init_chain(*target, v1(0.0), s);
    std::vector<double> counts(4, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      st = gl_step(st, cfg, *target, s).state;
      counts[static_cast<std::size_t>(std::lround(st.point.theta[0]))] += 1.0;
    }
    double d = 0.0;
    for (std::size_t k = 0; k < 4; ++k) d += std::abs(counts[k] / static_cast<double>(n) - exact[k]);
    return 0.5 * d;
  }
};

// Posterior of gauss1d with eps = 0.1: N(0, 1/51).
void check_gauss1d_moments(const GlobalLocalConfig& cfg, std::size_t n, std::uint64_t seed) {
  const ModelInfo g = make_gauss1d(0.1);
  SeedStream s(seed, 1);
  ChainState st = init_chain(*g.target, v1(0.0), s);
  double m = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    st = gl_step(st, cfg, *g.target, s).state;
    m += st.point.theta[0];
    m2 += st.point.theta[0] * st.point.theta[0];
  }
  m /= static_cast<double>(n);
  const double var = m2 / static_cast<double>(n) - m * m;
  CHECK(std::abs(m) < 0.02);
  CHECK(var == doctest::Approx(1.0 / 51.0).epsilon(0.1));
}

ParamPoint point(double log_prior, double log_kernel) {
  ParamPoint p;
  p.theta = v1(0.0);
  p.log_prior = log_prior;
  p.log_kernel = log_kernel;
  return p;
}

}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("acceptance probability edge cases") {
    CHECK(mh_accept_prob(point(0, 0), point(0, 1), 0, 0) == 1.0);
    CHECK(mh_accept_prob(point(0, 1), point(0, 0), 0, 0) == doctest::Approx(std::exp(-1.0)));
    CHECK(mh_accept_prob(point(0, 0), point(0, 0), 0.5, 0.0) == doctest::Approx(std::exp(-0.5)));
    CHECK(mh_accept_prob(point(0, kNegInf), point(0, 0), 0, 0) == 1.0);
    CHECK(mh_accept_prob(point(0, 0), point(kNegInf, 0), 0, 0) == 0.0);
    CHECK(mh_accept_prob(point(0, kNegInf), point(0, kNegInf), 0, 0) == 0.0);
  }

  TEST_CASE("simulation accounting per move") {
    const ModelInfo g = make_gauss1d(0.1);
    SeedStream s(1, 1);
    ChainState st = init_chain(*g.target, v1(0.1), s);
    CHECK(st.sims_used == 1);
    CHECK(local_rw_step(st, *g.target, v1(0.1), s).sims_used == 1);
    CHECK(global_imh_step(st, *g.target, g.target->prior(), s).sims_used == 1);
    const IsirResult r = isir_step(st, *g.target, g.target->prior(), 7, s);
    CHECK(r.state.sims_used == 7);
    CHECK(r.candidates.size() == 7);
    GradEstimator e;
    e.S = 10;
    const ChainState m = mala_step(st, *g.target, 0.1, e, s);
    // Gradient at the current point (not cached yet) and at the proposal.
    CHECK(m.sims_used == 1 + 2 * 2 * 10);
  }

  TEST_CASE("MALA reuses the gradient attached to the current state") {
    const ModelInfo g = make_gauss1d(0.1);
    SeedStream s(2, 2);
    GradEstimator e;
    e.S = 10;
    ChainState st = mala_step(init_chain(*g.target, v1(0.1), s), *g.target, 0.1, e, s);
    REQUIRE(st.log_post_grad.has_value());
    CHECK(mala_step(st, *g.target, 0.1, e, s).sims_used == 1 + 2 * 10);
  }

  TEST_CASE("i-SIR is reproducible and candidate order does not matter") {
    const ModelInfo g = make_gauss1d(0.1);
    SeedStream a(5, 5), b(5, 5);
    ChainState st = init_chain(*g.target, v1(0.3), a);
    init_chain(*g.target, v1(0.3), b);
    const IsirResult ra = isir_step(st, *g.target, g.target->prior(), 10, a);
    const IsirResult rb = isir_step(st, *g.target, g.target->prior(), 10, b);
    CHECK(ra.state.point.theta == rb.state.point.theta);
    for (std::size_t i = 0; i < 10; ++i) {
      const auto& c = ra.candidates[i];
      CHECK(c.log_weight == doctest::Approx(c.point.log_numerator() - c.log_proposal));
      CHECK(c.point.theta == rb.candidates[i].point.theta);
    }
  }

  TEST_CASE("i-SIR stays put when nothing has weight") {
    auto zero = std::make_shared<FunctionKernel>([](const Vector&, const Vector&) { return kNegInf; }, 1.0);
    const ModelInfo g = make_gauss1d(0.1);
    AbcTarget t("zero", g.target->prior_ptr(), [](const Vector& th, SeedStream&) { return th; }, zero, v1(0.0));
    SeedStream s(6, 6);
    ChainState st = init_chain(t, v1(0.2), s);
    const IsirResult r = isir_step(st, t, t.prior(), 5, s);
    CHECK_FALSE(r.state.accepted);
    CHECK(r.state.point.theta == st.point.theta);
  }

  TEST_CASE("global move fraction follows gamma") {
    const ModelInfo g = make_gauss1d(0.1);
    for (double gamma : {0.0, 0.3, 1.0}) {
      GlobalLocalConfig cfg;
      cfg.gamma = gamma;
      cfg.batch_size = 3;
      cfg.local = RandomWalkSpec{v1(0.2)};
      cfg.global_proposal = g.target->prior_ptr();
      cfg.validate(1);
      SeedStream s(7, 7);
      ChainState st = init_chain(*g.target, v1(0.0), s);
      const int n = 20000;
      int global = 0;
      std::size_t sims = 0;
      for (int i = 0; i < n; ++i) {
        st = gl_step(st, cfg, *g.target, s).state;
        global += st.last_move == MoveType::global;
        sims += st.sims_used;
      }
      CHECK(global / static_cast<double>(n) == doctest::Approx(gamma).epsilon(0.03).scale(1.0));
      CHECK(sims == static_cast<std::size_t>(global) * 3 + static_cast<std::size_t>(n - global));
    }
  }

  TEST_CASE("config validation") {
    const ModelInfo g = make_gauss1d(0.1);
    GlobalLocalConfig cfg;
    cfg.local = RandomWalkSpec{v1(0.1)};
    cfg.validate(1);
    cfg.gamma = 1.5;
    CHECK_THROWS_AS(cfg.validate(1), std::invalid_argument);
    cfg.gamma = 0.5;
    CHECK_THROWS_AS(cfg.validate(1), std::invalid_argument);  // no proposal
    cfg.global_proposal = g.target->prior_ptr();
    cfg.validate(1);
    CHECK_THROWS_AS(cfg.validate(2), std::invalid_argument);
    cfg.local = RandomWalkSpec{v1(-1.0)};
    CHECK_THROWS_AS(cfg.validate(1), std::invalid_argument);
    cfg.local = MalaSpec{0.0, {}};
    CHECK_THROWS_AS(cfg.validate(1), std::invalid_argument);
    cfg.batch_size = 0;
    cfg.local = RandomWalkSpec{v1(0.1)};
    CHECK_THROWS_AS(cfg.validate(1), std::invalid_argument);
    SeedStream s(1, 1);
    CHECK_THROWS_AS(init_chain(*g.target, Vector::Zero(2), s), std::invalid_argument);
  }

  TEST_CASE("kernels leave a discrete posterior invariant") {
    const DiscreteToy toy;
    GlobalLocalConfig isir;
    isir.gamma = 1.0;
    isir.batch_size = 5;
    isir.global_proposal = toy.prior;
    CHECK(toy.tv(isir, 60000, 1) < 0.02);

    GlobalLocalConfig imh = isir;
    imh.global_kind = GlobalKind::imh;
    CHECK(toy.tv(imh, 60000, 2) < 0.02);

    // Integer random-walk steps mixed with i-SIR.
    GlobalLocalConfig gl = isir;
    gl.gamma = 0.3;
    gl.local = RandomWalkSpec{v1(1.0)};
    CHECK(toy.tv(gl, 60000, 3) < 0.02);
  }

  TEST_CASE("continuous posterior moments for each kernel") {
    const ModelInfo g = make_gauss1d(0.1);
    GlobalLocalConfig rw;
    rw.local = RandomWalkSpec{v1(0.15)};
    check_gauss1d_moments(rw, 80000, 1);

    GlobalLocalConfig isir;
    isir.gamma = 1.0;
    isir.batch_size = 10;
    isir.global_proposal = g.target->prior_ptr();
    check_gauss1d_moments(isir, 40000, 2);

    GlobalLocalConfig gl = isir;
    gl.gamma = 0.4;
    gl.batch_size = 5;
    gl.local = RandomWalkSpec{v1(0.15)};
    check_gauss1d_moments(gl, 60000, 3);

    GlobalLocalConfig mala;
    GradEstimator e;
    e.method = GradMethod::analytic;
    mala.local = MalaSpec{0.1, e};
    check_gauss1d_moments(mala, 60000, 4);

    GlobalLocalConfig noisy;
    GradEstimator en;
    en.method = GradMethod::crn_mean;
    en.S = 20;
    noisy.local = MalaSpec{0.1, en};
    check_gauss1d_moments(noisy, 20000, 5);
  }
}

TEST_SUITE("kernels") {
  TEST_CASE("enumerated i-SIR kernel is stochastic and leaves pi_eps invariant") {
    const testing::DiscreteIsirToy toy;
    const auto pi = toy.joint_posterior();
    for (int n_b : {1, 2, 3}) {
      const auto P = toy.transition(n_b);
      for (int i = 0; i < 9; ++i) {
        double row = 0.0, flow = 0.0;
        for (int j = 0; j < 9; ++j) {
          row += P[i][j];
          flow += pi[j] * P[j][i];
        }
        CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(flow == doctest::Approx(pi[i]).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("empirical i-SIR transitions match the enumerated kernel") {
    const testing::DiscreteIsirToy toy;
    const auto pi = toy.joint_posterior();
    const int n_b = 2;
    const auto P = toy.transition(n_b);
    SeedStream s(17, 1);
    ChainState st = init_chain(*toy.target, Vector::Zero(1), s);
    const int n = 100000;
    std::vector<double> pairs(81, 0.0);
    for (int i = 0; i < n; ++i) {
      const int from = testing::DiscreteIsirToy::state_of(st);
      st = isir_step(st, *toy.target, *toy.proposal_dist, n_b, s).state;
      pairs[from * 9 + testing::DiscreteIsirToy::state_of(st)] += 1.0;
    }
    // Pairs (theta_t, theta_{t+1}) under stationarity.
    double tv = 0.0;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) {
        double exact = 0.0, emp = 0.0;
        for (int xa = 0; xa < 3; ++xa)
          for (int xb = 0; xb < 3; ++xb) {
            const int i = a * 3 + xa, j = b * 3 + xb;
            exact += pi[i] * P[i][j];
            emp += pairs[i * 9 + j] / n;
          }
        tv += 0.5 * std::abs(exact - emp);
      }
    CHECK(tv < 0.01);
  }
}
