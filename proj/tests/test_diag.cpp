#include "doctest.h"

#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "glabc/diag.hpp"
#include "glabc/zoo.hpp"

using namespace glabc;

namespace {

std::string temp_path(const char* name) { return (std::filesystem::temp_directory_path() / name).string(); }

template <class T>
void put_bytes(std::ofstream& out, T v) {
  std::uint64_t bits = 0;
  std::memcpy(&bits, &v, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i) out.put(static_cast<char>((bits >> (8 * i)) & 0xff));
}

GridDensity gaussian_grid(std::size_t n, double sd) {
  GridDensity g;
  g.axes = {{-4, 4, n}, {-4, 4, n}};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double x = g.axes[0].point(i), y = g.axes[1].point(j);
      g.values.push_back(std::exp(-(x * x + y * y) / (2 * sd * sd)) / (2 * std::numbers::pi * sd * sd));
    }
  return g;
}

}  // namespace

TEST_SUITE("diag") {
  TEST_CASE("ESS of independent and autocorrelated traces") {
    SeedStream s(1, 1);
    const std::size_t n = 20000;
    std::vector<double> iid(n), ar(n);
    double x = 0.0;
    const double phi = 0.9;
    for (std::size_t i = 0; i < n; ++i) {
      iid[i] = s.normal();
      x = phi * x + std::sqrt(1 - phi * phi) * s.normal();
      ar[i] = x;
    }
    CHECK(ess(iid) == doctest::Approx(static_cast<double>(n)).epsilon(0.1));
    CHECK(ess(ar) == doctest::Approx(n * (1 - phi) / (1 + phi)).epsilon(0.2));
    CHECK(ess(std::vector<double>(50, 3.0)) == 1.0);
    CHECK_THROWS_AS(ess(std::vector<double>(9, 0.0)), std::invalid_argument);
  }

  TEST_CASE("grid KL by hand") {
    GridDensity p, q;
    p.axes = q.axes = {{0, 1, 2}, {0, 1, 2}};
    p.values = {1, 1, 1, 1};
    q.values = {2, 1, 0.5, 0.5};
    const double expect = (std::log(0.5) + 0 + std::log(2.0) + std::log(2.0)) / 4.0;
    CHECK(grid_kl(p, q) == doctest::Approx(expect));
    CHECK(grid_kl(p, p) == 0.0);
    q.values = {1, 1, 1, 0};
    CHECK(grid_kl(p, q, 1e-6) == doctest::Approx(std::log(1e6) / 4));
    GridDensity other = p;
    other.axes[0].n = 3;
    other.values.resize(6, 1.0);
    CHECK_THROWS_AS(grid_kl(p, other), std::invalid_argument);
  }

  TEST_CASE("marginal KL averages per axis") {
    GridDensity p, q;
    p.kind = q.kind = DensityKind::marginals;
    p.axes = q.axes = {{0, 1, 2}, {0, 2, 3}};
    p.values = {1, 1, 0.5, 0.5, 0.5};
    q.values = {1, 1, 1, 0.5, 0.25};
    const auto per = marginal_kl(p, q);
    REQUIRE(per.size() == 2);
    CHECK(per[0] == 0.0);
    CHECK(per[1] == doctest::Approx((2.0 / 3.0) * (0.5 * std::log(0.5) + 0.5 * std::log(2.0))));
    CHECK(grid_kl(p, q) == doctest::Approx(0.5 * per[1]));
  }

  TEST_CASE("KDE recovers a Gaussian and integrates to the in-box fraction") {
    SeedStream s(2, 2);
    std::vector<Vector> xs;
    for (int i = 0; i < 50000; ++i) xs.push_back((Vector(2) << s.normal(), s.normal()).finished());
    const KdeSpec spec{{{-4, 4, 81}, {-4, 4, 81}}, {}};
    const GridDensity k = kde_2d(xs, spec);
    double in_joint = 0.0;
    std::array<double, 2> in_coord{0.0, 0.0};
    for (const auto& x : xs) {
      in_joint += (x.cwiseAbs().maxCoeff() <= 4.0) ? 1.0 : 0.0;
      for (int j = 0; j < 2; ++j) in_coord[j] += std::abs(x[j]) <= 4.0 ? 1.0 : 0.0;
    }
    CHECK(k.mass()[0] == doctest::Approx(in_joint / 50000.0).epsilon(1e-9));
    CHECK(grid_kl(gaussian_grid(81, 1.0), k) < 5e-3);

    const GridDensity m = kde_marginals(xs, spec);
    CHECK(m.mass().size() == 2);
    for (int j = 0; j < 2; ++j) CHECK(m.mass()[j] == doctest::Approx(in_coord[j] / 50000.0).epsilon(1e-9));
    CHECK(kde(xs, spec, DensityKind::marginals).values == m.values);

    const auto bw = normal_reference_bandwidth(xs);
    CHECK(bw[0] == doctest::Approx(1.06 * std::pow(50000.0, -0.2)).epsilon(0.02));
    CHECK(kde_bandwidth(xs, KdeSpec{spec.axes, {0.3}}, 2) == std::vector<double>{0.3, 0.3});

    std::vector<Vector> few(50, Vector::Zero(2));
    CHECK_THROWS(kde_2d(few, spec));
    std::vector<Vector> outside(200, Vector::Constant(2, 10.0));
    const GridDensity none = kde_2d(outside, spec);
    CHECK(none.mass()[0] == 0.0);
    const double kl_floor = grid_kl(gaussian_grid(81, 1.0), none);
    CHECK(std::isfinite(kl_floor));
    CHECK(kl_floor > grid_kl(gaussian_grid(81, 1.0), k));

    std::vector<Vector> half(xs.begin(), xs.begin() + 1000);
    half.insert(half.end(), 1000, Vector::Constant(2, 10.0));
    CHECK(kde_2d(half, spec).mass()[0] == doctest::Approx(0.5).epsilon(0.01));
  }

  TEST_CASE("mode switches over a hand trace") {
    const std::vector<Vector> centers{Vector::Constant(1, -1.0), Vector::Constant(1, 1.0)};
    std::vector<Vector> tr;
    for (double x : {-1.0, -0.9, 0.0, 1.1, 0.95, -1.2, 0.05, -1.0, 1.0}) tr.push_back(Vector::Constant(1, x));
    // 0.0 and 0.05 are beyond radius 0.5 from both centres and keep the label.
    CHECK(mode_switches(tr, centers, 0.5) == 3);
  }

  TEST_CASE("reference files round-trip and old files still load") {
    ReferencePosterior ref;
    ref.density = gaussian_grid(5, 1.0);
    ref.bandwidth = {0.1, 0.2};
    ref.provenance = "unit test";
    const std::string path = temp_path("glabc_ref_test.bin");
    save_reference(ref, path);
    const ReferencePosterior back = load_reference(path);
    CHECK(back.density.axes == ref.density.axes);
    CHECK(back.density.values == ref.density.values);
    CHECK(back.bandwidth == ref.bandwidth);
    CHECK(back.provenance == ref.provenance);

    {
      std::ofstream out(path, std::ios::binary);
      out.write("GLABCREF", 8);
      put_bytes<std::uint32_t>(out, 1);
      put_bytes<std::uint32_t>(out, 1);  // marginals
      put_bytes<std::uint32_t>(out, 1);
      put_bytes<double>(out, -1.0);
      put_bytes<double>(out, 1.0);
      put_bytes<std::uint64_t>(out, 3);
      for (double v : {0.25, 0.5, 0.25}) put_bytes<double>(out, v);
      put_bytes<std::uint32_t>(out, 2);
      out.write("v1", 2);
    }
    const ReferencePosterior v1 = load_reference(path);
    CHECK(v1.density.kind == DensityKind::marginals);
    CHECK(v1.density.values == std::vector<double>{0.25, 0.5, 0.25});
    CHECK(v1.bandwidth.empty());
    CHECK(v1.provenance == "v1");

    {
      std::ofstream out(path, std::ios::binary);
      out.write("NOTAREF!", 8);
    }
    CHECK_THROWS(load_reference(path));
    std::filesystem::remove(path);
  }

  TEST_CASE("importance-sampling reference matches the gauss1d posterior") {
    const ModelInfo g = make_gauss1d(0.1);
    SeedStream s(3, 3);
    IsReferenceInfo info;
    const KdeSpec spec{axes_from_box(g.posterior_box, 201), {}};
    const ReferencePosterior ref = reference_by_is(*g.target, 400000, 50000, spec, s, DensityKind::marginals, &info);
    CHECK(info.n_prior == 400000);
    CHECK(info.weight_ess > 1000);
    CHECK(ref.bandwidth.size() == 1);
    GridDensity exact = ref.density;
    const double sd = 1.0 / std::sqrt(51.0);
    for (std::size_t i = 0; i < 201; ++i) exact.values[i] = std::exp(log_normal_density(exact.axes[0].point(i), 0, sd));
    CHECK(grid_kl(exact, ref.density) < 5e-3);
  }

  TEST_CASE("axes from a box") {
    const auto a = axes_from_box({{0, 1}, {-2, 2}}, 11);
    REQUIRE(a.size() == 2);
    CHECK(a[1].lower == -2);
    CHECK(a[1].point(10) == 2.0);
    CHECK(a[0].spacing() == doctest::Approx(0.1));
  }
}
