#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <numeric>

#include "fedzo/error.hpp"
#include "fedzo/loss.hpp"
#include "fedzo/zo.hpp"
#include "helpers.hpp"

using namespace fedzo;
using namespace testing_helpers;

namespace {

PerturbationSpec pspec_of(std::uint64_t seed, std::size_t k, double sigma = 1e-3) {
  PerturbationSpec p;
  p.rng = SeededRng{seed, 5};
  p.k = k;
  p.sigma = sigma;
  return p;
}

double half_sq(std::span<const double> w) {
  double s = 0.0;
  for (double v : w) s += v * v;
  return 0.5 * s;
}

double median_deviation(std::size_t n, std::size_t k, std::size_t reps) {
  std::vector<double> v;
  for (std::size_t r = 0; r < reps; ++r) v.push_back(covariance_deviation(pspec_of(900 + r, k), n));
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST_SUITE("zo") {
  TEST_CASE("perturbation spec validation") {
    PerturbationSpec p = pspec_of(1, 1);
    p.sigma = 0.0;
    CHECK_THROWS_AS(p.validate(), ValidationError);
    p = pspec_of(1, 0);
    CHECK_THROWS_AS(p.validate(), ValidationError);
  }

  TEST_CASE("perturbations are masked and consume the stream in active order") {
    const auto ps = pspec_of(3, 4, 0.5);
    std::vector<std::uint8_t> active{1, 0, 0, 1, 1, 0, 1};
    const auto d = perturbation(ps, 2, active.size(), active);
    const Tensor z = seeded_gaussian(ps.rng.derive({2}), 4, 1.0);
    std::size_t i = 0;
    for (std::size_t j = 0; j < active.size(); ++j) {
      if (active[j]) {
        CHECK(d[j] == 0.5 * z[i++]);
      } else {
        CHECK(d[j] == 0.0);
      }
    }
    const auto dense = perturbation(ps, 2, 4);
    for (std::size_t j = 0; j < 4; ++j) CHECK(dense[j] == 0.5 * z[j]);
  }

  TEST_CASE("constant loss gives a zero delta vector") {
    const FlatLoss constant = [](std::span<const double>) { return 1.25; };
    const std::vector<double> w(10, 0.3);
    const auto dlv = delta_losses(constant, w, pspec_of(1, 8));
    for (double v : dlv.values) CHECK(v == 0.0);
    const auto g = stein_estimate(dlv, pspec_of(1, 8), w.size());
    for (double v : g) CHECK(v == 0.0);
  }

  TEST_CASE("K=1 on half squared norm matches the closed form") {
    const std::vector<double> w{0.5, -1.0, 2.0, 0.25, -0.75};
    const auto ps = pspec_of(7, 1, 0.1);
    const auto dlv = delta_losses(half_sq, w, ps);
    const auto d = perturbation(ps, 0, w.size());
    double expect = 0.0, dd = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      expect += d[j] * w[j];
      dd += d[j] * d[j];
    }
    expect += 0.5 * dd;
    CHECK(rel_err(dlv.values[0], expect, 1e-12) < 1e-12);
  }

  TEST_CASE("delta losses are deterministic and schedule independent") {
    const std::vector<double> w{0.1, 0.2, -0.3, 0.4};
    const FlatLoss loss = [](std::span<const double> v) { return std::sin(v[0]) + v[1] * v[2] + std::exp(v[3]); };
    const auto ps = pspec_of(11, 32);
    const auto a = delta_losses(loss, w, ps);
    ::setenv("FEDZO_THREADS", "4", 1);
    const auto b = delta_losses(loss, w, ps);
    ::unsetenv("FEDZO_THREADS");
    CHECK(a == b);
  }

  TEST_CASE("non-finite loss names the sample") {
    int calls = 0;
    const FlatLoss loss = [&](std::span<const double>) { return calls++ == 0 ? 0.0 : NAN; };
    ::setenv("FEDZO_THREADS", "1", 1);
    try {
      delta_losses(loss, std::vector<double>(3, 0.0), pspec_of(1, 2));
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("sample 0") != std::string::npos);
    }
    ::unsetenv("FEDZO_THREADS");
  }

  TEST_CASE("stein estimate rejects a length mismatch") {
    DeltaLossVector dlv{{1.0, 2.0}};
    CHECK_THROWS_AS(stein_estimate(dlv, pspec_of(1, 3), 4), ShapeError);
  }

  TEST_CASE("regenerated estimate equals the held-perturbation reference bitwise") {
    const std::size_t n = 40;
    std::vector<std::uint8_t> active(n, 1);
    for (std::size_t j = 0; j < n; j += 3) active[j] = 0;
    const auto ps = pspec_of(21, 25);
    const std::vector<double> w = [&] {
      const Tensor t = gaussian_batch({n}, 4);
      return std::vector<double>(t.data().begin(), t.data().end());
    }();
    const FlatLoss loss = [](std::span<const double> v) {
      double s = 0.0;
      for (std::size_t j = 0; j < v.size(); ++j) s += std::cos(v[j]) * static_cast<double>(j + 1);
      return s;
    };
    const auto dlv = delta_losses(loss, w, ps, active);
    // Reference: keep every δ_k, accumulate in k order, divide once.
    std::vector<std::vector<double>> held;
    for (std::size_t k = 0; k < ps.k; ++k) held.push_back(perturbation(ps, k, n, active));
    std::vector<double> ref(n, 0.0);
    const double inv_var = 1.0 / (ps.sigma * ps.sigma);
    for (std::size_t k = 0; k < ps.k; ++k) {
      const double c = dlv.values[k] * inv_var;
      for (std::size_t j = 0; j < n; ++j) ref[j] = ref[j] + c * held[k][j];
    }
    for (double& v : ref) v /= static_cast<double>(ps.k);
    const auto got = stein_estimate(dlv, ps, n, active);
    REQUIRE(got.size() == n);
    CHECK(std::memcmp(got.data(), ref.data(), n * sizeof(double)) == 0);
  }

  TEST_CASE("quadratic loss: estimate within 5% of the true gradient") {
    const std::size_t n = 20;
    const Tensor t = gaussian_batch({n}, 8);
    const std::vector<double> w(t.data().begin(), t.data().end());
    const auto ps = pspec_of(31, 50000);
    const auto g = stein_estimate(delta_losses(half_sq, w, ps), ps, n);
    double err = 0.0, norm = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      err += (g[j] - w[j]) * (g[j] - w[j]);
      norm += w[j] * w[j];
    }
    CHECK(std::sqrt(err / norm) < 0.05);
  }

  TEST_CASE("linear loss: estimator mean within three standard errors") {
    const std::size_t n = 10, k = 100000;
    const std::vector<double> g{1.0, -2.0, 0.5, 0.0, 3.0, -1.5, 0.25, 2.0, -0.75, 1.25};
    const FlatLoss loss = [&](std::span<const double> v) { return std::inner_product(v.begin(), v.end(), g.begin(), 0.0); };
    const auto ps = pspec_of(41, k, 1e-2);
    const auto est = stein_estimate(delta_losses(loss, std::vector<double>(n, 0.0), ps), ps, n);
    double gg = 0.0;
    for (double v : g) gg += v * v;
    for (std::size_t j = 0; j < n; ++j) {
      // Var of δ_j δᵀg / σ² is ‖g‖² + g_j².
      const double se = std::sqrt((gg + g[j] * g[j]) / static_cast<double>(k));
      CHECK(std::abs(est[j] - g[j]) <= 3.0 * se);
    }
  }

  TEST_CASE("covariance deviation: large K limit") {
    CHECK(covariance_deviation(pspec_of(51, 500000), 50) < 0.05);
  }

  TEST_CASE("covariance deviation shrinks about sqrt(K) fold") {
    const double lo = median_deviation(100, 100, 5);
    const double hi = median_deviation(100, 10000, 5);
    const double ratio = lo / hi;
    CHECK(ratio >= 5.0);
    CHECK(ratio <= 20.0);
  }

  TEST_CASE("covariance deviation grows with n at fixed K") {
    CHECK(median_deviation(20, 1000, 5) < median_deviation(100, 1000, 5));
  }

  TEST_CASE("K=1 is the rank-one closed form") {
    const std::size_t n = 12;
    const auto ps = pspec_of(61, 1, 0.2);
    const auto d = perturbation(ps, 0, n);
    double zz = 0.0;
    for (double v : d) zz += v * v / (ps.sigma * ps.sigma);
    // Σ̂ − I has eigenvalues ‖z‖² − 1 (once) and −1.
    const double value = covariance_deviation(ps, n);
    CHECK(value >= zz - 1.0 - 1e-9);
    CHECK(rel_err(value, std::max(std::abs(zz - 1.0), 1.0)) < 1e-6);
  }

  TEST_CASE("masked subspace obeys the bound with n replaced by the survivors") {
    const std::size_t n = 200, live = 20, k = 1000;
    std::vector<std::uint8_t> active(n, 0);
    for (std::size_t j = 0; j < live; ++j) active[j * 10] = 1;
    std::vector<double> masked, full;
    for (std::size_t r = 0; r < 5; ++r) {
      masked.push_back(covariance_deviation(pspec_of(70 + r, k), n, active));
      full.push_back(covariance_deviation(pspec_of(70 + r, k), n));
    }
    std::sort(masked.begin(), masked.end());
    std::sort(full.begin(), full.end());
    CHECK(masked[2] <= 5.0 * std::sqrt(static_cast<double>(live) / k));
    CHECK(masked[2] < full[2]);
  }

  TEST_CASE("spectral norm of a known symmetric matrix") {
    // Eigenvalues 3 and -5 after rotation.
    const double c = std::cos(0.3), s = std::sin(0.3);
    const std::vector<double> a{3 * c * c - 5 * s * s, (3 + 5) * c * s, (3 + 5) * c * s, 3 * s * s - 5 * c * c};
    CHECK(rel_err(symmetric_spectral_norm(a, 2), 5.0) < 1e-7);
    CHECK(symmetric_spectral_norm(std::vector<double>(9, 0.0), 3) == 0.0);
    CHECK_THROWS_AS(symmetric_spectral_norm(std::vector<double>(5, 0.0), 2), ShapeError);
  }

  TEST_CASE("finite differences: linear, quadratic, degenerate") {
    const std::vector<double> w{1.0, 2.0, -1.0};
    const std::vector<double> dir{0.5, -0.25, 1.0};
    const std::vector<double> g{2.0, 1.0, -3.0};
    const FlatLoss lin = [&](std::span<const double> v) { return std::inner_product(v.begin(), v.end(), g.begin(), 0.0); };
    const double dg = std::inner_product(dir.begin(), dir.end(), g.begin(), 0.0);
    CHECK(fd_directional(lin, w, dir, 0.1) == doctest::Approx(0.1 * dg).epsilon(1e-12));

    const double dd = std::inner_product(dir.begin(), dir.end(), dir.begin(), 0.0);
    const double dw = std::inner_product(dir.begin(), dir.end(), w.begin(), 0.0);
    for (double step : {1e-1, 1e-2, 1e-3}) {
      const double coeff = (fd_directional(half_sq, w, dir, step) - step * dw) / (step * step);
      CHECK(rel_err(coeff, 0.5 * dd) < 1e-6);
    }
    CHECK(fd_directional(half_sq, w, std::vector<double>(3, 0.0), 0.5) == 0.0);
    CHECK_THROWS_AS(fd_directional(half_sq, w, dir, 0.0), ValidationError);
  }

  TEST_CASE("model delta losses equal the flat-loss route at W ⊙ m") {
    const ModelSpec spec{"head", {4}, {LayerSpec::dense(4, 3)}};
    const ModelParams p = random_params(spec, 3);
    std::vector<std::uint8_t> bits(p.size(), 0);
    for (std::size_t j = 0; j < 12; j += 2) bits[j] = 1;
    for (std::size_t j = 12; j < 15; ++j) bits[j] = 1;
    const Mask m(bits);
    const Tensor x = gaussian_batch({5, 4}, 1);
    const auto y = labels_for(5, 3, 2);
    const auto ps = pspec_of(81, 6);
    const auto dlv = delta_losses(spec, p, m, x, y, ps);
    const FlatLoss direct = [&](std::span<const double> w) { return cross_entropy_loss(forward_effective(spec, w, x), y); };
    CHECK(dlv == delta_losses(direct, effective_weights(p, m), ps, m.bits()));
  }
}
