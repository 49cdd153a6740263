#include <doctest.h>

#include <cmath>
#include <cstring>
#include <initializer_list>
#include <limits>

#include "zorn/error.hpp"
#include "zorn/zoo.hpp"

using namespace zorn;

namespace {

// Smallest seed whose Rademacher probe starts with the requested signs.
std::uint64_t seed_with_signs(std::initializer_list<int> signs) {
  for (std::uint64_t s = 0;; ++s) {
    const ProbeSpec spec{s, Distribution::kRademacher, 1.0};
    bool ok = true;
    std::uint64_t i = 0;
    for (const int want : signs) {
      if (static_cast<int>(probe_entry(spec, i++)) != want) {
        ok = false;
        break;
      }
    }
    if (ok) return s;
  }
}

VectorLoss half_norm_sq(std::vector<double> theta) {
  return VectorLoss(std::move(theta), [](std::span<const double> x) {
    double s = 0.0;
    for (const double v : x) s += v * v;
    return 0.5 * s;
  });
}

}  // namespace

TEST_CASE("fd_rge on the half-norm quadratic reproduces the closed form") {
  // L = 0.5||theta||^2 at (1, 0), p = (1, 1), epsilon = 0.1:
  // (L(1.1, 0.1) - L(1, 0)) / 0.1 = (0.61 - 0.5) / 0.1 = 1.1
  VectorLoss loss = half_norm_sq({1.0, 0.0});
  const ProbeSpec spec{seed_with_signs({+1, +1}), Distribution::kRademacher, 0.1};
  const double clean = loss.eval();
  CHECK(fd_rge(loss, spec, clean) == doctest::Approx(1.1).epsilon(1e-12));
  // theta restored
  CHECK(loss.theta()[0] == doctest::Approx(1.0));
}

TEST_CASE("fd_rge bias shrinks linearly in epsilon") {
  // true directional derivative at (1,0) along (1,1) is 1.0; FD bias is
  // epsilon * ||p||^2 / 2 = epsilon
  VectorLoss loss = half_norm_sq({1.0, 0.0});
  const std::uint64_t seed = seed_with_signs({+1, +1});
  const double clean = loss.eval();
  const double err1 =
      std::abs(fd_rge(loss, {seed, Distribution::kRademacher, 0.1}, clean) - 1.0);
  const double err2 =
      std::abs(fd_rge(loss, {seed, Distribution::kRademacher, 0.05}, clean) - 1.0);
  CHECK(err1 / err2 == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("fd_rge of a constant loss is zero") {
  VectorLoss loss({0.3, -0.7}, [](std::span<const double>) { return 4.2; });
  const double clean = loss.eval();
  CHECK(fd_rge(loss, {9, Distribution::kRademacher, 0.1}, clean) == 0.0);
}

TEST_CASE("cd_rge is exact on quadratics") {
  VectorLoss loss = half_norm_sq({1.0, 0.0});
  const ProbeSpec spec{seed_with_signs({+1, +1}), Distribution::kRademacher, 0.1};
  CHECK(cd_rge(loss, spec) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("cd_rge bias on an odd cubic is epsilon squared") {
  // L = x^3 at 0 with p = +1: (e^3 - (-e)^3) / 2e = e^2
  auto cubic = [](std::span<const double> x) { return x[0] * x[0] * x[0]; };
  const std::uint64_t seed = seed_with_signs({+1});
  for (const double eps : {0.5, 0.1, 0.01}) {
    VectorLoss loss({0.0}, cubic);
    CHECK(cd_rge(loss, {seed, Distribution::kRademacher, eps}) ==
          doctest::Approx(eps * eps).epsilon(1e-9));
  }
}

TEST_CASE("cd_rge vanishes when the loss is symmetric about theta") {
  VectorLoss loss({0.0, 0.0}, [](std::span<const double> x) {
    return std::abs(x[0]) + x[1] * x[1];
  });
  CHECK(cd_rge(loss, {3, Distribution::kRademacher, 0.25}) == 0.0);
}

TEST_CASE("fd_antithetic equals cd_rge") {
  RngStream rng(1000);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 1 + rng.next_u64() % 6;
    const Quadratic q = Quadratic::random(d, rng.next_u64());
    std::vector<double> theta(d);
    for (auto& v : theta) v = 2.0 * rng.next_unit() - 1.0;
    VectorLoss loss(theta, q.fn());
    const ProbeSpec spec{rng.next_u64(), Distribution::kRademacher,
                         1e-4 + rng.next_unit()};
    const double clean = loss.eval();
    const double cd = cd_rge(loss, spec);
    const double fdas = fd_antithetic(loss, spec, clean);
    CHECK(std::abs(fdas - cd) <=
          1e-6 * std::max({1.0, std::abs(fdas), std::abs(cd)}));
  }
  // constant loss: both zero
  VectorLoss constant({1.0}, [](std::span<const double>) { return 2.0; });
  CHECK(fd_antithetic(constant, {5, Distribution::kRademacher, 0.3},
                      constant.eval()) == 0.0);
}

TEST_CASE("estimators raise DivergenceError on non-finite losses") {
  VectorLoss loss({1.0}, [](std::span<const double> x) {
    return x[0] > 1.05 ? std::numeric_limits<double>::infinity() : x[0];
  });
  CHECK_THROWS_AS(cd_rge(loss, {seed_with_signs({+1}),
                                Distribution::kRademacher, 0.1}),
                  DivergenceError);
}

TEST_CASE("cdrge_step reproduces the scalar hand example") {
  // L = 0.5 theta^2, theta = 1, epsilon = eta = 0.5, n_pert = 1, p = +1:
  // L+ = 1.125, L- = 0.125, theta' = 1 - (1.125 - 0.125)/2 = 0.5
  VectorLoss loss = half_norm_sq({1.0});
  StepConfig cfg;
  cfg.epsilon = 0.5;
  cfg.n_pert = 1;
  cfg.base_seed = 0;
  // find a base seed whose derived probe seed gives p = +1 at index 0
  while (probe_entry({probe_seed(cfg.base_seed, 0), Distribution::kRademacher,
                      1.0}, 0) < 0) {
    ++cfg.base_seed;
  }
  const StepReport report = cdrge_step(loss, cfg);
  CHECK(report.pairs.size() == 1);
  CHECK(report.pairs[0].plus == doctest::Approx(1.125));
  CHECK(report.pairs[0].minus == doctest::Approx(0.125));
  CHECK(loss.theta()[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(report.update_norm == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(report.mean_loss == doctest::Approx(0.625));
}

TEST_CASE("cdrge_step leaves theta unchanged under a constant loss") {
  VectorLoss loss({0.25, -0.5, 0.125},
                  [](std::span<const double>) { return 1.0; });
  StepConfig cfg;
  cfg.epsilon = 0.1;
  cfg.n_pert = 4;
  const StepReport report = cdrge_step(loss, cfg);
  CHECK(!report.aborted);
  CHECK(loss.theta()[0] == 0.25);
  CHECK(loss.theta()[1] == -0.5);
  CHECK(loss.theta()[2] == 0.125);
  CHECK(report.update_norm == 0.0);
}

TEST_CASE("mean CD estimate approaches the analytic gradient") {
  const std::size_t d = 10;
  const Quadratic q = Quadratic::random(d, 21);
  std::vector<double> theta(d, 0.4);
  VectorLoss loss(theta, q.fn());
  const auto grad = q.gradient(theta);
  StepConfig cfg;
  cfg.epsilon = 1e-3;
  cfg.n_pert = 10000;
  cfg.base_seed = 77;
  const auto est = estimate_gradient(loss, cfg);
  double num = 0.0, den = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    num += (est[j] - grad[j]) * (est[j] - grad[j]);
    den += grad[j] * grad[j];
  }
  CHECK(std::sqrt(num / den) < 0.05);
}

TEST_CASE("estimate error decreases monotonically in n_pert") {
  const std::size_t d = 12;
  const Quadratic q = Quadratic::random(d, 5);
  std::vector<double> theta(d, -0.2);
  VectorLoss loss(theta, q.fn());
  const auto grad = q.gradient(theta);
  StepConfig cfg;
  cfg.epsilon = 1e-3;
  cfg.base_seed = 31;
  double previous = std::numeric_limits<double>::infinity();
  for (const std::size_t n : {8u, 64u, 512u}) {
    cfg.n_pert = n;
    const auto est = estimate_gradient(loss, cfg);
    double err = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      err += (est[j] - grad[j]) * (est[j] - grad[j]);
    }
    err = std::sqrt(err);
    CHECK(err < previous);
    previous = err;
  }
}

TEST_CASE("with tied eta the update equals -(1/2n) sum (L+ - L-) p") {
  VectorLoss loss = half_norm_sq({0.8, -0.3, 0.1});
  StepConfig cfg;
  cfg.epsilon = 0.05;  // eta defaults to epsilon
  cfg.n_pert = 4;
  cfg.base_seed = 9;
  const auto before = std::vector<double>(loss.theta().begin(), loss.theta().end());
  const StepReport report = cdrge_step(loss, cfg);
  // reconstruct the Eq-style update without any epsilon in the arithmetic
  std::vector<double> expect = before;
  for (std::size_t i = 0; i < cfg.n_pert; ++i) {
    const double alpha =
        (report.pairs[i].plus - report.pairs[i].minus) / (2.0 * cfg.n_pert);
    const ProbeSpec spec{report.seeds[i], cfg.distribution, cfg.epsilon};
    for (std::size_t j = 0; j < expect.size(); ++j) {
      expect[j] -= alpha * probe_entry(spec, j);
    }
    CHECK(report.alphas[i] == alpha);
  }
  for (std::size_t j = 0; j < expect.size(); ++j) {
    CHECK(loss.theta()[j] == doctest::Approx(expect[j]).epsilon(1e-12));
  }
}

TEST_CASE("cdrge_step is deterministic") {
  const Quadratic q = Quadratic::random(6, 3);
  StepConfig cfg;
  cfg.epsilon = 0.01;
  cfg.n_pert = 16;
  cfg.base_seed = 1;
  VectorLoss a({0.1, 0.2, 0.3, 0.4, 0.5, 0.6}, q.fn());
  VectorLoss b({0.1, 0.2, 0.3, 0.4, 0.5, 0.6}, q.fn());
  (void)cdrge_step(a, cfg);
  (void)cdrge_step(b, cfg);
  CHECK(std::memcmp(a.theta().data(), b.theta().data(), 6 * sizeof(double)) == 0);
}

TEST_CASE("threaded evaluation matches sequential exact-restore bitwise") {
  const Quadratic q = Quadratic::random(8, 13);
  std::vector<double> theta(8, 0.3);
  StepConfig cfg;
  cfg.epsilon = 0.02;
  cfg.n_pert = 12;
  cfg.base_seed = 5;
  cfg.restore = RestoreMode::kExact;
  VectorLoss seq(theta, q.fn());
  (void)cdrge_step(seq, cfg);
  cfg.threads = 4;
  VectorLoss par(theta, q.fn());
  (void)cdrge_step(par, cfg);
  CHECK(std::memcmp(seq.theta().data(), par.theta().data(),
                    theta.size() * sizeof(double)) == 0);
}

TEST_CASE("a diverging loss aborts the step and restores theta") {
  int calls = 0;
  VectorLoss loss({1.0, 1.0}, [&calls](std::span<const double> x) {
    ++calls;
    if (calls > 3) return std::numeric_limits<double>::quiet_NaN();
    return x[0] + x[1];
  });
  StepConfig cfg;
  cfg.epsilon = 0.125;
  cfg.n_pert = 4;
  cfg.restore = RestoreMode::kExact;
  const StepReport report = cdrge_step(loss, cfg);
  CHECK(report.aborted);
  CHECK(loss.theta()[0] == 1.0);
  CHECK(loss.theta()[1] == 1.0);

  // in-place mode unwinds within float drift of the start
  calls = 0;
  VectorLoss loss2({1.0, 1.0}, [&calls](std::span<const double> x) {
    ++calls;
    if (calls > 3) return std::numeric_limits<double>::quiet_NaN();
    return x[0] + x[1];
  });
  cfg.restore = RestoreMode::kInPlace;
  const StepReport report2 = cdrge_step(loss2, cfg);
  CHECK(report2.aborted);
  CHECK(loss2.theta()[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("step config validation") {
  StepConfig cfg;
  cfg.epsilon = 0.0;
  CHECK_THROWS_AS(cfg.validate(), InputError);
  cfg.epsilon = 0.1;
  cfg.n_pert = 0;
  CHECK_THROWS_AS(cfg.validate(), InputError);
  cfg.n_pert = 1;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.resolved_eta() == 0.1);  // eta ties to epsilon by default
  cfg.eta = 0.4;
  CHECK(cfg.resolved_eta() == 0.4);
}

TEST_CASE("fdrge_step reuses one clean query") {
  int calls = 0;
  VectorLoss loss({1.0, -1.0}, [&calls](std::span<const double> x) {
    ++calls;
    double s = 0.0;
    for (const double v : x) s += v * v;
    return 0.5 * s;
  });
  StepConfig cfg;
  cfg.epsilon = 0.1;
  cfg.n_pert = 8;
  (void)fdrge_step(loss, cfg);
  CHECK(calls == 9);  // n_pert + 1 queries
}

TEST_CASE("smoothed loss approaches the plain loss as epsilon shrinks") {
  VectorLoss loss(std::vector<double>(4, 0.3), ackley);
  const double plain = loss.eval();
  const auto est =
      smoothed_loss(loss, 1e-5, Distribution::kRademacher, 2000, 8);
  CHECK(std::abs(est.mean - plain) < 1e-4);
}

TEST_CASE("smoothing a linear loss changes nothing") {
  // zero-mean probes: E L(theta + e p) = L(theta) for linear L
  std::vector<double> a = {0.3, -1.2, 2.0};
  VectorLoss loss({1.0, 2.0, 3.0}, [a](std::span<const double> x) {
    double s = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) s += a[j] * x[j];
    return s;
  });
  const double plain = loss.eval();
  for (const auto dist : {Distribution::kRademacher, Distribution::kNormal}) {
    const auto est = smoothed_loss(loss, 0.7, dist, 40000, 99);
    CHECK(std::abs(est.mean - plain) < 5.0 * est.std_error + 1e-9);
  }
  // Rademacher smoothing of a linear loss is exact, not just unbiased
  const auto rad = smoothed_loss(loss, 0.7, Distribution::kRademacher, 4000, 7);
  CHECK(rad.mean == doctest::Approx(plain).epsilon(1e-12));
}

TEST_CASE("smoothed loss excludes non-finite samples and errors past 1%") {
  int calls = 0;
  VectorLoss loss({0.0}, [&calls](std::span<const double>) {
    ++calls;
    return calls % 2 == 0 ? std::numeric_limits<double>::quiet_NaN() : 1.0;
  });
  CHECK_THROWS_AS(
      smoothed_loss(loss, 0.1, Distribution::kRademacher, 100, 1),
      DivergenceError);
}

TEST_CASE("ackley fixed values and nonnegativity") {
  const std::vector<double> zero(7, 0.0);
  CHECK(std::abs(ackley(zero)) < 4.44e-15);
  const std::vector<double> ones{1.0, 1.0};
  // direct formula evaluation: -20 exp(-0.2) - e + 20 + e
  const double expect = -20.0 * std::exp(-0.2) + 20.0;
  CHECK(ackley(ones) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(ackley(ones) == doctest::Approx(3.6254).epsilon(1e-4));
  RngStream rng(2);
  for (int i = 0; i < 10000; ++i) {
    std::vector<double> x(3);
    for (auto& v : x) v = 10.0 * (2.0 * rng.next_unit() - 1.0);
    CHECK(ackley(x) >= 0.0);
  }
}

TEST_CASE("variance probe: identical trial seeds give zero variance") {
  const Quadratic q = Quadratic::random(5, 8);
  VectorLoss loss(std::vector<double>(5, 0.2), q.fn());
  StepConfig cfg;
  cfg.epsilon = 1e-3;
  cfg.n_pert = 10;
  const std::uint64_t seeds[] = {42, 42};
  CHECK(variance_probe(loss, cfg, seeds) == 0.0);
}

TEST_CASE("variance halves (about) when n_pert doubles") {
  const Quadratic q = Quadratic::random(20, 88);
  VectorLoss loss(std::vector<double>(20, 0.1), q.fn());
  StepConfig cfg;
  cfg.epsilon = 1e-3;
  cfg.base_seed = 4;
  cfg.n_pert = 50;
  const double v1 = variance_probe(loss, cfg, std::size_t{150});
  cfg.n_pert = 100;
  const double v2 = variance_probe(loss, cfg, std::size_t{150});
  const double ratio = v1 / v2;
  CHECK(ratio > 2.0 / 1.5);
  CHECK(ratio < 2.0 * 1.5);
}

TEST_CASE("cd bias shrinks about 4x when epsilon halves on a cubic") {
  auto cubic = [](std::span<const double> x) { return x[0] * x[0] * x[0]; };
  const std::uint64_t seed = seed_with_signs({+1});
  VectorLoss loss({1.0}, cubic);
  auto bias = [&](double e) {
    return std::abs(cd_rge(loss, {seed, Distribution::kRademacher, e}) - 3.0);
  };
  CHECK(bias(0.02) / bias(0.01) == doctest::Approx(4.0).epsilon(0.15));
}

TEST_CASE("rosenbrock sanity") {
  const std::vector<double> minimum{1.0, 1.0, 1.0};
  CHECK(rosenbrock(minimum) == 0.0);
  CHECK(rosenbrock(std::vector<double>{0.0, 0.0}) == 1.0);
}
