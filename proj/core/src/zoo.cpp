#include "zorn/zoo.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <thread>

#include "zorn/error.hpp"

namespace zorn {

const char* to_string(RestoreMode m) {
  return m == RestoreMode::kInPlace ? "inplace" : "exact";
}

RestoreMode restore_mode_from_string(const std::string& s) {
  if (s == "inplace") return RestoreMode::kInPlace;
  if (s == "exact") return RestoreMode::kExact;
  throw InputError("unknown restore mode: " + s);
}

void StepConfig::validate() const {
  if (!(epsilon > 0.0)) throw InputError("StepConfig: epsilon must be > 0");
  if (!(resolved_eta() > 0.0)) throw InputError("StepConfig: eta must be > 0");
  if (n_pert < 1) throw InputError("StepConfig: n_pert must be >= 1");
  if (chunk_size == 0) throw InputError("StepConfig: chunk_size must be > 0");
}

double VectorLoss::apply_probe_batch(std::span<const double> alphas,
                                     std::span<const ProbeSpec> specs) {
  return zorn::apply_probe_batch(std::span<double>(theta_), alphas, specs, chunk_);
}

namespace {

void check_finite(double v, const char* what, const ProbeSpec& spec) {
  if (!std::isfinite(v)) {
    throw DivergenceError(std::string("non-finite loss at ") + what +
                          " perturbation, probe seed " + std::to_string(spec.seed) +
                          ", epsilon " + std::to_string(spec.epsilon));
  }
}

}  // namespace

double fd_rge(BlackBoxLoss& loss, const ProbeSpec& spec, double clean_loss,
              RestoreMode restore) {
  if (!(spec.epsilon > 0.0)) throw InputError("fd_rge: epsilon must be > 0");
  if (restore == RestoreMode::kExact) loss.snapshot();
  loss.apply_probe(spec.epsilon, spec);
  const double plus = loss.eval();
  if (restore == RestoreMode::kExact) {
    loss.restore();
  } else {
    loss.apply_probe(-spec.epsilon, spec);
  }
  check_finite(plus, "+e", spec);
  return (plus - clean_loss) / spec.epsilon;
}

LossPair cd_pair(BlackBoxLoss& loss, const ProbeSpec& spec, RestoreMode restore) {
  if (!(spec.epsilon > 0.0)) throw InputError("cd_pair: epsilon must be > 0");
  // Unevaluated slots stay NaN so callers can distinguish them; this
  // function restores theta and reports, it never throws on divergence.
  LossPair pair{std::numeric_limits<double>::quiet_NaN(),
                std::numeric_limits<double>::quiet_NaN()};
  if (restore == RestoreMode::kExact) {
    loss.snapshot();
    loss.apply_probe(spec.epsilon, spec);
    pair.plus = loss.eval();
    if (std::isfinite(pair.plus)) {
      loss.apply_probe(-2.0 * spec.epsilon, spec);
      pair.minus = loss.eval();
    }
    loss.restore();
  } else {
    loss.apply_probe(spec.epsilon, spec);
    pair.plus = loss.eval();
    if (!std::isfinite(pair.plus)) {
      loss.apply_probe(-spec.epsilon, spec);
      return pair;
    }
    loss.apply_probe(-2.0 * spec.epsilon, spec);
    pair.minus = loss.eval();
    loss.apply_probe(spec.epsilon, spec);
  }
  return pair;
}

double cd_rge(BlackBoxLoss& loss, const ProbeSpec& spec, RestoreMode restore) {
  const LossPair pair = cd_pair(loss, spec, restore);
  check_finite(pair.plus, "+e", spec);
  check_finite(pair.minus, "-e", spec);
  return (pair.plus - pair.minus) / (2.0 * spec.epsilon);
}

double fd_antithetic(BlackBoxLoss& loss, const ProbeSpec& spec, double clean_loss,
                     RestoreMode restore) {
  const LossPair pair = cd_pair(loss, spec, restore);
  check_finite(pair.plus, "+e", spec);
  check_finite(pair.minus, "-e", spec);
  const double fwd = (pair.plus - clean_loss) / spec.epsilon;
  const double bwd = (pair.minus - clean_loss) / spec.epsilon;
  return 0.5 * (fwd - bwd);
}

namespace {

std::vector<ProbeSpec> specs_from_seeds(const StepConfig& cfg,
                                        std::span<const std::uint64_t> seeds) {
  std::vector<ProbeSpec> specs(seeds.size());
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    specs[i] = ProbeSpec{seeds[i], cfg.distribution, cfg.epsilon};
  }
  return specs;
}

std::vector<ProbeSpec> step_specs(const StepConfig& cfg) {
  std::vector<ProbeSpec> specs(cfg.n_pert);
  for (std::size_t i = 0; i < cfg.n_pert; ++i) {
    specs[i] = ProbeSpec{probe_seed(cfg.base_seed, i), cfg.distribution,
                         cfg.epsilon};
  }
  return specs;
}

// Evaluates all pairs; sequential when threads <= 1, otherwise each worker
// thread runs on its own clone of the loss (exact-restore semantics), with
// results identical to a sequential exact-restore evaluation.
bool eval_pairs(BlackBoxLoss& loss, const StepConfig& cfg,
                std::span<const ProbeSpec> specs, std::vector<LossPair>& pairs) {
  const std::size_t n = specs.size();
  pairs.resize(n);
  const unsigned threads =
      std::min<std::size_t>(cfg.threads, n) > 1 ? std::min<std::size_t>(cfg.threads, n) : 1;
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      pairs[i] = cd_pair(loss, specs[i], cfg.restore);
      if (!std::isfinite(pairs[i].plus) || !std::isfinite(pairs[i].minus)) {
        return false;
      }
    }
    return true;
  }

  std::atomic<bool> ok{true};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  const std::size_t per = (n + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t begin = t * per;
    const std::size_t end = std::min(n, begin + per);
    if (begin >= end) break;
    pool.emplace_back([&, begin, end] {
      auto local = loss.clone();
      for (std::size_t i = begin; i < end; ++i) {
        // clone starts clean each pair via exact restore
        pairs[i] = cd_pair(*local, specs[i], RestoreMode::kExact);
        if (!std::isfinite(pairs[i].plus) || !std::isfinite(pairs[i].minus)) {
          ok.store(false, std::memory_order_relaxed);
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  return ok.load();
}

StepReport make_report(const StepConfig& cfg, std::span<const ProbeSpec> specs) {
  StepReport report;
  report.seeds.reserve(cfg.n_pert);
  for (const auto& s : specs) report.seeds.push_back(s.seed);
  return report;
}

}  // namespace

namespace {

StepReport cdrge_step_impl(BlackBoxLoss& loss, const StepConfig& cfg,
                           const std::vector<ProbeSpec>& specs) {
  StepReport report = make_report(cfg, specs);

  if (!eval_pairs(loss, cfg, specs, report.pairs)) {
    report.aborted = true;
    return report;
  }

  const double ratio = cfg.resolved_eta() / cfg.epsilon;
  const double scale = 1.0 / (2.0 * static_cast<double>(cfg.n_pert));
  report.alphas.resize(cfg.n_pert);
  std::vector<double> neg(cfg.n_pert);
  double loss_sum = 0.0;
  for (std::size_t i = 0; i < cfg.n_pert; ++i) {
    const auto& p = report.pairs[i];
    report.alphas[i] = ratio * (p.plus - p.minus) * scale;
    neg[i] = -report.alphas[i];
    loss_sum += 0.5 * (p.plus + p.minus);
  }
  report.mean_loss = loss_sum / static_cast<double>(cfg.n_pert);
  report.update_norm = std::sqrt(loss.apply_probe_batch(neg, specs));
  return report;
}

}  // namespace

StepReport cdrge_step(BlackBoxLoss& loss, const StepConfig& cfg) {
  cfg.validate();
  return cdrge_step_impl(loss, cfg, step_specs(cfg));
}

StepReport cdrge_step_with_seeds(BlackBoxLoss& loss, const StepConfig& cfg,
                                 std::span<const std::uint64_t> seeds) {
  cfg.validate();
  if (seeds.size() != cfg.n_pert) {
    throw ShapeError("cdrge_step_with_seeds: seed count != n_pert");
  }
  return cdrge_step_impl(loss, cfg, specs_from_seeds(cfg, seeds));
}

StepReport fdrge_step(BlackBoxLoss& loss, const StepConfig& cfg) {
  cfg.validate();
  const auto specs = step_specs(cfg);
  StepReport report = make_report(cfg, specs);

  const double clean = loss.eval();
  if (!std::isfinite(clean)) {
    report.aborted = true;
    return report;
  }
  report.pairs.resize(cfg.n_pert);
  for (std::size_t i = 0; i < cfg.n_pert; ++i) {
    if (cfg.restore == RestoreMode::kExact) loss.snapshot();
    loss.apply_probe(cfg.epsilon, specs[i]);
    const double plus = loss.eval();
    if (cfg.restore == RestoreMode::kExact) {
      loss.restore();
    } else {
      loss.apply_probe(-cfg.epsilon, specs[i]);
    }
    if (!std::isfinite(plus)) {
      report.aborted = true;
      return report;
    }
    report.pairs[i] = LossPair{clean, plus};
  }

  const double ratio = cfg.resolved_eta() / cfg.epsilon;
  const double scale = 1.0 / static_cast<double>(cfg.n_pert);
  report.alphas.resize(cfg.n_pert);
  std::vector<double> neg(cfg.n_pert);
  for (std::size_t i = 0; i < cfg.n_pert; ++i) {
    report.alphas[i] = ratio * (report.pairs[i].plus - clean) * scale;
    neg[i] = -report.alphas[i];
  }
  report.mean_loss = clean;
  report.update_norm = std::sqrt(loss.apply_probe_batch(neg, specs));
  return report;
}

std::vector<double> estimate_gradient(BlackBoxLoss& loss, const StepConfig& cfg) {
  cfg.validate();
  const auto specs = step_specs(cfg);
  std::vector<double> grad(loss.dim(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(cfg.n_pert);
  const double clean =
      cfg.estimator == EstimatorKind::kCd ? 0.0 : loss.eval();
  for (const auto& spec : specs) {
    double coeff = 0.0;
    switch (cfg.estimator) {
      case EstimatorKind::kFd:
        coeff = fd_rge(loss, spec, clean, cfg.restore);
        break;
      case EstimatorKind::kCd:
        coeff = cd_rge(loss, spec, cfg.restore);
        break;
      case EstimatorKind::kFdAntithetic:
        coeff = fd_antithetic(loss, spec, clean, cfg.restore);
        break;
    }
    apply_probe(std::span<double>(grad), coeff * inv_n, spec, cfg.chunk_size);
  }
  return grad;
}

double variance_probe(BlackBoxLoss& loss, const StepConfig& cfg,
                      std::span<const std::uint64_t> trial_seeds) {
  if (trial_seeds.size() < 2) {
    throw InputError("variance_probe: need at least 2 trials");
  }
  const std::size_t d = loss.dim();
  std::vector<std::vector<double>> estimates;
  estimates.reserve(trial_seeds.size());
  for (const auto seed : trial_seeds) {
    StepConfig trial = cfg;
    trial.base_seed = seed;
    estimates.push_back(estimate_gradient(loss, trial));
  }
  std::vector<double> mean(d, 0.0);
  for (const auto& g : estimates) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += g[j];
  }
  for (auto& m : mean) m /= static_cast<double>(estimates.size());
  double ss = 0.0;
  for (const auto& g : estimates) {
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = g[j] - mean[j];
      ss += diff * diff;
    }
  }
  return ss / static_cast<double>(estimates.size() - 1);
}

double variance_probe(BlackBoxLoss& loss, const StepConfig& cfg,
                      std::size_t trials) {
  std::vector<std::uint64_t> seeds(trials);
  for (std::size_t t = 0; t < trials; ++t) {
    seeds[t] = derive_seed(cfg.base_seed, 0x7472u, t);
  }
  return variance_probe(loss, cfg, seeds);
}

SmoothedEstimate smoothed_loss(BlackBoxLoss& loss, double epsilon,
                               Distribution distribution, std::size_t n_samples,
                               std::uint64_t seed) {
  if (n_samples < 1) throw InputError("smoothed_loss: n_samples must be >= 1");
  SmoothedEstimate out;
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t s = 0; s < n_samples; ++s) {
    const ProbeSpec spec{derive_seed(seed, s), distribution, epsilon};
    loss.snapshot();
    loss.apply_probe(epsilon, spec);
    const double v = loss.eval();
    loss.restore();
    if (!std::isfinite(v)) {
      ++out.n_excluded;
      continue;
    }
    sum += v;
    sum_sq += v * v;
    ++out.n_used;
  }
  if (out.n_excluded * 100 > n_samples) {
    throw DivergenceError("smoothed_loss: more than 1% of samples non-finite (" +
                          std::to_string(out.n_excluded) + "/" +
                          std::to_string(n_samples) + ")");
  }
  const auto n = static_cast<double>(out.n_used);
  out.mean = sum / n;
  if (out.n_used > 1) {
    const double var = std::max(0.0, (sum_sq - sum * sum / n) / (n - 1.0));
    out.std_error = std::sqrt(var / n);
  }
  return out;
}

double ackley(std::span<const double> x) {
  if (x.empty()) throw InputError("ackley: dimension must be >= 1");
  constexpr double a = 20.0;
  constexpr double b = 0.2;
  constexpr double c = 2.0 * std::numbers::pi;
  const auto d = static_cast<double>(x.size());
  double sq = 0.0;
  double cs = 0.0;
  for (const double v : x) {
    sq += v * v;
    cs += std::cos(c * v);
  }
  return -a * std::exp(-b * std::sqrt(sq / d)) - std::exp(cs / d) + a +
         std::exp(1.0);
}

Quadratic Quadratic::random(std::size_t d, std::uint64_t seed) {
  Quadratic q;
  q.d = d;
  q.a.assign(d * d, 0.0);
  q.b.resize(d);
  RngStream rng(seed);
  std::vector<double> m(d * d);
  for (auto& v : m) v = 2.0 * rng.next_unit() - 1.0;
  // A = M'M / d + I: symmetric positive definite, well conditioned
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += m[k * d + i] * m[k * d + j];
      q.a[i * d + j] = s / static_cast<double>(d) + (i == j ? 1.0 : 0.0);
    }
  }
  for (auto& v : q.b) v = 2.0 * rng.next_unit() - 1.0;
  return q;
}

Quadratic Quadratic::sphere(std::size_t d) {
  Quadratic q;
  q.d = d;
  q.a.assign(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) q.a[i * d + i] = 1.0;
  q.b.assign(d, 0.0);
  return q;
}

double Quadratic::value(std::span<const double> x) const {
  double out = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    double ax = 0.0;
    for (std::size_t j = 0; j < d; ++j) ax += a[i * d + j] * x[j];
    out += 0.5 * x[i] * ax + b[i] * x[i];
  }
  return out;
}

std::vector<double> Quadratic::gradient(std::span<const double> x) const {
  std::vector<double> g(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    double ax = 0.0;
    for (std::size_t j = 0; j < d; ++j) ax += a[i * d + j] * x[j];
    g[i] = ax + b[i];
  }
  return g;
}

VectorLoss::Fn Quadratic::fn() const {
  return [q = *this](std::span<const double> x) { return q.value(x); };
}

double rosenbrock(std::span<const double> x) {
  if (x.size() < 2) throw InputError("rosenbrock: dimension must be >= 2");
  double out = 0.0;
  for (std::size_t i = 0; i + 1 < x.size(); ++i) {
    const double t1 = x[i + 1] - x[i] * x[i];
    const double t2 = 1.0 - x[i];
    out += 100.0 * t1 * t1 + t2 * t2;
  }
  return out;
}

}  // namespace zorn
