#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "zorn/probes.hpp"

namespace zorn {

// (L-, L+) for one perturbation; the only per-probe data ranks exchange.
struct LossPair {
  double minus = 0.0;
  double plus = 0.0;
};

enum class EstimatorKind : std::uint8_t { kFd = 0, kCd = 1, kFdAntithetic = 2 };

// How theta is returned to its pre-probe value between evaluations.
//   kInPlace: the +e / -2e / +e walk; memory-faithful, restores within a
//             few ulp of float drift per entry.
//   kExact:   one clean copy is kept and copied back; bit-exact restore.
// Distributed/sequential bit-equivalence and multi-threaded evaluation
// require kExact semantics (every perturbation then starts from clean
// theta regardless of evaluation order).
enum class RestoreMode : std::uint8_t { kInPlace = 0, kExact = 1 };

const char* to_string(RestoreMode m);
RestoreMode restore_mode_from_string(const std::string& s);

// Hyperparameters of one optimizer step. eta < 0 means tied to epsilon
// (the default update rule), under which epsilon cancels out of the
// update arithmetic entirely.
struct StepConfig {
  double epsilon = 1e-2;
  double eta = -1.0;
  std::size_t n_pert = 1;
  Distribution distribution = Distribution::kRademacher;
  EstimatorKind estimator = EstimatorKind::kCd;
  std::uint64_t base_seed = 0;
  std::size_t chunk_size = kDefaultChunkSize;
  RestoreMode restore = RestoreMode::kInPlace;
  unsigned threads = 1;

  double resolved_eta() const { return eta < 0.0 ? epsilon : eta; }
  void validate() const;
};

// Seed of perturbation i within a step.
inline std::uint64_t probe_seed(std::uint64_t base_seed, std::size_t i) {
  return derive_seed(base_seed, i);
}

// Evaluation contract for a black-box objective: a parameter point that
// probes mutate, with a deterministic scalar loss. Repeated eval() at the
// same point is bit-identical.
class BlackBoxLoss {
 public:
  virtual ~BlackBoxLoss() = default;
  virtual std::size_t dim() const = 0;
  virtual double eval() = 0;
  // theta += alpha * probe(spec), chunked
  virtual void apply_probe(double alpha, const ProbeSpec& spec) = 0;
  // theta += sum_i alphas[i] * probe(specs[i]); returns update norm^2
  virtual double apply_probe_batch(std::span<const double> alphas,
                                   std::span<const ProbeSpec> specs) = 0;
  virtual void snapshot() = 0;
  virtual void restore() = 0;
  // Independent copy (own theta) for concurrent evaluation.
  virtual std::unique_ptr<BlackBoxLoss> clone() const = 0;
};

// Dense float64 objective over an owned vector; the carrier for synthetic
// losses (quadratics, Ackley) in tests and diagnostics.
class VectorLoss final : public BlackBoxLoss {
 public:
  using Fn = std::function<double(std::span<const double>)>;

  VectorLoss(std::vector<double> theta, Fn fn, std::size_t chunk = kDefaultChunkSize)
      : theta_(std::move(theta)), fn_(std::move(fn)), chunk_(chunk) {}

  std::size_t dim() const override { return theta_.size(); }
  double eval() override { return fn_(theta_); }
  void apply_probe(double alpha, const ProbeSpec& spec) override {
    zorn::apply_probe(std::span<double>(theta_), alpha, spec, chunk_);
  }
  double apply_probe_batch(std::span<const double> alphas,
                           std::span<const ProbeSpec> specs) override;
  void snapshot() override { saved_ = theta_; }
  void restore() override { theta_ = saved_; }
  std::unique_ptr<BlackBoxLoss> clone() const override {
    return std::make_unique<VectorLoss>(theta_, fn_, chunk_);
  }

  std::span<const double> theta() const { return theta_; }
  std::span<double> theta() { return theta_; }

 private:
  std::vector<double> theta_;
  std::vector<double> saved_;
  Fn fn_;
  std::size_t chunk_;
};

// --- directional-derivative estimators -----------------------------------
//
// Each returns the scalar coefficient of the probe direction; the gradient
// estimate is coefficient * p. All evaluate through the same apply_probe
// walks so that estimators sharing a spec see identical perturbed points.

// (L(theta + e p) - L(theta)) / e. The clean loss is passed in so one
// clean query can be reused across probes.
double fd_rge(BlackBoxLoss& loss, const ProbeSpec& spec, double clean_loss,
              RestoreMode restore = RestoreMode::kInPlace);

// (L(theta + e p) - L(theta - e p)) / (2 e), via the +e / -2e / +e walk.
// Unbiased to O(e^2) under symmetric probes.
double cd_rge(BlackBoxLoss& loss, const ProbeSpec& spec,
              RestoreMode restore = RestoreMode::kInPlace);

// Averaged forward differences at +p and -p against the clean loss;
// algebraically identical to cd_rge.
double fd_antithetic(BlackBoxLoss& loss, const ProbeSpec& spec, double clean_loss,
                     RestoreMode restore = RestoreMode::kInPlace);

// Both losses of one central pair (used by the step loop and workers).
LossPair cd_pair(BlackBoxLoss& loss, const ProbeSpec& spec, RestoreMode restore);

// --- optimizer step -------------------------------------------------------

struct StepReport {
  std::vector<std::uint64_t> seeds;
  std::vector<LossPair> pairs;
  std::vector<double> alphas;
  double mean_loss = 0.0;    // mean of (L- + L+)/2 across pairs
  double update_norm = 0.0;  // L2 norm of the applied parameter change
  bool aborted = false;

  std::size_t queries() const { return 2 * pairs.size(); }
};

// One central-difference step:
//   theta <- theta - sum_i alpha_i p_i,
//   alpha_i = (eta/epsilon) (L+_i - L-_i) / (2 n_pert),
// pairs evaluated with seeds probe_seed(base_seed, i) and the update
// applied in ascending i. With eta = epsilon the ratio is exactly 1 and
// epsilon drops out of the update arithmetic. A non-finite loss aborts the
// step with theta restored to its pre-step state.
StepReport cdrge_step(BlackBoxLoss& loss, const StepConfig& cfg);

// Same step over an explicit flat seed list (cfg.base_seed ignored);
// the distributed path shares this so sequential and gathered runs use
// identical seed orders. seeds.size() must equal cfg.n_pert.
StepReport cdrge_step_with_seeds(BlackBoxLoss& loss, const StepConfig& cfg,
                                 std::span<const std::uint64_t> seeds);

// Forward-difference variant (one clean query reused across probes):
//   alpha_i = (eta/epsilon) (L+_i - L0) / n_pert.
StepReport fdrge_step(BlackBoxLoss& loss, const StepConfig& cfg);

// Materialized full-vector estimate sum_i coeff_i p_i / n_pert (float64).
// Diagnostic/test helper; O(n_pert * d) work.
std::vector<double> estimate_gradient(BlackBoxLoss& loss, const StepConfig& cfg);

// Sample variance (trace of covariance) of the full-vector CD estimate
// across trials with the given per-trial base seeds.
double variance_probe(BlackBoxLoss& loss, const StepConfig& cfg,
                      std::span<const std::uint64_t> trial_seeds);
double variance_probe(BlackBoxLoss& loss, const StepConfig& cfg, std::size_t trials);

// --- smoothed surrogate ----------------------------------------------------

struct SmoothedEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t n_used = 0;
  std::size_t n_excluded = 0;
};

// Monte Carlo estimate of the smoothed surrogate L_e(theta) =
// E_p[L(theta + e p)] over n_samples seeded probes. Non-finite samples are
// excluded and counted; more than 1% excluded is an error.
SmoothedEstimate smoothed_loss(BlackBoxLoss& loss, double epsilon,
                               Distribution distribution, std::size_t n_samples,
                               std::uint64_t seed);

// --- classical test functions ----------------------------------------------

// Ackley with a = 20, b = 0.2, c = 2*pi; global minimum 0 at the origin.
double ackley(std::span<const double> x);

// Convex quadratic 0.5 x'Ax + b'x with seeded SPD A, plus its analytic
// gradient; the workhorse oracle for estimator properties.
struct Quadratic {
  std::vector<double> a;  // d x d, row-major, symmetric positive definite
  std::vector<double> b;
  std::size_t d = 0;

  static Quadratic random(std::size_t d, std::uint64_t seed);
  static Quadratic sphere(std::size_t d);  // 0.5 ||x||^2
  double value(std::span<const double> x) const;
  std::vector<double> gradient(std::span<const double> x) const;
  VectorLoss::Fn fn() const;
};

double rosenbrock(std::span<const double> x);

}  // namespace zorn
