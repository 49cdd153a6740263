#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "zorn/models.hpp"
#include "zorn/tasks.hpp"

namespace zorn {

// Decoupled-weight-decay Adam. Defaults follow the training recipe used
// for the BPTT comparisons: beta = (0.99, 0.999), weight decay 0.1.
struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.99;
  double beta2 = 0.999;
  double weight_decay = 0.1;
  double eps = 1e-8;
  bool clip = true;        // global-norm gradient clipping
  double clip_norm = 1.0;
};

struct AdamWState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t t = 0;

  explicit AdamWState(std::size_t dim) : m(dim, 0.0), v(dim, 0.0) {}
};

void adamw_step(std::span<double> params, std::span<const double> grad,
                AdamWState& state, const AdamWConfig& cfg);

// Scales grad to global L2 norm clip_norm when it exceeds it; returns the
// pre-clip norm.
double clip_global_norm(std::span<double> grad, double clip_norm);

// Float64 twin of the forward pass over the same flat layout; the
// function whose exact gradient bptt_grad computes. theta64.size() must
// equal param_count(cfg).
double forward_loss_f64(const LstmConfig& cfg, std::span<const double> theta64,
                        const TaskBatch& batch);

struct BpttResult {
  std::vector<double> grad;  // same flat layout as theta
  double loss = 0.0;
};

// Exact gradient of forward_loss_f64 via a reverse sweep over a per-step
// activation tape (memory grows linearly with sequence length, the cost
// this pays that the forward-only path does not).
BpttResult bptt_grad(const LstmConfig& cfg, std::span<const double> theta64,
                     const TaskBatch& batch);

// Convenience over float32 parameters: widens to float64, differentiates
// the widened model.
BpttResult bptt_grad(const LstmParams& params, const TaskBatch& batch);

// BPTT + AdamW trainer holding a float64 master copy of theta.
class BpttTrainer {
 public:
  BpttTrainer(const LstmConfig& cfg, const AdamWConfig& adamw,
              std::uint64_t init_seed);

  // One optimizer step on the batch; returns the (pre-update) loss.
  // Non-finite loss marks the trainer diverged and leaves theta unchanged.
  double step(const TaskBatch& batch);

  bool diverged() const { return diverged_; }
  double last_grad_norm() const { return last_grad_norm_; }
  const LstmConfig& config() const { return cfg_; }
  std::span<const double> master() const { return theta_; }
  AdamWState& opt_state() { return state_; }

  // Float32 snapshot for evaluation and checkpoints.
  LstmParams snapshot() const;
  // Restore from a checkpointed snapshot (widened) plus optimizer state.
  void load(const LstmParams& params, const AdamWState* state);

 private:
  LstmConfig cfg_;
  AdamWConfig adamw_;
  std::vector<double> theta_;
  AdamWState state_;
  bool diverged_ = false;
  double last_grad_norm_ = 0.0;
};

struct BpttTrainResult {
  std::vector<double> train_loss;  // per step, up to divergence
  LstmParams params;
  bool diverged = false;
};

// Deterministic training loop: steps batches from the source in order.
// steps = 0 records only the initial loss.
BpttTrainResult bptt_train(const LstmConfig& cfg, const AdamWConfig& adamw,
                           BatchSource& source, std::size_t steps,
                           std::uint64_t init_seed);

// AdamW state sidecar so BPTT runs can resume bit-exactly. Layout: magic
// "ZORNA", little-endian u64 step count and dimension, then m and v as
// little-endian float64.
void save_opt_state(const std::string& path, const AdamWState& state);
AdamWState load_opt_state(const std::string& path);

}  // namespace zorn
