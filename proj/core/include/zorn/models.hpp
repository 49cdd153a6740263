#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "zorn/numerics.hpp"
#include "zorn/tasks.hpp"

namespace zorn {

struct LstmConfig {
  std::size_t vocab_size = 29;
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 140;
  std::size_t num_layers = 1;

  void validate() const;
  std::size_t input_dim(std::size_t layer) const {
    return layer == 0 ? embed_dim : hidden_dim;
  }
  bool operator==(const LstmConfig&) const = default;
};

// Closed-form |theta| for a config.
std::size_t param_count(const LstmConfig& cfg);

// Flat tensor layout, offsets strictly increasing and gap-free:
//   embedding            vocab x embed   (row per token)
//   per layer l:
//     w_ih.<l>           input_l x 4h    (row k = fan-out of input unit k)
//     w_hh.<l>           hidden  x 4h
//     b.<l>              4h
//   w_out                hidden x vocab
//   b_out                vocab
// Gate blocks along the 4h axis are [input | forget | cell | output].
// Weight matrices are stored input-major so the per-step kernel streams
// them with contiguous float64 accumulation in fixed ascending-k order.
std::vector<LayoutEntry> build_layout(const LstmConfig& cfg);

// LSTM parameters as a flat ParamVector plus typed views. The flat vector
// is the object optimizers mutate; views see updates immediately.
class LstmParams {
 public:
  LstmParams() = default;
  LstmParams(LstmConfig cfg, ParamVector theta);

  const LstmConfig& config() const { return cfg_; }
  ParamVector& theta() { return theta_; }
  const ParamVector& theta() const { return theta_; }
  std::size_t dim() const { return theta_.size(); }

  std::span<const float> embedding() const { return tensor(0); }
  std::span<const float> w_ih(std::size_t l) const { return tensor(1 + 3 * l); }
  std::span<const float> w_hh(std::size_t l) const { return tensor(2 + 3 * l); }
  std::span<const float> bias(std::size_t l) const { return tensor(3 + 3 * l); }
  std::span<const float> w_out() const { return tensor(1 + 3 * cfg_.num_layers); }
  std::span<const float> b_out() const { return tensor(2 + 3 * cfg_.num_layers); }

 private:
  std::span<const float> tensor(std::size_t idx) const {
    return theta_.tensor(theta_.layout[idx]);
  }
  LstmConfig cfg_;
  ParamVector theta_;
};

// Per-layer (h, c); the only state carried across time steps.
struct HiddenState {
  std::size_t hidden_dim = 0;
  std::vector<float> h;  // layers x hidden
  std::vector<float> c;

  explicit HiddenState(const LstmConfig& cfg)
      : hidden_dim(cfg.hidden_dim),
        h(cfg.num_layers * cfg.hidden_dim, 0.0f),
        c(cfg.num_layers * cfg.hidden_dim, 0.0f) {}

  std::span<float> h_layer(std::size_t l) { return {h.data() + l * hidden_dim, hidden_dim}; }
  std::span<float> c_layer(std::size_t l) { return {c.data() + l * hidden_dim, hidden_dim}; }
  void reset() {
    std::fill(h.begin(), h.end(), 0.0f);
    std::fill(c.begin(), c.end(), 0.0f);
  }
};

// Reused scratch so stepping allocates nothing.
struct LstmWorkspace {
  std::vector<double> acc;

  explicit LstmWorkspace(const LstmConfig& cfg)
      : acc(std::max(4 * cfg.hidden_dim, cfg.vocab_size)) {}
};

// One teacher-forced step: sigmoid input/forget/output gates, tanh cell
// candidate, then the output projection. Nothing is retained beyond the
// updated state. Throws InputError for out-of-range tokens.
void lstm_step_into(const LstmParams& params, HiddenState& state,
                    std::int32_t token, std::span<float> logits,
                    LstmWorkspace& ws);

// Allocating convenience wrapper.
std::vector<float> lstm_step(const LstmParams& params, HiddenState& state,
                             std::int32_t token);

// Mean cross-entropy in nats over masked positions. Per-position losses
// are float32 values summed sequentially in float64 in (batch, time)
// order (the reduce_sum_f64 contract). Live activations are one HiddenState
// plus fixed scratch regardless of sequence length.
double forward_loss(const LstmParams& params, const TaskBatch& batch);

// Allocation-free variant over caller-owned scratch.
double forward_loss(const LstmParams& params, const TaskBatch& batch,
                    HiddenState& state, LstmWorkspace& ws,
                    std::span<float> logits);

// Uniform(-k, k) with k = 1/sqrt(hidden_dim) from RngStream(seed), then
// forget-gate biases set to 1.0.
LstmParams init_params(const LstmConfig& cfg, std::uint64_t seed);

// flatten/unflatten: bijective, bit-identical round trip.
ParamVector flatten(const LstmParams& params);
LstmParams unflatten(ParamVector theta, const LstmConfig& cfg);

// Checkpoint file: magic "ZORN1", config as little-endian u32 fields
// (vocab, embed, hidden, layers), then the flat parameters as
// little-endian float32.
void save_checkpoint(const std::string& path, const LstmParams& params);
LstmParams load_checkpoint(const std::string& path);

}  // namespace zorn
