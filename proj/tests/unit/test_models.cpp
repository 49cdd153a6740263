#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>

#include "zorn/error.hpp"
#include "zorn/memtrack.hpp"
#include "zorn/models.hpp"
#include "zorn/tasks.hpp"

#include "../support/oracles.hpp"

using namespace zorn;

namespace {

LstmConfig tiny_config() {
  LstmConfig cfg;
  cfg.vocab_size = 5;
  cfg.embed_dim = 2;
  cfg.hidden_dim = 3;
  cfg.num_layers = 1;
  return cfg;
}

TaskBatch single_position_batch(std::int32_t input, std::int32_t target) {
  TaskBatch b;
  b.batch = 1;
  b.steps = 1;
  b.inputs = {input};
  b.targets = {target};
  b.mask = {1};
  b.lengths = {1};
  return b;
}

}  // namespace

TEST_CASE("parameter count matches a hand count on the tiny config") {
  // vocab 5, embed 2, hidden 3: embedding 10, w_ih 2*12, w_hh 3*12,
  // b 12, w_out 15, b_out 5 -> 102
  CHECK(param_count(tiny_config()) == 102);
}

TEST_CASE("layout offsets are strictly increasing and gap-free") {
  const auto layout = build_layout(LstmConfig{29, 32, 20, 2});
  std::size_t expect = 0;
  for (const auto& e : layout) {
    CHECK(e.offset == expect);
    CHECK(e.length > 0);
    expect = e.offset + e.length;
  }
  CHECK(expect == param_count(LstmConfig{29, 32, 20, 2}));
}

TEST_CASE("zero weights produce logits equal to the output bias") {
  const LstmConfig cfg = tiny_config();
  ParamVector theta;
  theta.values.assign(param_count(cfg), 0.0f);
  LstmParams params(cfg, std::move(theta));
  // set output bias through the layout
  auto& tv = params.theta();
  const auto& b_out = tv.layout.back();
  for (std::size_t v = 0; v < cfg.vocab_size; ++v) {
    tv.tensor(b_out)[v] = static_cast<float>(v) * 0.5f;
  }
  HiddenState state(cfg);
  const auto logits = lstm_step(params, state, 1);
  for (std::size_t v = 0; v < cfg.vocab_size; ++v) {
    CHECK(logits[v] == static_cast<float>(v) * 0.5f);
  }
  for (const float h : state.h) CHECK(h == 0.0f);
  for (const float c : state.c) CHECK(c == 0.0f);
}

TEST_CASE("saturated forget gate carries the cell through") {
  const LstmConfig cfg = tiny_config();
  ParamVector theta;
  theta.values.assign(param_count(cfg), 0.0f);
  LstmParams params(cfg, std::move(theta));
  auto& tv = params.theta();
  const auto bias = tv.tensor(tv.layout[3]);  // b.0, gate blocks [i|f|g|o]
  for (std::size_t j = 0; j < cfg.hidden_dim; ++j) {
    bias[cfg.hidden_dim + j] = 20.0f;   // forget gate wide open
    bias[j] = -20.0f;                   // input gate shut
  }
  HiddenState state(cfg);
  for (std::size_t j = 0; j < cfg.hidden_dim; ++j) {
    state.c_layer(0)[j] = 0.7f;
  }
  LstmWorkspace ws(cfg);
  std::vector<float> logits(cfg.vocab_size);
  lstm_step_into(params, state, 0, logits, ws);
  // direct gate formula: c' = sigmoid(20) * c + sigmoid(-20) * tanh(0)
  const double carried = 1.0 / (1.0 + std::exp(-20.0)) * 0.7;
  for (std::size_t j = 0; j < cfg.hidden_dim; ++j) {
    CHECK(std::abs(state.c_layer(0)[j] - carried) < 1e-6);
    CHECK(std::abs(state.c_layer(0)[j] - 0.7) < 1e-6);
  }
}

TEST_CASE("lstm_step matches the scalar float64 oracle to 1e-6 relative") {
  const LstmConfig cfg = tiny_config();
  LstmParams params = init_params(cfg, 404);
  HiddenState state(cfg);
  oracles::ScalarLstmState ref_state;
  for (const std::int32_t token : {1, 4, 0, 2, 3, 3, 1}) {
    const auto logits = lstm_step(params, state, token);
    const auto expect =
        oracles::scalar_lstm_step(cfg, params.theta().span(), ref_state, token);
    for (std::size_t v = 0; v < cfg.vocab_size; ++v) {
      const double rel = std::abs(logits[v] - expect[v]) /
                         std::max(1.0, std::abs(expect[v]));
      CHECK(rel < 1e-6);
    }
  }
}

TEST_CASE("multi-layer step matches the scalar oracle") {
  LstmConfig cfg = tiny_config();
  cfg.num_layers = 3;
  LstmParams params = init_params(cfg, 405);
  HiddenState state(cfg);
  oracles::ScalarLstmState ref_state;
  for (const std::int32_t token : {0, 2, 4}) {
    const auto logits = lstm_step(params, state, token);
    const auto expect =
        oracles::scalar_lstm_step(cfg, params.theta().span(), ref_state, token);
    for (std::size_t v = 0; v < cfg.vocab_size; ++v) {
      CHECK(std::abs(logits[v] - expect[v]) < 1e-6);
    }
  }
}

TEST_CASE("out-of-range token is rejected") {
  const LstmConfig cfg = tiny_config();
  LstmParams params = init_params(cfg, 1);
  HiddenState state(cfg);
  CHECK_THROWS_AS(lstm_step(params, state, 5), InputError);
  CHECK_THROWS_AS(lstm_step(params, state, -1), InputError);
}

TEST_CASE("uniform logits give loss ln(V)") {
  const LstmConfig cfg = tiny_config();
  ParamVector theta;
  theta.values.assign(param_count(cfg), 0.0f);  // all logits 0 -> uniform
  LstmParams params(cfg, std::move(theta));
  const TaskBatch batch = single_position_batch(1, 3);
  CHECK(forward_loss(params, batch) ==
        doctest::Approx(std::log(5.0)).epsilon(1e-9));
}

TEST_CASE("vocab-29 uniform output sits at the 3.367-nat plateau") {
  LstmConfig cfg;
  cfg.vocab_size = 29;
  cfg.embed_dim = 4;
  cfg.hidden_dim = 4;
  ParamVector theta;
  theta.values.assign(param_count(cfg), 0.0f);
  LstmParams params(cfg, std::move(theta));
  const TaskBatch batch = single_position_batch(7, 11);
  CHECK(forward_loss(params, batch) ==
        doctest::Approx(std::log(29.0)).epsilon(1e-9));
  CHECK(std::abs(forward_loss(params, batch) - 3.367) < 1e-3);
}

TEST_CASE("confidently correct logits give near-zero loss") {
  const LstmConfig cfg = tiny_config();
  ParamVector theta;
  theta.values.assign(param_count(cfg), 0.0f);
  LstmParams params(cfg, std::move(theta));
  auto& tv = params.theta();
  tv.tensor(tv.layout.back())[3] = 100.0f;  // one-hot-correct scaled by 100
  const TaskBatch batch = single_position_batch(1, 3);
  CHECK(forward_loss(params, batch) < 1e-6);
}

TEST_CASE("forward_loss rejects an empty mask") {
  const LstmConfig cfg = tiny_config();
  LstmParams params = init_params(cfg, 2);
  TaskBatch batch = single_position_batch(1, 3);
  batch.mask[0] = 0;
  CHECK_THROWS_AS(forward_loss(params, batch), InputError);
}

TEST_CASE("flatten/unflatten round-trips bit-identically") {
  const LstmConfig cfg = tiny_config();
  const LstmParams params = init_params(cfg, 31337);
  const ParamVector flat = flatten(params);
  const LstmParams back = unflatten(flat, cfg);
  CHECK(std::memcmp(back.theta().values.data(), params.theta().values.data(),
                    flat.size() * sizeof(float)) == 0);
  CHECK_THROWS_AS(unflatten(ParamVector{{1.0f, 2.0f}, {}}, cfg), ShapeError);
}

TEST_CASE("init_params is deterministic and respects its bounds") {
  LstmConfig cfg;
  cfg.vocab_size = 29;
  cfg.embed_dim = 32;
  cfg.hidden_dim = 64;
  const LstmParams a = init_params(cfg, 99);
  const LstmParams b = init_params(cfg, 99);
  CHECK(std::memcmp(a.theta().values.data(), b.theta().values.data(),
                    a.dim() * sizeof(float)) == 0);

  const float k = 1.0f / std::sqrt(64.0f);
  const auto& layout = a.theta().layout;
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t idx = 0; idx < layout.size(); ++idx) {
    const auto t = a.theta().tensor(layout[idx]);
    const bool is_gate_bias = layout[idx].name.rfind("b.", 0) == 0;
    for (std::size_t j = 0; j < t.size(); ++j) {
      if (is_gate_bias && j >= cfg.hidden_dim && j < 2 * cfg.hidden_dim) {
        CHECK(t[j] == 1.0f);  // forget-gate bias
        continue;
      }
      CHECK(std::abs(t[j]) <= k);
      sum += t[j];
      ++n;
    }
  }
  // mean of n uniform(-k, k) draws: 3 sigma = 3 * k / sqrt(3 n)
  REQUIRE(n > 100000);
  const double three_sigma = 3.0 * k / std::sqrt(3.0 * static_cast<double>(n));
  CHECK(std::abs(sum / static_cast<double>(n)) < three_sigma);
}

TEST_CASE("forward_loss is deterministic") {
  LstmConfig cfg;
  cfg.vocab_size = 29;
  cfg.hidden_dim = 24;
  const LstmParams params = init_params(cfg, 5);
  const TaskBatch batch =
      gen_transduction(TransductionTask::kCopy, 4, 2, 6, 999);
  const double a = forward_loss(params, batch);
  const double b = forward_loss(params, batch);
  CHECK(std::memcmp(&a, &b, sizeof(double)) == 0);
}

TEST_CASE("loss is invariant under padding extension") {
  LstmConfig cfg;
  cfg.vocab_size = 29;
  cfg.hidden_dim = 16;
  const LstmParams params = init_params(cfg, 6);
  TaskBatch batch = gen_transduction(TransductionTask::kReverse, 3, 2, 5, 1234);
  const double before = forward_loss(params, batch);

  // extend the padded time dimension without touching mask or lengths
  TaskBatch wide;
  wide.batch = batch.batch;
  wide.steps = batch.steps + 7;
  const auto pad = Alphabet::transduction().pad();
  wide.inputs.assign(wide.batch * wide.steps, pad);
  wide.targets.assign(wide.batch * wide.steps, pad);
  wide.mask.assign(wide.batch * wide.steps, 0);
  wide.lengths = batch.lengths;
  for (std::size_t b = 0; b < batch.batch; ++b) {
    for (std::size_t t = 0; t < batch.steps; ++t) {
      wide.inputs[b * wide.steps + t] = batch.input(b, t);
      wide.targets[b * wide.steps + t] = batch.target(b, t);
      wide.mask[b * wide.steps + t] = batch.mask[b * batch.steps + t];
    }
  }
  const double after = forward_loss(params, wide);
  CHECK(std::memcmp(&before, &after, sizeof(double)) == 0);
}

TEST_CASE("forward memory is independent of sequence length") {
  LstmConfig cfg;
  cfg.vocab_size = 29;
  cfg.hidden_dim = 48;
  const LstmParams params = init_params(cfg, 7);
  auto measure = [&](int len) {
    const TaskBatch batch =
        gen_transduction(TransductionTask::kSum, 8, len, len, 55);
    // warm-up outside the measured region
    (void)forward_loss(params, batch);
    return memtrack::measure_delta_peak([&] { (void)forward_loss(params, batch); });
  };
  const auto short_peak = measure(10);
  const auto long_peak = measure(100);
  // the live activation set is one HiddenState plus fixed scratch
  CHECK(long_peak <= short_peak + 1024);
}

TEST_CASE("checkpoints round-trip and reject corruption") {
  const std::string path = "/tmp/zorn_test_ckpt.bin";
  LstmConfig cfg;
  cfg.vocab_size = 29;
  cfg.hidden_dim = 12;
  const LstmParams params = init_params(cfg, 3);
  save_checkpoint(path, params);
  const LstmParams back = load_checkpoint(path);
  CHECK(back.config() == cfg);
  CHECK(std::memcmp(back.theta().values.data(), params.theta().values.data(),
                    params.dim() * sizeof(float)) == 0);

  // corrupt the magic
  {
    std::FILE* f = std::fopen(path.c_str(), "r+b");
    std::fputc('X', f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_checkpoint(path), ProtocolError);
  std::filesystem::remove(path);
}
