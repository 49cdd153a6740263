#include "zorn/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "zorn/error.hpp"

namespace zorn {

void LstmConfig::validate() const {
  if (vocab_size < 2) throw InputError("LstmConfig: vocab_size must be >= 2");
  if (embed_dim == 0 || hidden_dim == 0 || num_layers == 0) {
    throw InputError("LstmConfig: dimensions must be positive");
  }
}

std::size_t param_count(const LstmConfig& cfg) {
  std::size_t n = cfg.vocab_size * cfg.embed_dim;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    n += cfg.input_dim(l) * 4 * cfg.hidden_dim;  // w_ih
    n += cfg.hidden_dim * 4 * cfg.hidden_dim;    // w_hh
    n += 4 * cfg.hidden_dim;                     // b
  }
  n += cfg.hidden_dim * cfg.vocab_size + cfg.vocab_size;  // w_out, b_out
  return n;
}

std::vector<LayoutEntry> build_layout(const LstmConfig& cfg) {
  std::vector<LayoutEntry> layout;
  std::size_t off = 0;
  auto push = [&](std::string name, std::size_t len) {
    layout.push_back({std::move(name), off, len});
    off += len;
  };
  push("embedding", cfg.vocab_size * cfg.embed_dim);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::string suffix = "." + std::to_string(l);
    push("w_ih" + suffix, cfg.input_dim(l) * 4 * cfg.hidden_dim);
    push("w_hh" + suffix, cfg.hidden_dim * 4 * cfg.hidden_dim);
    push("b" + suffix, 4 * cfg.hidden_dim);
  }
  push("w_out", cfg.hidden_dim * cfg.vocab_size);
  push("b_out", cfg.vocab_size);
  return layout;
}

LstmParams::LstmParams(LstmConfig cfg, ParamVector theta)
    : cfg_(cfg), theta_(std::move(theta)) {
  cfg_.validate();
  if (theta_.size() != param_count(cfg_)) {
    throw ShapeError("LstmParams: flat length " + std::to_string(theta_.size()) +
                     " != expected " + std::to_string(param_count(cfg_)));
  }
  theta_.layout = build_layout(cfg_);
}

namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// acc[g] += sum_k in[k] * w[k][g], k ascending per element.
inline void accumulate_input_major(std::span<double> acc,
                                   std::span<const float> in,
                                   std::span<const float> w) {
  const std::size_t width = acc.size();
  for (std::size_t k = 0; k < in.size(); ++k) {
    const double v = static_cast<double>(in[k]);
    const float* row = w.data() + k * width;
    for (std::size_t g = 0; g < width; ++g) {
      acc[g] += static_cast<double>(row[g]) * v;
    }
  }
}

}  // namespace

void lstm_step_into(const LstmParams& params, HiddenState& state,
                    std::int32_t token, std::span<float> logits,
                    LstmWorkspace& ws) {
  const LstmConfig& cfg = params.config();
  const std::size_t H = cfg.hidden_dim;
  if (token < 0 || static_cast<std::size_t>(token) >= cfg.vocab_size) {
    throw InputError("lstm_step: token " + std::to_string(token) +
                     " out of range for vocab " + std::to_string(cfg.vocab_size));
  }

  std::span<const float> input =
      params.embedding().subspan(static_cast<std::size_t>(token) * cfg.embed_dim,
                                 cfg.embed_dim);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    std::span<double> acc(ws.acc.data(), 4 * H);
    const auto bias = params.bias(l);
    for (std::size_t g = 0; g < 4 * H; ++g) acc[g] = static_cast<double>(bias[g]);
    accumulate_input_major(acc, input, params.w_ih(l));
    auto h = state.h_layer(l);
    auto c = state.c_layer(l);
    accumulate_input_major(acc, h, params.w_hh(l));

    for (std::size_t j = 0; j < H; ++j) {
      const double gi = sigmoid(acc[j]);
      const double gf = sigmoid(acc[H + j]);
      const double gg = std::tanh(acc[2 * H + j]);
      const double go = sigmoid(acc[3 * H + j]);
      const float cj = static_cast<float>(gf * static_cast<double>(c[j]) + gi * gg);
      c[j] = cj;
      h[j] = static_cast<float>(go * std::tanh(static_cast<double>(cj)));
    }
    input = h;
  }

  std::span<double> acc(ws.acc.data(), cfg.vocab_size);
  const auto b_out = params.b_out();
  for (std::size_t v = 0; v < cfg.vocab_size; ++v) acc[v] = static_cast<double>(b_out[v]);
  accumulate_input_major(acc, state.h_layer(cfg.num_layers - 1), params.w_out());
  for (std::size_t v = 0; v < cfg.vocab_size; ++v) {
    logits[v] = static_cast<float>(acc[v]);
  }
}

std::vector<float> lstm_step(const LstmParams& params, HiddenState& state,
                             std::int32_t token) {
  std::vector<float> logits(params.config().vocab_size);
  LstmWorkspace ws(params.config());
  lstm_step_into(params, state, token, logits, ws);
  return logits;
}

double forward_loss(const LstmParams& params, const TaskBatch& batch) {
  HiddenState state(params.config());
  LstmWorkspace ws(params.config());
  std::vector<float> logits(params.config().vocab_size);
  return forward_loss(params, batch, state, ws, logits);
}

double forward_loss(const LstmParams& params, const TaskBatch& batch,
                    HiddenState& state, LstmWorkspace& ws,
                    std::span<float> logits) {
  const LstmConfig& cfg = params.config();
  if (batch.batch == 0 || batch.masked_count() == 0) {
    throw InputError("forward_loss: batch has no masked positions");
  }

  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t b = 0; b < batch.batch; ++b) {
    state.reset();
    const auto len = static_cast<std::size_t>(batch.lengths[b]);
    for (std::size_t t = 0; t < len; ++t) {
      lstm_step_into(params, state, batch.input(b, t), logits, ws);
      if (!batch.masked(b, t)) continue;
      const std::int32_t target = batch.target(b, t);
      if (target < 0 || static_cast<std::size_t>(target) >= cfg.vocab_size) {
        throw InputError("forward_loss: target out of range");
      }
      double mx = static_cast<double>(logits[0]);
      for (const float lg : logits) mx = std::max(mx, static_cast<double>(lg));
      double z = 0.0;
      for (const float lg : logits) z += std::exp(static_cast<double>(lg) - mx);
      const double ce = mx + std::log(z) - static_cast<double>(logits[target]);
      sum += static_cast<double>(static_cast<float>(ce));
      ++count;
    }
  }
  return sum / static_cast<double>(count);
}

LstmParams init_params(const LstmConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamVector theta;
  theta.values.resize(param_count(cfg));
  const float k = 1.0f / std::sqrt(static_cast<float>(cfg.hidden_dim));
  RngStream rng(seed);
  for (auto& v : theta.values) v = rng.next_uniform(-k, k);

  LstmParams params(cfg, std::move(theta));
  // forget-gate bias block starts the cell near carry-through
  ParamVector& tv = params.theta();
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const auto& entry = tv.layout[3 + 3 * l];
    auto b = tv.tensor(entry);
    for (std::size_t j = cfg.hidden_dim; j < 2 * cfg.hidden_dim; ++j) b[j] = 1.0f;
  }
  return params;
}

ParamVector flatten(const LstmParams& params) { return params.theta(); }

LstmParams unflatten(ParamVector theta, const LstmConfig& cfg) {
  return LstmParams(cfg, std::move(theta));
}

namespace {

void write_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::ifstream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw ProtocolError("checkpoint: truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const std::string& path, const LstmParams& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("checkpoint: cannot write " + path);
  out.write("ZORN1", 5);
  const LstmConfig& cfg = params.config();
  write_u32(out, static_cast<std::uint32_t>(cfg.vocab_size));
  write_u32(out, static_cast<std::uint32_t>(cfg.embed_dim));
  write_u32(out, static_cast<std::uint32_t>(cfg.hidden_dim));
  write_u32(out, static_cast<std::uint32_t>(cfg.num_layers));
  static_assert(sizeof(float) == 4);
  // float32 payload is little-endian; this build targets LE hosts.
  out.write(reinterpret_cast<const char*>(params.theta().values.data()),
            static_cast<std::streamsize>(params.dim() * sizeof(float)));
  if (!out) throw InputError("checkpoint: short write to " + path);
}

LstmParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("checkpoint: cannot open " + path);
  char magic[5];
  in.read(magic, 5);
  if (!in || std::memcmp(magic, "ZORN1", 5) != 0) {
    throw ProtocolError("checkpoint: bad magic in " + path);
  }
  LstmConfig cfg;
  cfg.vocab_size = read_u32(in);
  cfg.embed_dim = read_u32(in);
  cfg.hidden_dim = read_u32(in);
  cfg.num_layers = read_u32(in);
  cfg.validate();
  ParamVector theta;
  theta.values.resize(param_count(cfg));
  in.read(reinterpret_cast<char*>(theta.values.data()),
          static_cast<std::streamsize>(theta.values.size() * sizeof(float)));
  if (!in) throw ProtocolError("checkpoint: truncated payload in " + path);
  return LstmParams(cfg, std::move(theta));
}

}  // namespace zorn
