#include "zorn/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "zorn/error.hpp"

namespace zorn {

void adamw_step(std::span<double> params, std::span<const double> grad,
                AdamWState& state, const AdamWConfig& cfg) {
  if (params.size() != grad.size() || params.size() != state.m.size()) {
    throw ShapeError("adamw_step: size mismatch");
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t j = 0; j < params.size(); ++j) {
    const double g = grad[j];
    state.m[j] = cfg.beta1 * state.m[j] + (1.0 - cfg.beta1) * g;
    state.v[j] = cfg.beta2 * state.v[j] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m[j] / bc1;
    const double vhat = state.v[j] / bc2;
    params[j] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) +
                           cfg.weight_decay * params[j]);
  }
}

double clip_global_norm(std::span<double> grad, double clip_norm) {
  double sq = 0.0;
  for (const double g : grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > clip_norm && norm > 0.0) {
    const double scale = clip_norm / norm;
    for (double& g : grad) g *= scale;
  }
  return norm;
}

namespace {

struct Layout64 {
  std::size_t embedding = 0;
  struct Layer {
    std::size_t w_ih = 0, w_hh = 0, b = 0;
  };
  std::vector<Layer> layers;
  std::size_t w_out = 0, b_out = 0;

  explicit Layout64(const LstmConfig& cfg) {
    const auto entries = build_layout(cfg);
    embedding = entries[0].offset;
    layers.resize(cfg.num_layers);
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
      layers[l].w_ih = entries[1 + 3 * l].offset;
      layers[l].w_hh = entries[2 + 3 * l].offset;
      layers[l].b = entries[3 + 3 * l].offset;
    }
    w_out = entries[1 + 3 * cfg.num_layers].offset;
    b_out = entries[2 + 3 * cfg.num_layers].offset;
  }
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// acc[g] += sum_k in[k] * w[k * width + g]
inline void axpy_rows(std::span<double> acc, const double* in, std::size_t n_in,
                      const double* w) {
  const std::size_t width = acc.size();
  for (std::size_t k = 0; k < n_in; ++k) {
    const double v = in[k];
    const double* row = w + k * width;
    for (std::size_t g = 0; g < width; ++g) acc[g] += row[g] * v;
  }
}

// Per-row activation tape: gates post-nonlinearity plus c and h per
// (time, layer). This is the linear-in-C memory BPTT pays.
struct Tape {
  std::size_t layers = 0, hidden = 0;
  std::vector<double> gates;  // t x l x 4h
  std::vector<double> c;      // t x l x h
  std::vector<double> h;      // t x l x h

  void resize(std::size_t steps, std::size_t n_layers, std::size_t n_hidden) {
    layers = n_layers;
    hidden = n_hidden;
    gates.resize(steps * n_layers * 4 * n_hidden);
    c.resize(steps * n_layers * n_hidden);
    h.resize(steps * n_layers * n_hidden);
  }
  double* gates_at(std::size_t t, std::size_t l) {
    return gates.data() + (t * layers + l) * 4 * hidden;
  }
  double* c_at(std::size_t t, std::size_t l) {
    return c.data() + (t * layers + l) * hidden;
  }
  double* h_at(std::size_t t, std::size_t l) {
    return h.data() + (t * layers + l) * hidden;
  }
};

void check_theta(const LstmConfig& cfg, std::span<const double> theta) {
  cfg.validate();
  if (theta.size() != param_count(cfg)) {
    throw ShapeError("theta64 length " + std::to_string(theta.size()) +
                     " != expected " + std::to_string(param_count(cfg)));
  }
}

// Forward over one row; fills the tape when given one.
void forward_row(const LstmConfig& cfg, const Layout64& lay,
                 std::span<const double> theta, const TaskBatch& batch,
                 std::size_t b, Tape* tape, std::vector<double>& h_state,
                 std::vector<double>& c_state, std::vector<double>& acc,
                 double& ce_sum, std::size_t& ce_count) {
  const std::size_t H = cfg.hidden_dim;
  const std::size_t V = cfg.vocab_size;
  const double* th = theta.data();
  std::fill(h_state.begin(), h_state.end(), 0.0);
  std::fill(c_state.begin(), c_state.end(), 0.0);
  const auto len = static_cast<std::size_t>(batch.lengths[b]);
  for (std::size_t t = 0; t < len; ++t) {
    const std::int32_t token = batch.input(b, t);
    if (token < 0 || static_cast<std::size_t>(token) >= V) {
      throw InputError("forward_loss_f64: token out of range");
    }
    const double* input = th + lay.embedding + static_cast<std::size_t>(token) * cfg.embed_dim;
    std::size_t in_dim = cfg.embed_dim;
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
      std::span<double> a(acc.data(), 4 * H);
      const double* bias = th + lay.layers[l].b;
      for (std::size_t g = 0; g < 4 * H; ++g) a[g] = bias[g];
      axpy_rows(a, input, in_dim, th + lay.layers[l].w_ih);
      double* h = h_state.data() + l * H;
      double* c = c_state.data() + l * H;
      axpy_rows(a, h, H, th + lay.layers[l].w_hh);
      double* tg = tape ? tape->gates_at(t, l) : nullptr;
      for (std::size_t j = 0; j < H; ++j) {
        const double gi = sigmoid(a[j]);
        const double gf = sigmoid(a[H + j]);
        const double gg = std::tanh(a[2 * H + j]);
        const double go = sigmoid(a[3 * H + j]);
        const double cj = gf * c[j] + gi * gg;
        c[j] = cj;
        h[j] = go * std::tanh(cj);
        if (tg != nullptr) {
          tg[j] = gi;
          tg[H + j] = gf;
          tg[2 * H + j] = gg;
          tg[3 * H + j] = go;
        }
      }
      if (tape != nullptr) {
        std::memcpy(tape->c_at(t, l), c, H * sizeof(double));
        std::memcpy(tape->h_at(t, l), h, H * sizeof(double));
      }
      input = h;
      in_dim = H;
    }
    if (!batch.masked(b, t)) continue;
    const std::int32_t target = batch.target(b, t);
    if (target < 0 || static_cast<std::size_t>(target) >= V) {
      throw InputError("forward_loss_f64: target out of range");
    }
    std::span<double> lg(acc.data(), V);
    const double* bo = th + lay.b_out;
    for (std::size_t v = 0; v < V; ++v) lg[v] = bo[v];
    axpy_rows(lg, h_state.data() + (cfg.num_layers - 1) * H, H, th + lay.w_out);
    double mx = lg[0];
    for (std::size_t v = 1; v < V; ++v) mx = std::max(mx, lg[v]);
    double z = 0.0;
    for (std::size_t v = 0; v < V; ++v) z += std::exp(lg[v] - mx);
    ce_sum += mx + std::log(z) - lg[static_cast<std::size_t>(target)];
    ++ce_count;
  }
}

}  // namespace

double forward_loss_f64(const LstmConfig& cfg, std::span<const double> theta64,
                        const TaskBatch& batch) {
  check_theta(cfg, theta64);
  if (batch.batch == 0 || batch.masked_count() == 0) {
    throw InputError("forward_loss_f64: batch has no masked positions");
  }
  const Layout64 lay(cfg);
  std::vector<double> h_state(cfg.num_layers * cfg.hidden_dim);
  std::vector<double> c_state(cfg.num_layers * cfg.hidden_dim);
  std::vector<double> acc(std::max(4 * cfg.hidden_dim, cfg.vocab_size));
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t b = 0; b < batch.batch; ++b) {
    forward_row(cfg, lay, theta64, batch, b, nullptr, h_state, c_state, acc,
                sum, count);
  }
  return sum / static_cast<double>(count);
}

BpttResult bptt_grad(const LstmConfig& cfg, std::span<const double> theta64,
                     const TaskBatch& batch) {
  check_theta(cfg, theta64);
  if (batch.batch == 0) throw InputError("bptt_grad: empty batch");
  const std::size_t n_masked = batch.masked_count();
  if (n_masked == 0) throw InputError("bptt_grad: batch has no masked positions");

  const Layout64 lay(cfg);
  const std::size_t H = cfg.hidden_dim;
  const std::size_t V = cfg.vocab_size;
  const double* th = theta64.data();
  const double inv_masked = 1.0 / static_cast<double>(n_masked);

  BpttResult out;
  out.grad.assign(theta64.size(), 0.0);
  double* gr = out.grad.data();

  std::vector<double> h_state(cfg.num_layers * H);
  std::vector<double> c_state(cfg.num_layers * H);
  std::vector<double> acc(std::max(4 * H, V));
  std::vector<double> dh(cfg.num_layers * H);
  std::vector<double> dc(cfg.num_layers * H);
  std::vector<double> da(4 * H);
  std::vector<double> dinput(std::max(cfg.embed_dim, H));
  std::vector<double> dh_prev(H);
  std::vector<double> probs(V);
  Tape tape;

  double ce_sum = 0.0;
  std::size_t ce_count = 0;
  for (std::size_t b = 0; b < batch.batch; ++b) {
    const auto len = static_cast<std::size_t>(batch.lengths[b]);
    if (len == 0) continue;
    tape.resize(len, cfg.num_layers, H);
    forward_row(cfg, lay, theta64, batch, b, &tape, h_state, c_state, acc,
                ce_sum, ce_count);

    std::fill(dh.begin(), dh.end(), 0.0);
    std::fill(dc.begin(), dc.end(), 0.0);
    for (std::size_t t = len; t-- > 0;) {
      if (batch.masked(b, t)) {
        // recompute logits from the taped top h, then softmax - onehot
        const std::int32_t target = batch.target(b, t);
        const double* h_top = tape.h_at(t, cfg.num_layers - 1);
        std::span<double> lg(acc.data(), V);
        const double* bo = th + lay.b_out;
        for (std::size_t v = 0; v < V; ++v) lg[v] = bo[v];
        axpy_rows(lg, h_top, H, th + lay.w_out);
        double mx = lg[0];
        for (std::size_t v = 1; v < V; ++v) mx = std::max(mx, lg[v]);
        double z = 0.0;
        for (std::size_t v = 0; v < V; ++v) {
          probs[v] = std::exp(lg[v] - mx);
          z += probs[v];
        }
        double* dh_top = dh.data() + (cfg.num_layers - 1) * H;
        for (std::size_t v = 0; v < V; ++v) {
          const double dl =
              (probs[v] / z -
               (static_cast<std::size_t>(target) == v ? 1.0 : 0.0)) *
              inv_masked;
          gr[lay.b_out + v] += dl;
          const double* wcol = th + lay.w_out + v;
          double* gcol = gr + lay.w_out + v;
          for (std::size_t k = 0; k < H; ++k) {
            gcol[k * V] += h_top[k] * dl;
            dh_top[k] += wcol[k * V] * dl;
          }
        }
      }

      for (std::size_t l = cfg.num_layers; l-- > 0;) {
        const double* tg = tape.gates_at(t, l);
        const double* c_t = tape.c_at(t, l);
        const double* c_prev = t > 0 ? tape.c_at(t - 1, l) : nullptr;
        const double* h_prev = t > 0 ? tape.h_at(t - 1, l) : nullptr;
        double* dh_l = dh.data() + l * H;
        double* dc_l = dc.data() + l * H;
        for (std::size_t j = 0; j < H; ++j) {
          const double gi = tg[j];
          const double gf = tg[H + j];
          const double gg = tg[2 * H + j];
          const double go = tg[3 * H + j];
          const double tc = std::tanh(c_t[j]);
          const double cp = c_prev != nullptr ? c_prev[j] : 0.0;
          dc_l[j] += dh_l[j] * go * (1.0 - tc * tc);
          da[j] = dc_l[j] * gg * gi * (1.0 - gi);
          da[H + j] = dc_l[j] * cp * gf * (1.0 - gf);
          da[2 * H + j] = dc_l[j] * gi * (1.0 - gg * gg);
          da[3 * H + j] = dh_l[j] * tc * go * (1.0 - go);
          dc_l[j] *= gf;
        }

        const std::size_t in_dim = cfg.input_dim(l);
        const double* input;
        const std::int32_t token = batch.input(b, t);
        if (l == 0) {
          input = th + lay.embedding + static_cast<std::size_t>(token) * cfg.embed_dim;
        } else {
          input = tape.h_at(t, l - 1);
        }

        double* g_wih = gr + lay.layers[l].w_ih;
        const double* w_ih = th + lay.layers[l].w_ih;
        for (std::size_t k = 0; k < in_dim; ++k) {
          const double xk = input[k];
          double* grow = g_wih + k * 4 * H;
          const double* wrow = w_ih + k * 4 * H;
          double din = 0.0;
          for (std::size_t g = 0; g < 4 * H; ++g) {
            grow[g] += xk * da[g];
            din += wrow[g] * da[g];
          }
          dinput[k] = din;
        }
        double* g_whh = gr + lay.layers[l].w_hh;
        const double* w_hh = th + lay.layers[l].w_hh;
        for (std::size_t k = 0; k < H; ++k) {
          const double hk = h_prev != nullptr ? h_prev[k] : 0.0;
          double* grow = g_whh + k * 4 * H;
          const double* wrow = w_hh + k * 4 * H;
          double dhp = 0.0;
          for (std::size_t g = 0; g < 4 * H; ++g) {
            grow[g] += hk * da[g];
            dhp += wrow[g] * da[g];
          }
          dh_prev[k] = dhp;
        }
        double* g_b = gr + lay.layers[l].b;
        for (std::size_t g = 0; g < 4 * H; ++g) g_b[g] += da[g];

        if (l == 0) {
          double* g_emb =
              gr + lay.embedding + static_cast<std::size_t>(token) * cfg.embed_dim;
          for (std::size_t k = 0; k < in_dim; ++k) g_emb[k] += dinput[k];
        } else {
          double* dh_below = dh.data() + (l - 1) * H;
          for (std::size_t k = 0; k < in_dim; ++k) dh_below[k] += dinput[k];
        }
        std::memcpy(dh_l, dh_prev.data(), H * sizeof(double));
      }
    }
  }

  out.loss = ce_sum / static_cast<double>(ce_count);
  return out;
}

BpttResult bptt_grad(const LstmParams& params, const TaskBatch& batch) {
  std::vector<double> theta64(params.dim());
  const auto& values = params.theta().values;
  for (std::size_t j = 0; j < values.size(); ++j) {
    theta64[j] = static_cast<double>(values[j]);
  }
  return bptt_grad(params.config(), theta64, batch);
}

BpttTrainer::BpttTrainer(const LstmConfig& cfg, const AdamWConfig& adamw,
                         std::uint64_t init_seed)
    : cfg_(cfg), adamw_(adamw), theta_(param_count(cfg)),
      state_(param_count(cfg)) {
  const LstmParams init = init_params(cfg, init_seed);
  for (std::size_t j = 0; j < theta_.size(); ++j) {
    theta_[j] = static_cast<double>(init.theta().values[j]);
  }
}

double BpttTrainer::step(const TaskBatch& batch) {
  if (diverged_) return std::numeric_limits<double>::quiet_NaN();
  BpttResult res = bptt_grad(cfg_, theta_, batch);
  if (!std::isfinite(res.loss)) {
    diverged_ = true;
    return res.loss;
  }
  if (adamw_.clip) {
    last_grad_norm_ = clip_global_norm(res.grad, adamw_.clip_norm);
  } else {
    double s = 0.0;
    for (const double g : res.grad) s += g * g;
    last_grad_norm_ = std::sqrt(s);
  }
  adamw_step(theta_, res.grad, state_, adamw_);
  return res.loss;
}

LstmParams BpttTrainer::snapshot() const {
  ParamVector theta;
  theta.values.resize(theta_.size());
  for (std::size_t j = 0; j < theta_.size(); ++j) {
    theta.values[j] = static_cast<float>(theta_[j]);
  }
  return LstmParams(cfg_, std::move(theta));
}

void BpttTrainer::load(const LstmParams& params, const AdamWState* state) {
  if (params.config() != cfg_) throw InputError("BpttTrainer::load: config mismatch");
  for (std::size_t j = 0; j < theta_.size(); ++j) {
    theta_[j] = static_cast<double>(params.theta().values[j]);
  }
  if (state != nullptr) {
    if (state->m.size() != theta_.size()) {
      throw ShapeError("BpttTrainer::load: optimizer state size mismatch");
    }
    state_ = *state;
  }
  diverged_ = false;
}

BpttTrainResult bptt_train(const LstmConfig& cfg, const AdamWConfig& adamw,
                           BatchSource& source, std::size_t steps,
                           std::uint64_t init_seed) {
  BpttTrainer trainer(cfg, adamw, init_seed);
  BpttTrainResult out;
  if (steps == 0) {
    out.train_loss.push_back(
        forward_loss_f64(cfg, trainer.master(), source.next()));
  }
  for (std::size_t s = 0; s < steps; ++s) {
    const TaskBatch batch = source.next();
    const double loss = trainer.step(batch);
    if (trainer.diverged()) {
      out.diverged = true;
      break;
    }
    out.train_loss.push_back(loss);
  }
  out.params = trainer.snapshot();
  return out;
}

namespace {

void write_u64(std::ofstream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::ifstream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw ProtocolError("opt state: truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_opt_state(const std::string& path, const AdamWState& state) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("opt state: cannot write " + path);
  out.write("ZORNA", 5);
  write_u64(out, static_cast<std::uint64_t>(state.t));
  write_u64(out, state.m.size());
  out.write(reinterpret_cast<const char*>(state.m.data()),
            static_cast<std::streamsize>(state.m.size() * sizeof(double)));
  out.write(reinterpret_cast<const char*>(state.v.data()),
            static_cast<std::streamsize>(state.v.size() * sizeof(double)));
  if (!out) throw InputError("opt state: short write to " + path);
}

AdamWState load_opt_state(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("opt state: cannot open " + path);
  char magic[5];
  in.read(magic, 5);
  if (!in || std::memcmp(magic, "ZORNA", 5) != 0) {
    throw ProtocolError("opt state: bad magic in " + path);
  }
  const auto t = static_cast<std::int64_t>(read_u64(in));
  const std::size_t dim = read_u64(in);
  AdamWState state(dim);
  state.t = t;
  in.read(reinterpret_cast<char*>(state.m.data()),
          static_cast<std::streamsize>(dim * sizeof(double)));
  in.read(reinterpret_cast<char*>(state.v.data()),
          static_cast<std::streamsize>(dim * sizeof(double)));
  if (!in) throw ProtocolError("opt state: truncated in " + path);
  return state;
}

}  // namespace zorn
