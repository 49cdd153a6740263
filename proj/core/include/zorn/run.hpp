#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "zorn/baseline.hpp"
#include "zorn/dist.hpp"
#include "zorn/models.hpp"
#include "zorn/tasks.hpp"
#include "zorn/zoo.hpp"

namespace zorn::run {

// Resolved configuration of one experiment. Flags, ZORN_-prefixed
// environment variables and flat key=value config files map onto these
// fields one to one (precedence: flags > environment > file). Seeds are
// mandatory so every run is reproducible from its persisted config.
struct RunConfig {
  // experiment
  std::string task = "copy";        // copy | reverse | sum | lm
  std::string optimizer = "cdrge";  // cdrge | fdrge | bptt
  std::uint64_t seed = 0;
  std::string out;
  std::string resume;  // output dir of the run to resume

  // model
  std::size_t hidden_dim = 140;
  std::size_t embed_dim = 32;
  std::size_t num_layers = 1;

  // data
  std::size_t batch_size = 32;
  int train_len_lo = 1;
  int train_len_hi = 10;
  int eval_len_lo = 11;
  int eval_len_hi = 60;
  std::size_t seq_len = 10;  // LM window
  std::string corpus;

  // zeroth-order step
  double epsilon = 0.01;
  double eta = -1.0;  // tied to epsilon when negative
  std::size_t n_pert = 512;
  std::string distribution = "rademacher";
  std::string restore_mode = "inplace";
  unsigned threads = 1;
  std::size_t chunk_size = kDefaultChunkSize;

  // bptt
  double lr = 1e-3;
  double weight_decay = 0.1;
  double clip_norm = 1.0;

  // loop
  std::size_t steps = 1000;
  std::size_t eval_interval = 100;
  std::size_t eval_batches = 4;
  double threshold = 0.01;  // nats; overfit steps-to-threshold target
  std::string npert_list = "8,96,512";
  std::size_t repeats = 1;

  // dist
  int rank = 0;
  int world_size = 1;
  std::string addr = "127.0.0.1:29700";
  std::string gather_mode = "perpair";  // perpair | batched
  int timeout_ms = 30000;

  LstmConfig model_config(std::size_t vocab_size) const;
  StepConfig step_config() const;
  AdamWConfig adamw_config() const;
  DistConfig dist_config() const;

  // Serialization to the flat key=value format (one key per line).
  std::string to_key_values() const;
};

// Append-only line-delimited metrics. Deterministic records (step,
// losses) go to metrics.jsonl; wall-clock and peak allocation go to
// perf.jsonl so re-runs are byte-identical on the deterministic file.
class MetricsWriter {
 public:
  MetricsWriter(const std::string& dir, bool append);
  void train(std::size_t step, double train_loss);
  void eval(std::size_t step, double val_loss);
  void perf(std::size_t step, double wall_ms, std::int64_t peak_bytes);
  void note(const std::string& text);

 private:
  void line(const std::string& file, const std::string& text);
  std::string dir_;
};

struct MetricRecord {
  std::size_t step = 0;
  std::optional<double> train_loss;
  std::optional<double> val_loss;
};

// Parses metrics.jsonl, ignoring a trailing partial line.
std::vector<MetricRecord> read_metrics(const std::string& path);

// --- commands ---------------------------------------------------------------

struct TrainResult {
  std::size_t steps_run = 0;
  double final_val_loss = 0.0;
  bool aborted = false;
  std::string checkpoint;  // path of the final checkpoint
};

// `train`: deterministic training loop with periodic evaluation,
// checkpoints, and metrics under cfg.out. Supports optimizer cdrge, fdrge
// (sequential or distributed when world_size > 1 on rank 0) and bptt.
TrainResult cmd_train(const RunConfig& cfg);

// `eval`: evaluates a checkpoint (cfg.resume) or a fresh seeded model.
double cmd_eval(const RunConfig& cfg);

struct OverfitArm {
  std::string optimizer;  // "bptt" or "cdrge"
  std::size_t n_pert = 0;
  bool reached = false;
  std::size_t steps_to_threshold = 0;
  double final_loss = 0.0;
};

// `overfit`: one fixed batch; BPTT plus CD-RGE at each n_pert in
// cfg.npert_list; reports the first step with clean loss below
// cfg.threshold.
std::vector<OverfitArm> cmd_overfit(const RunConfig& cfg);

struct DiagResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// `diag`: estimator property battery (unbiasedness, variance scaling,
// bias order, antithetic identity, smoothing sweep).
std::vector<DiagResult> cmd_diag(const RunConfig& cfg);

struct MemoryReport {
  // symbolic estimates, bytes
  std::uint64_t bptt_tape_bytes = 0;   // ~ B * C * A
  std::uint64_t zoo_bytes = 0;         // ~ B * a_max + |theta| + chunk
  std::uint64_t theta_bytes = 0;
  std::uint64_t chunk_bytes = 0;
  std::uint64_t activation_floats_per_step = 0;  // A, per batch row
  std::uint64_t a_max_floats = 0;                // largest single-layer footprint
  // measured working set of one optimizer step, bytes
  std::int64_t measured_peak_bytes = 0;
};

// `memreport`: symbolic estimate plus measured single-step peak for the
// given optimizer at (batch_size, seq_len) desk scale.
MemoryReport memory_report(const RunConfig& cfg, const std::string& optimizer,
                           std::size_t batch_size, std::size_t seq_len);

// `serve`: rank 0 runs the distributed training loop, other ranks serve
// perturbed forward passes until shutdown. Returns a process exit code.
int cmd_serve(const RunConfig& cfg);

}  // namespace zorn::run
