// zorn: forward-pass-only training for recurrent networks.
//
// Subcommands: train, eval, overfit, serve, diag, memreport.
// Flag precedence: command line > ZORN_* environment > --config file.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "zorn/error.hpp"
#include "zorn/run.hpp"

namespace {

using zorn::run::RunConfig;

// Registers the shared flag set on a subcommand, mirrored one-to-one by
// config-file keys and ZORN_* environment variables.
void add_common_flags(CLI::App* cmd, RunConfig& cfg, bool require_seed) {
  cmd->set_config("--config", "", "flat key=value config file");

  auto* seed = cmd->add_option("--seed", cfg.seed, "master seed (required; runs never draw entropy)");
  seed->envname("ZORN_SEED");
  if (require_seed) seed->required();

  cmd->add_option("--task", cfg.task, "copy | reverse | sum | lm")->envname("ZORN_TASK");
  cmd->add_option("--optimizer", cfg.optimizer, "bptt | cdrge | fdrge")->envname("ZORN_OPTIMIZER");
  cmd->add_option("--out", cfg.out, "output directory")->envname("ZORN_OUT");
  cmd->add_option("--resume", cfg.resume, "output directory of the run to resume");

  cmd->add_option("--hidden-dim", cfg.hidden_dim, "LSTM hidden size");
  cmd->add_option("--embed-dim", cfg.embed_dim, "input embedding size");
  cmd->add_option("--num-layers", cfg.num_layers, "LSTM layers");

  cmd->add_option("--batch-size", cfg.batch_size, "sequences per batch");
  cmd->add_option("--train-len-lo", cfg.train_len_lo, "min training payload length");
  cmd->add_option("--train-len-hi", cfg.train_len_hi, "max training payload length");
  cmd->add_option("--eval-len-lo", cfg.eval_len_lo, "min validation payload length");
  cmd->add_option("--eval-len-hi", cfg.eval_len_hi, "max validation payload length");
  cmd->add_option("--seq-len", cfg.seq_len, "language-model window length");
  cmd->add_option("--corpus", cfg.corpus, "UTF-8 corpus file (lm task)")->envname("ZORN_CORPUS");

  cmd->add_option("--epsilon", cfg.epsilon, "perturbation scale");
  cmd->add_option("--eta", cfg.eta, "step size (negative ties eta to epsilon)");
  cmd->add_option("--npert", cfg.n_pert, "perturbations per step");
  cmd->add_option("--distribution", cfg.distribution, "rademacher | normal | uniform");
  cmd->add_option("--restore-mode", cfg.restore_mode, "inplace | exact");
  cmd->add_option("--threads", cfg.threads, "parallel perturbation evaluators");
  cmd->add_option("--chunk-size", cfg.chunk_size, "probe/communication chunk entries")
      ->envname("ZORN_CHUNK_SIZE");

  cmd->add_option("--lr", cfg.lr, "AdamW learning rate");
  cmd->add_option("--weight-decay", cfg.weight_decay, "AdamW decoupled weight decay");
  cmd->add_option("--clip-norm", cfg.clip_norm, "gradient clip norm (<= 0 disables)");

  cmd->add_option("--steps", cfg.steps, "training steps");
  cmd->add_option("--eval-interval", cfg.eval_interval, "steps between evaluations");
  cmd->add_option("--eval-batches", cfg.eval_batches, "batches per evaluation");
  cmd->add_option("--threshold", cfg.threshold, "overfit loss threshold (nats)");
  cmd->add_option("--npert-list", cfg.npert_list, "overfit n_pert sweep");
  cmd->add_option("--repeats", cfg.repeats, "repeated runs (overfit)");

  cmd->add_option("--rank", cfg.rank, "rank of this process")->envname("ZORN_RANK");
  cmd->add_option("--world-size", cfg.world_size, "total ranks")->envname("ZORN_WORLD_SIZE");
  cmd->add_option("--addr", cfg.addr, "rank-0 host:port")->envname("ZORN_ADDR");
  cmd->add_option("--gather-mode", cfg.gather_mode, "perpair | batched");
  cmd->add_option("--timeout-ms", cfg.timeout_ms, "distributed step timeout");
}

int run_train(const RunConfig& cfg) {
  const auto result = zorn::run::cmd_train(cfg);
  if (result.aborted) {
    std::cout << "train: aborted after " << result.steps_run
              << " steps (see run_log.txt)\n";
    return 2;
  }
  std::cout << "train: " << result.steps_run << " steps, final val loss "
            << result.final_val_loss << ", checkpoint " << result.checkpoint
            << "\n";
  return 0;
}

int run_eval(const RunConfig& cfg) {
  const double val = zorn::run::cmd_eval(cfg);
  std::cout << "val_loss " << val << "\n";
  return 0;
}

int run_overfit(const RunConfig& cfg) {
  const auto arms = zorn::run::cmd_overfit(cfg);
  std::printf("%-8s %-6s %-8s %-10s %s\n", "opt", "npert", "reached",
              "steps", "final_loss");
  for (const auto& arm : arms) {
    std::printf("%-8s %-6zu %-8s %-10zu %.6f\n", arm.optimizer.c_str(),
                arm.n_pert, arm.reached ? "yes" : "no", arm.steps_to_threshold,
                arm.final_loss);
  }
  return 0;
}

int run_diag(const RunConfig& cfg) {
  const auto rows = zorn::run::cmd_diag(cfg);
  bool all = true;
  for (const auto& row : rows) {
    std::printf("[%s] %-28s %s\n", row.pass ? "PASS" : "FAIL", row.name.c_str(),
                row.detail.c_str());
    all = all && row.pass;
  }
  return all ? 0 : 1;
}

int run_memreport(const RunConfig& cfg, std::size_t batch_size,
                  std::size_t seq_len, const std::string& optimizer) {
  const auto report = zorn::run::memory_report(cfg, optimizer, batch_size, seq_len);
  std::printf("optimizer            %s\n", optimizer.c_str());
  std::printf("batch x steps        %zu x %zu\n", batch_size, seq_len);
  std::printf("theta bytes          %llu\n",
              static_cast<unsigned long long>(report.theta_bytes));
  std::printf("chunk bytes          %llu\n",
              static_cast<unsigned long long>(report.chunk_bytes));
  std::printf("A (floats/step/row)  %llu\n",
              static_cast<unsigned long long>(report.activation_floats_per_step));
  std::printf("a_max (floats)       %llu\n",
              static_cast<unsigned long long>(report.a_max_floats));
  std::printf("BPTT tape estimate   %llu bytes (~ B*C*A)\n",
              static_cast<unsigned long long>(report.bptt_tape_bytes));
  std::printf("ZOO estimate         %llu bytes (~ B*a_max + |theta| + chunk)\n",
              static_cast<unsigned long long>(report.zoo_bytes));
  std::printf("measured step peak   %lld bytes\n",
              static_cast<long long>(report.measured_peak_bytes));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"zorn: forward-pass-only training for recurrent networks"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::size_t mem_batch = 8;
  std::size_t mem_seq = 10;
  std::string mem_optimizer = "cdrge";

  auto* train = app.add_subcommand("train", "train a model; writes metrics and checkpoints");
  add_common_flags(train, cfg, true);
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint or a fresh seeded model");
  add_common_flags(eval, cfg, true);
  auto* overfit = app.add_subcommand("overfit", "steps-to-threshold on one fixed batch");
  add_common_flags(overfit, cfg, true);
  auto* serve = app.add_subcommand("serve", "run a distributed rank (rank 0 trains)");
  add_common_flags(serve, cfg, true);
  auto* diag = app.add_subcommand("diag", "estimator diagnostics battery");
  add_common_flags(diag, cfg, false);
  auto* memreport = app.add_subcommand("memreport", "memory accounting report");
  add_common_flags(memreport, cfg, false);
  memreport->add_option("--mem-batch", mem_batch, "batch size to measure");
  memreport->add_option("--mem-seq", mem_seq, "sequence length to measure");
  memreport->add_option("--mem-optimizer", mem_optimizer, "bptt | cdrge");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return run_train(cfg);
    if (eval->parsed()) return run_eval(cfg);
    if (overfit->parsed()) return run_overfit(cfg);
    if (serve->parsed()) return zorn::run::cmd_serve(cfg);
    if (diag->parsed()) return run_diag(cfg);
    if (memreport->parsed()) return run_memreport(cfg, mem_batch, mem_seq, mem_optimizer);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
