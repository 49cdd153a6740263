#include "zorn/run.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <nlohmann/json.hpp>

#include "zorn/error.hpp"
#include "zorn/memtrack.hpp"
#include "zorn/model_loss.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace zorn::run {

namespace {

constexpr std::uint64_t kInitTag = 0x696E6974;   // parameter init stream
constexpr std::uint64_t kStepTag = 0x73746570;   // per-step probe seeds
constexpr std::uint64_t kTrainTag = 0x74726169;  // training batches
constexpr std::uint64_t kEvalTag = 0x6576616C;   // validation batches
constexpr std::uint64_t kBatchTag = 0x62617463;  // fixed overfit batch

std::pair<std::string, std::uint16_t> parse_addr(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 >= addr.size()) {
    throw InputError("addr must be host:port, got: " + addr);
  }
  const int port = std::stoi(addr.substr(colon + 1));
  if (port < 0 || port > 65535) throw InputError("addr port out of range");
  return {addr.substr(0, colon), static_cast<std::uint16_t>(port)};
}

std::vector<std::size_t> parse_size_list(const std::string& csv) {
  std::vector<std::size_t> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoull(item));
  }
  if (out.empty()) throw InputError("empty n_pert list");
  return out;
}

}  // namespace

LstmConfig RunConfig::model_config(std::size_t vocab_size) const {
  LstmConfig cfg;
  cfg.vocab_size = vocab_size;
  cfg.embed_dim = embed_dim;
  cfg.hidden_dim = hidden_dim;
  cfg.num_layers = num_layers;
  cfg.validate();
  return cfg;
}

StepConfig RunConfig::step_config() const {
  StepConfig cfg;
  cfg.epsilon = epsilon;
  cfg.eta = eta;
  cfg.n_pert = n_pert;
  cfg.distribution = distribution_from_string(distribution);
  cfg.estimator = optimizer == "fdrge" ? EstimatorKind::kFd : EstimatorKind::kCd;
  cfg.chunk_size = chunk_size;
  cfg.restore = restore_mode_from_string(restore_mode);
  cfg.threads = threads;
  cfg.validate();
  return cfg;
}

AdamWConfig RunConfig::adamw_config() const {
  AdamWConfig cfg;
  cfg.lr = lr;
  cfg.weight_decay = weight_decay;
  cfg.clip = clip_norm > 0.0;
  cfg.clip_norm = clip_norm > 0.0 ? clip_norm : 1.0;
  return cfg;
}

DistConfig RunConfig::dist_config() const {
  DistConfig cfg;
  cfg.role.rank = rank;
  cfg.role.world_size = world_size;
  const auto [host, port] = parse_addr(addr);
  cfg.role.host = host;
  cfg.role.port = port;
  cfg.chunk_size = chunk_size;
  cfg.gather = gather_mode == "batched" ? GatherMode::kBatched : GatherMode::kPerPair;
  cfg.timeout_ms = timeout_ms;
  return cfg;
}

std::string RunConfig::to_key_values() const {
  std::ostringstream out;
  out << "task=" << task << "\n";
  out << "optimizer=" << optimizer << "\n";
  out << "seed=" << seed << "\n";
  out << "hidden-dim=" << hidden_dim << "\n";
  out << "embed-dim=" << embed_dim << "\n";
  out << "num-layers=" << num_layers << "\n";
  out << "batch-size=" << batch_size << "\n";
  out << "train-len-lo=" << train_len_lo << "\n";
  out << "train-len-hi=" << train_len_hi << "\n";
  out << "eval-len-lo=" << eval_len_lo << "\n";
  out << "eval-len-hi=" << eval_len_hi << "\n";
  out << "seq-len=" << seq_len << "\n";
  if (!corpus.empty()) out << "corpus=" << corpus << "\n";
  out << "epsilon=" << epsilon << "\n";
  out << "eta=" << eta << "\n";
  out << "npert=" << n_pert << "\n";
  out << "distribution=" << distribution << "\n";
  out << "restore-mode=" << restore_mode << "\n";
  out << "threads=" << threads << "\n";
  out << "chunk-size=" << chunk_size << "\n";
  out << "lr=" << lr << "\n";
  out << "weight-decay=" << weight_decay << "\n";
  out << "clip-norm=" << clip_norm << "\n";
  out << "steps=" << steps << "\n";
  out << "eval-interval=" << eval_interval << "\n";
  out << "eval-batches=" << eval_batches << "\n";
  out << "threshold=" << threshold << "\n";
  out << "npert-list=" << npert_list << "\n";
  out << "repeats=" << repeats << "\n";
  out << "rank=" << rank << "\n";
  out << "world-size=" << world_size << "\n";
  out << "addr=" << addr << "\n";
  out << "gather-mode=" << gather_mode << "\n";
  out << "timeout-ms=" << timeout_ms << "\n";
  return out.str();
}

MetricsWriter::MetricsWriter(const std::string& dir, bool append) : dir_(dir) {
  fs::create_directories(dir_);
  if (!append) {
    std::ofstream(dir_ + "/metrics.jsonl", std::ios::trunc);
    std::ofstream(dir_ + "/perf.jsonl", std::ios::trunc);
    std::ofstream(dir_ + "/run_log.txt", std::ios::trunc);
  }
}

void MetricsWriter::line(const std::string& file, const std::string& text) {
  std::ofstream out(dir_ + "/" + file, std::ios::app);
  out << text << "\n";
  out.flush();
}

void MetricsWriter::train(std::size_t step, double train_loss) {
  json j;
  j["step"] = step;
  j["train_loss"] = train_loss;
  line("metrics.jsonl", j.dump());
}

void MetricsWriter::eval(std::size_t step, double val_loss) {
  json j;
  j["step"] = step;
  j["val_loss"] = val_loss;
  line("metrics.jsonl", j.dump());
}

void MetricsWriter::perf(std::size_t step, double wall_ms, std::int64_t peak_bytes) {
  json j;
  j["step"] = step;
  j["wall_ms"] = wall_ms;
  j["peak_bytes"] = peak_bytes;
  line("perf.jsonl", j.dump());
}

void MetricsWriter::note(const std::string& text) { line("run_log.txt", text); }

std::vector<MetricRecord> read_metrics(const std::string& path) {
  std::vector<MetricRecord> out;
  std::ifstream in(path);
  std::string linebuf;
  while (std::getline(in, linebuf)) {
    if (linebuf.empty()) continue;
    json j = json::parse(linebuf, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded() || !j.contains("step")) continue;  // partial tail line
    MetricRecord rec;
    rec.step = j["step"].get<std::size_t>();
    if (j.contains("train_loss")) rec.train_loss = j["train_loss"].get<double>();
    if (j.contains("val_loss")) rec.val_loss = j["val_loss"].get<double>();
    out.push_back(rec);
  }
  return out;
}

namespace {

struct TaskSetup {
  std::unique_ptr<BatchSource> train;
  std::unique_ptr<BatchSource> val;
  std::shared_ptr<Corpus> corpus;
  std::size_t vocab = 0;
};

TaskSetup make_task(const RunConfig& cfg) {
  TaskSetup setup;
  if (cfg.task == "lm") {
    if (cfg.corpus.empty()) throw InputError("lm task requires --corpus");
    setup.corpus = std::make_shared<Corpus>(load_corpus(cfg.corpus));
    setup.vocab = setup.corpus->alphabet.vocab_size();
    setup.train = std::make_unique<LmSource>(*setup.corpus, false, cfg.batch_size,
                                             cfg.seq_len);
    setup.val = std::make_unique<LmSource>(*setup.corpus, true, cfg.batch_size,
                                           cfg.seq_len);
  } else {
    const TransductionTask task = transduction_task_from_string(cfg.task);
    setup.vocab = Alphabet::transduction().vocab_size();
    setup.train = std::make_unique<TransductionSource>(
        task, cfg.batch_size, cfg.train_len_lo, cfg.train_len_hi,
        derive_seed(cfg.seed, kTrainTag));
    setup.val = std::make_unique<TransductionSource>(
        task, cfg.batch_size, cfg.eval_len_lo, cfg.eval_len_hi,
        derive_seed(cfg.seed, kEvalTag));
  }
  return setup;
}

double eval_model(const LstmParams& params, BatchSource& val,
                  std::size_t n_batches) {
  val.reset();
  return evaluate(
      [&](const TaskBatch& b) { return forward_loss(params, b); }, val,
      n_batches);
}

std::string config_diff(const LstmConfig& a, const LstmConfig& b) {
  std::ostringstream out;
  auto field = [&](const char* name, std::size_t x, std::size_t y) {
    if (x != y) out << "  " << name << ": checkpoint=" << x << " run=" << y << "\n";
  };
  field("vocab_size", a.vocab_size, b.vocab_size);
  field("embed_dim", a.embed_dim, b.embed_dim);
  field("hidden_dim", a.hidden_dim, b.hidden_dim);
  field("num_layers", a.num_layers, b.num_layers);
  return out.str();
}

struct ResumeState {
  std::size_t step = 0;
  std::string ckpt;
  std::string opt;
};

void write_resume_state(const std::string& dir, const ResumeState& st) {
  std::ofstream out(dir + "/resume.txt", std::ios::trunc);
  out << "step=" << st.step << "\n";
  out << "ckpt=" << st.ckpt << "\n";
  if (!st.opt.empty()) out << "opt=" << st.opt << "\n";
}

ResumeState read_resume_state(const std::string& dir) {
  std::ifstream in(dir + "/resume.txt");
  if (!in) throw InputError("no resume.txt under " + dir);
  ResumeState st;
  std::string linebuf;
  while (std::getline(in, linebuf)) {
    const auto eq = linebuf.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = linebuf.substr(0, eq);
    const std::string value = linebuf.substr(eq + 1);
    if (key == "step") st.step = std::stoull(value);
    if (key == "ckpt") st.ckpt = value;
    if (key == "opt") st.opt = value;
  }
  if (st.ckpt.empty()) throw InputError("resume.txt missing ckpt under " + dir);
  return st;
}

std::string ckpt_name(std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_%06zu.bin", step);
  return buf;
}

}  // namespace

TrainResult cmd_train(const RunConfig& cfg) {
  if (cfg.out.empty()) throw InputError("train requires --out");
  if (cfg.optimizer != "cdrge" && cfg.optimizer != "fdrge" &&
      cfg.optimizer != "bptt") {
    throw InputError("unknown optimizer: " + cfg.optimizer);
  }
  fs::create_directories(cfg.out);
  {
    std::ofstream out(cfg.out + "/run_config.cfg", std::ios::trunc);
    out << "# resolved run configuration; re-run with --config <this file>\n";
    out << cfg.to_key_values();
  }

  TaskSetup task = make_task(cfg);
  const LstmConfig model_cfg = cfg.model_config(task.vocab);

  // resume bookkeeping
  std::size_t start_step = 0;
  LstmParams params;
  std::unique_ptr<AdamWState> opt_state;
  if (!cfg.resume.empty()) {
    const ResumeState st = read_resume_state(cfg.resume);
    params = load_checkpoint(cfg.resume + "/" + st.ckpt);
    if (!(params.config() == model_cfg)) {
      throw ConfigError("resume refused, config mismatch:\n" +
                        config_diff(params.config(), model_cfg));
    }
    if (!st.opt.empty()) {
      opt_state = std::make_unique<AdamWState>(
          load_opt_state(cfg.resume + "/" + st.opt));
    }
    start_step = st.step;
    task.train->skip(start_step);
  } else {
    params = init_params(model_cfg, derive_seed(cfg.seed, kInitTag));
  }

  const bool resuming = !cfg.resume.empty() && cfg.resume == cfg.out;
  MetricsWriter metrics(cfg.out, resuming);

  const bool zo = cfg.optimizer != "bptt";
  std::unique_ptr<BpttTrainer> trainer;
  std::unique_ptr<ModelBatchLoss> loss;
  std::unique_ptr<ParamServer> server;
  if (!zo) {
    trainer = std::make_unique<BpttTrainer>(model_cfg, cfg.adamw_config(),
                                            derive_seed(cfg.seed, kInitTag));
    trainer->load(params, opt_state.get());
  }
  if (zo && cfg.world_size > 1) {
    if (cfg.rank != 0) throw InputError("cmd_train runs on rank 0; use serve");
    server = std::make_unique<ParamServer>(cfg.dist_config());
    server->accept_workers();
  }

  auto current_params = [&]() -> LstmParams {
    if (!zo) return trainer->snapshot();
    if (loss) return loss->params();
    return params;
  };
  auto save_state = [&](std::size_t step) {
    const LstmParams snap = current_params();
    ResumeState st;
    st.step = step;
    st.ckpt = ckpt_name(step);
    save_checkpoint(cfg.out + "/" + st.ckpt, snap);
    if (!zo) {
      st.opt = "opt_" + std::to_string(step) + ".bin";
      save_opt_state(cfg.out + "/" + st.opt, trainer->opt_state());
    }
    write_resume_state(cfg.out, st);
    return st.ckpt;
  };

  TrainResult result;
  if (start_step == 0) {
    const double val0 = eval_model(current_params(), *task.val, cfg.eval_batches);
    metrics.eval(0, val0);
    result.final_val_loss = val0;
  }

  TaskBatch batch;
  StepConfig scfg = zo ? cfg.step_config() : StepConfig{};
  std::string last_ckpt = save_state(start_step);
  for (std::size_t s = start_step; s < cfg.steps; ++s) {
    batch = task.train->next();
    const auto t0 = std::chrono::steady_clock::now();
    const std::int64_t base = memtrack::reset_peak();
    double train_loss = 0.0;
    bool aborted = false;
    if (zo) {
      if (!loss) {
        loss = std::make_unique<ModelBatchLoss>(std::move(params), batch,
                                                cfg.chunk_size);
      } else {
        loss->set_batch(batch);
      }
      scfg.base_seed = derive_seed(cfg.seed, kStepTag, s);
      StepReport report;
      if (server) {
        report = server->step(*loss, scfg, batch);
      } else if (cfg.optimizer == "fdrge") {
        report = fdrge_step(*loss, scfg);
      } else {
        report = cdrge_step(*loss, scfg);
      }
      train_loss = report.mean_loss;
      aborted = report.aborted;
    } else {
      train_loss = trainer->step(batch);
      aborted = trainer->diverged();
    }
    const std::int64_t peak = memtrack::peak_bytes() - base;
    const double wall_ms =
        std::chrono::duration<double, std::milli>(
            std::chrono::steady_clock::now() - t0)
            .count();
    if (aborted) {
      metrics.note("aborted at step " + std::to_string(s + 1) +
                   " (non-finite loss or degraded session)");
      result.aborted = true;
      result.steps_run = s - start_step;
      result.checkpoint = last_ckpt;
      return result;
    }
    metrics.perf(s + 1, wall_ms, peak);
    metrics.train(s + 1, train_loss);
    if ((s + 1) % cfg.eval_interval == 0 || s + 1 == cfg.steps) {
      const double val = eval_model(current_params(), *task.val, cfg.eval_batches);
      metrics.eval(s + 1, val);
      last_ckpt = save_state(s + 1);
      result.final_val_loss = val;
    }
    ++result.steps_run;
  }
  if (server) server->shutdown();
  result.checkpoint = last_ckpt;
  return result;
}

double cmd_eval(const RunConfig& cfg) {
  TaskSetup task = make_task(cfg);
  const LstmConfig model_cfg = cfg.model_config(task.vocab);
  LstmParams params;
  if (!cfg.resume.empty()) {
    const ResumeState st = read_resume_state(cfg.resume);
    params = load_checkpoint(cfg.resume + "/" + st.ckpt);
    if (!(params.config() == model_cfg)) {
      throw ConfigError("eval refused, config mismatch:\n" +
                        config_diff(params.config(), model_cfg));
    }
  } else {
    params = init_params(model_cfg, derive_seed(cfg.seed, kInitTag));
  }
  return eval_model(params, *task.val, cfg.eval_batches);
}

std::vector<OverfitArm> cmd_overfit(const RunConfig& cfg) {
  const TransductionTask task = transduction_task_from_string(
      cfg.task == "lm" ? "copy" : cfg.task);
  const TaskBatch batch =
      gen_transduction(task, cfg.batch_size, cfg.train_len_lo, cfg.train_len_hi,
                       derive_seed(cfg.seed, kBatchTag));
  const LstmConfig model_cfg =
      cfg.model_config(Alphabet::transduction().vocab_size());
  const std::uint64_t init_seed = derive_seed(cfg.seed, kInitTag);

  std::vector<OverfitArm> arms;
  auto run_arm = [&](const std::string& optimizer, std::size_t n_pert) {
    OverfitArm arm;
    arm.optimizer = optimizer;
    arm.n_pert = n_pert;

    LstmParams params = init_params(model_cfg, init_seed);
    double clean = forward_loss(params, batch);
    if (clean < cfg.threshold) {
      arm.reached = true;
      arm.steps_to_threshold = 0;
      arm.final_loss = clean;
      arms.push_back(arm);
      return;
    }
    if (optimizer == "bptt") {
      BpttTrainer trainer(model_cfg, cfg.adamw_config(), init_seed);
      for (std::size_t s = 0; s < cfg.steps; ++s) {
        trainer.step(batch);
        if (trainer.diverged()) break;
        clean = forward_loss(trainer.snapshot(), batch);
        if (clean < cfg.threshold) {
          arm.reached = true;
          arm.steps_to_threshold = s + 1;
          break;
        }
      }
    } else {
      ModelBatchLoss loss(std::move(params), batch, cfg.chunk_size);
      StepConfig scfg = cfg.step_config();
      scfg.n_pert = n_pert;
      for (std::size_t s = 0; s < cfg.steps; ++s) {
        scfg.base_seed = derive_seed(cfg.seed, kStepTag, s);
        const StepReport report = cdrge_step(loss, scfg);
        if (report.aborted) break;
        clean = forward_loss(loss.params(), batch);
        if (clean < cfg.threshold) {
          arm.reached = true;
          arm.steps_to_threshold = s + 1;
          break;
        }
      }
    }
    arm.final_loss = clean;
    if (!arm.reached) arm.steps_to_threshold = cfg.steps;
    arms.push_back(arm);
  };

  run_arm("bptt", 0);
  for (const std::size_t n : parse_size_list(cfg.npert_list)) {
    run_arm("cdrge", n);
  }

  if (!cfg.out.empty()) {
    fs::create_directories(cfg.out);
    std::ofstream out(cfg.out + "/overfit.jsonl", std::ios::trunc);
    for (const auto& arm : arms) {
      json j;
      j["optimizer"] = arm.optimizer;
      j["n_pert"] = arm.n_pert;
      j["reached"] = arm.reached;
      j["steps_to_threshold"] = arm.steps_to_threshold;
      j["final_loss"] = arm.final_loss;
      out << j.dump() << "\n";
    }
  }
  return arms;
}

std::vector<DiagResult> cmd_diag(const RunConfig& cfg) {
  if (!(cfg.epsilon > 0.0)) throw InputError("diag: epsilon must be > 0");
  std::vector<DiagResult> rows;
  char buf[256];

  // family 1: antithetic forward equals central difference
  {
    bool pass = true;
    double worst = 0.0;
    for (int trial = 0; trial < 100 && pass; ++trial) {
      const std::uint64_t seed = derive_seed(cfg.seed, 0xD1A6, trial);
      RngStream rng(seed);
      const std::size_t d = 2 + rng.next_u64() % 8;
      std::vector<double> theta(d);
      for (auto& v : theta) v = 2.0 * rng.next_unit() - 1.0;
      VectorLoss loss(theta, trial % 2 == 0 ? Quadratic::random(d, seed).fn()
                                            : VectorLoss::Fn(ackley));
      const double eps = 1e-3 + rng.next_unit() * 0.1;
      const ProbeSpec spec{mix64(seed), Distribution::kRademacher, eps};
      const double clean = loss.eval();
      const double cd = cd_rge(loss, spec, RestoreMode::kExact);
      const double fdas = fd_antithetic(loss, spec, clean, RestoreMode::kExact);
      const double rel = std::abs(fdas - cd) /
                         std::max(1e-12, std::max(std::abs(fdas), std::abs(cd)));
      worst = std::max(worst, rel);
      pass = pass && rel < 1e-6;
    }
    std::snprintf(buf, sizeof(buf), "max relative gap %.3g (tolerance 1e-6)", worst);
    rows.push_back({"fd_antithetic == cd_rge", pass, buf});
  }

  // family 2: unbiasedness on a quadratic
  {
    const Quadratic q = Quadratic::random(10, derive_seed(cfg.seed, 0xD1A7));
    std::vector<double> theta(10);
    RngStream rng(derive_seed(cfg.seed, 0xD1A8));
    for (auto& v : theta) v = 2.0 * rng.next_unit() - 1.0;
    const auto grad = q.gradient(theta);
    VectorLoss loss(theta, q.fn());
    StepConfig scfg;
    scfg.epsilon = 1e-3;
    scfg.n_pert = 10000;
    scfg.base_seed = derive_seed(cfg.seed, 0xD1A9);
    const auto est = estimate_gradient(loss, scfg);
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j < est.size(); ++j) {
      num += (est[j] - grad[j]) * (est[j] - grad[j]);
      den += grad[j] * grad[j];
    }
    const double rel = std::sqrt(num / den);
    std::snprintf(buf, sizeof(buf),
                  "relative error %.4f at n_pert=10000 (tolerance 0.05)", rel);
    rows.push_back({"unbiasedness", rel < 0.05, buf});
  }

  // family 3: variance scales as 1/n_pert
  {
    const Quadratic q = Quadratic::random(50, derive_seed(cfg.seed, 0xD1AA));
    std::vector<double> theta(50, 0.3);
    VectorLoss loss(theta, q.fn());
    StepConfig scfg;
    scfg.epsilon = 1e-3;
    scfg.base_seed = derive_seed(cfg.seed, 0xD1AB);
    scfg.n_pert = 100;
    const double v100 = variance_probe(loss, scfg, std::size_t{200});
    scfg.n_pert = 400;
    const double v400 = variance_probe(loss, scfg, std::size_t{200});
    const double ratio = v100 / v400;
    std::snprintf(buf, sizeof(buf),
                  "variance ratio n_pert 100/400 = %.2f (expected near 4)", ratio);
    rows.push_back({"variance scaling", ratio > 2.6 && ratio < 6.0, buf});
  }

  // family 4: bias order (FD ~ epsilon, CD ~ epsilon^2) on theta^3 at 1
  {
    std::uint64_t plus_seed = 0;
    for (std::uint64_t s = 0;; ++s) {
      if (probe_entry({s, Distribution::kRademacher, 1.0}, 0) > 0) {
        plus_seed = s;
        break;
      }
    }
    auto cubic = [](std::span<const double> x) { return x[0] * x[0] * x[0]; };
    const double eps = 0.01;
    auto bias_at = [&](double e, bool central) {
      VectorLoss loss(std::vector<double>{1.0}, cubic);
      const ProbeSpec spec{plus_seed, Distribution::kRademacher, e};
      const double coeff =
          central ? cd_rge(loss, spec, RestoreMode::kExact)
                  : fd_rge(loss, spec, loss.eval(), RestoreMode::kExact);
      return std::abs(coeff - 3.0);  // derivative of x^3 at 1 is 3
    };
    const double fd_ratio = bias_at(eps, false) / bias_at(eps / 2, false);
    const double cd_ratio = bias_at(eps, true) / bias_at(eps / 2, true);
    std::snprintf(buf, sizeof(buf), "FD ratio %.3f (in [1.8,2.2]), CD ratio %.3f (in [3.5,4.5])",
                  fd_ratio, cd_ratio);
    rows.push_back({"bias order", fd_ratio > 1.8 && fd_ratio < 2.2 &&
                                      cd_ratio > 3.5 && cd_ratio < 4.5,
                    buf});
  }

  // family 5: smoothing sweep on Ackley (normal probes; Rademacher probes
  // at the origin collapse to a single shell point, which is not monotone)
  {
    VectorLoss loss(std::vector<double>(10, 0.0), ackley);
    const double sweep[] = {0.1, 0.5, 1.0, 1.7};
    double prev = -1.0;
    bool increasing = true;
    std::string values;
    for (const double e : sweep) {
      const auto est = smoothed_loss(loss, e, Distribution::kNormal, 100000,
                                     derive_seed(cfg.seed, 0xD1AC));
      increasing = increasing && est.mean > prev;
      prev = est.mean;
      char v[32];
      std::snprintf(v, sizeof(v), "%.3f ", est.mean);
      values += v;
    }
    rows.push_back({"smoothing sweep", increasing,
                    "L_e(0) over e in {0.1,0.5,1.0,1.7}: " + values});
  }

  return rows;
}

MemoryReport memory_report(const RunConfig& cfg, const std::string& optimizer,
                           std::size_t batch_size, std::size_t seq_len) {
  MemoryReport report;
  const LstmConfig model_cfg =
      cfg.model_config(Alphabet::transduction().vocab_size());
  const std::size_t H = model_cfg.hidden_dim;
  const std::size_t dim = param_count(model_cfg);

  // A: float64 tape values per (row, step): gates 4h + c + h per layer.
  report.activation_floats_per_step = model_cfg.num_layers * 6 * H;
  report.a_max_floats = 6 * H;
  report.bptt_tape_bytes = static_cast<std::uint64_t>(batch_size) * seq_len *
                           report.activation_floats_per_step * sizeof(double);
  report.theta_bytes = dim * sizeof(float);
  report.chunk_bytes = cfg.chunk_size * sizeof(float);
  report.zoo_bytes = static_cast<std::uint64_t>(batch_size) *
                         report.a_max_floats * sizeof(float) +
                     report.theta_bytes + report.chunk_bytes;

  // measured: one optimizer step on a SUM batch of exactly seq_len steps
  const TaskBatch batch =
      gen_transduction(TransductionTask::kSum, batch_size,
                       static_cast<int>(seq_len), static_cast<int>(seq_len),
                       derive_seed(cfg.seed, kBatchTag));
  LstmParams params = init_params(model_cfg, derive_seed(cfg.seed, kInitTag));
  if (optimizer == "bptt") {
    std::vector<double> theta64(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      theta64[j] = static_cast<double>(params.theta().values[j]);
    }
    report.measured_peak_bytes = memtrack::measure_delta_peak(
        [&] { (void)bptt_grad(model_cfg, theta64, batch); });
  } else {
    ModelBatchLoss loss(std::move(params), batch, cfg.chunk_size);
    StepConfig scfg = cfg.step_config();
    scfg.base_seed = derive_seed(cfg.seed, kStepTag, 0);
    report.measured_peak_bytes =
        memtrack::measure_delta_peak([&] { (void)cdrge_step(loss, scfg); });
  }
  return report;
}

int cmd_serve(const RunConfig& cfg) {
  if (cfg.world_size < 1) throw InputError("serve: world-size must be >= 1");
  if (cfg.rank == 0) {
    const TrainResult result = cmd_train(cfg);
    return result.aborted ? 2 : 0;
  }
  TaskSetup task = make_task(cfg);
  const LstmConfig model_cfg = cfg.model_config(task.vocab);
  const WorkerExit exit_code = serve_worker(cfg.dist_config(), model_cfg);
  return exit_code == WorkerExit::kShutdown ? 0 : 1;
}

}  // namespace zorn::run
