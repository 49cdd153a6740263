#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "zorn/model_loss.hpp"
#include "zorn/tasks.hpp"
#include "zorn/zoo.hpp"

namespace zorn {

// Wire frame: magic "ZRN1", one message-type byte, little-endian u64
// payload length, payload. Theta payloads are split into chunks of
// chunk_size floats.
enum class MsgType : std::uint8_t {
  kBroadcastTheta = 1,
  kBroadcastBatch = 2,
  kScatterSeeds = 3,
  kGatherLosses = 4,
  kShutdown = 5,
};

struct Frame {
  MsgType type = MsgType::kShutdown;
  std::vector<std::uint8_t> payload;
};

inline constexpr std::size_t kFrameHeaderBytes = 13;  // magic + type + length
inline constexpr std::size_t kMaxPayloadBytes = std::size_t{1} << 32;

std::vector<std::uint8_t> encode_frame(const Frame& frame);
// Throws ProtocolError on bad magic, unknown type, or truncation.
Frame decode_frame(const std::uint8_t* data, std::size_t size);

// Typed payloads.
struct ThetaChunkMsg {
  std::uint64_t total = 0;   // floats in the full vector
  std::uint64_t offset = 0;  // float offset of this chunk
  std::vector<float> data;
};
struct BatchMsg {
  std::uint64_t step = 0;
  TaskBatch batch;
};
struct SeedsMsg {
  std::uint64_t step = 0;
  double epsilon = 0.0;
  Distribution distribution = Distribution::kRademacher;
  RestoreMode restore = RestoreMode::kInPlace;
  std::vector<std::uint64_t> seeds;
};
struct LossesMsg {
  std::uint64_t rank = 0;
  std::uint64_t first_index = 0;  // m of the first pair carried
  std::vector<LossPair> pairs;
};
// A LossesMsg with this first_index and no pairs registers a worker.
inline constexpr std::uint64_t kRegisterIndex = ~std::uint64_t{0};

std::vector<std::uint8_t> encode_theta_chunk(const ThetaChunkMsg& msg);
ThetaChunkMsg decode_theta_chunk(const std::vector<std::uint8_t>& payload);
std::vector<std::uint8_t> encode_batch(const BatchMsg& msg);
BatchMsg decode_batch(const std::vector<std::uint8_t>& payload);
std::vector<std::uint8_t> encode_seeds(const SeedsMsg& msg);
SeedsMsg decode_seeds(const std::vector<std::uint8_t>& payload);
std::vector<std::uint8_t> encode_losses(const LossesMsg& msg);
LossesMsg decode_losses(const std::vector<std::uint8_t>& payload);

// Rank r of w; exactly one rank 0 per session. w = 1 degenerates to the
// sequential step.
struct RankRole {
  int rank = 0;
  int world_size = 1;
  std::string host = "127.0.0.1";
  std::uint16_t port = 29700;
};

enum class GatherMode : std::uint8_t {
  kPerPair = 0,  // one gather per perturbation, as the step loop runs
  kBatched = 1,  // all pairs of a rank in one frame
};

struct DistConfig {
  RankRole role;
  std::size_t chunk_size = kDefaultChunkSize;
  GatherMode gather = GatherMode::kPerPair;
  int timeout_ms = 30000;
  int connect_retry_ms = 10000;
};

// Per-rank perturbation seeds of one step: flat seeds probe_seed(base, i)
// in ascending i, sliced rank-major so rank r owns indices
// [r*(n/w), (r+1)*(n/w)). Throws InputError unless w divides n_pert.
// All seeds are checked globally unique.
struct SeedAssignment {
  std::size_t n_pert = 0;
  std::size_t world_size = 1;
  std::vector<std::uint64_t> flat;  // all n_pert seeds, rank-major

  static SeedAssignment make(const StepConfig& cfg, std::size_t world_size);
  std::size_t per_rank() const { return n_pert / world_size; }
  std::span<const std::uint64_t> rank_slice(std::size_t rank) const {
    return {flat.data() + rank * per_rank(), per_rank()};
  }
};

struct DistStats {
  std::uint64_t downstream_bytes = 0;  // rank-0 payload bytes sent, last step
  std::uint64_t upstream_bytes = 0;    // gather payload bytes received, last step
  bool degraded = false;               // a step aborted on timeout/disconnect
};

// Rank 0: owns the listener, the worker connections, and the canonical
// theta inside the given loss. Every step re-broadcasts theta and the
// batch, scatters seeds, evaluates its own slice, gathers loss pairs,
// flattens them in (rank, m) order and applies the update in ascending
// flattened index; with exact restore the result is bit-identical to the
// sequential step on the same machine.
class ParamServer {
 public:
  explicit ParamServer(const DistConfig& cfg);
  ~ParamServer();

  ParamServer(const ParamServer&) = delete;
  ParamServer& operator=(const ParamServer&) = delete;

  // Blocks until world_size - 1 workers registered. Throws ProtocolError
  // on timeout.
  void accept_workers();

  std::uint16_t bound_port() const;
  const DistStats& stats() const { return stats_; }

  // One distributed step; on worker timeout/disconnect the step aborts
  // with theta unchanged and the session marked degraded. A caller-built
  // assignment (e.g. a permuted one) overrides the default slicing; the
  // result always matches the sequential step over assignment.flat.
  StepReport step(ModelBatchLoss& loss, const StepConfig& cfg,
                  const TaskBatch& batch,
                  const SeedAssignment* assignment = nullptr);

  void shutdown();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  DistStats stats_;
};

enum class WorkerExit : std::uint8_t {
  kShutdown = 0,      // orderly shutdown frame received
  kDisconnected = 1,  // connection lost; diagnostic on stderr
};

// Worker loop: connect to rank 0, register, then serve perturbed forward
// passes until shutdown. Per seed it applies +e, evaluates L+, applies
// -2e, evaluates L-, restores, and replies with the (L-, L+) pair; memory
// stays at one theta copy (plus one snapshot under exact restore), the
// batch, and fixed forward scratch.
WorkerExit serve_worker(const DistConfig& cfg, const LstmConfig& model_cfg);

}  // namespace zorn
