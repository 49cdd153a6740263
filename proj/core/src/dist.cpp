#include "zorn/dist.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <iostream>
#include <set>
#include <thread>

#include "zorn/error.hpp"

namespace zorn {

namespace {

// --- little-endian payload packing ---------------------------------------

struct Writer {
  std::vector<std::uint8_t> buf;

  void u8(std::uint8_t v) { buf.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf.insert(buf.end(), b, b + n);
  }
};

struct Reader {
  const std::uint8_t* p;
  std::size_t n;
  std::size_t pos = 0;

  void need(std::size_t k) const {
    if (pos + k > n) throw ProtocolError("frame payload truncated");
  }
  std::uint8_t u8() {
    need(1);
    return p[pos++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  void done() const {
    if (pos != n) throw ProtocolError("frame payload has trailing bytes");
  }
};

constexpr char kMagic[4] = {'Z', 'R', 'N', '1'};

}  // namespace

std::vector<std::uint8_t> encode_frame(const Frame& frame) {
  if (frame.payload.size() > kMaxPayloadBytes) {
    throw ProtocolError("frame payload exceeds maximum");
  }
  Writer w;
  w.buf.reserve(kFrameHeaderBytes + frame.payload.size());
  w.bytes(kMagic, 4);
  w.u8(static_cast<std::uint8_t>(frame.type));
  w.u64(frame.payload.size());
  w.bytes(frame.payload.data(), frame.payload.size());
  return w.buf;
}

Frame decode_frame(const std::uint8_t* data, std::size_t size) {
  if (size < kFrameHeaderBytes) throw ProtocolError("frame shorter than header");
  if (std::memcmp(data, kMagic, 4) != 0) throw ProtocolError("bad frame magic");
  const std::uint8_t type = data[4];
  if (type < 1 || type > 5) {
    throw ProtocolError("unknown frame type " + std::to_string(type));
  }
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(data[5 + i]) << (8 * i);
  if (len > kMaxPayloadBytes) throw ProtocolError("frame payload exceeds maximum");
  if (size != kFrameHeaderBytes + len) throw ProtocolError("frame length mismatch");
  Frame f;
  f.type = static_cast<MsgType>(type);
  f.payload.assign(data + kFrameHeaderBytes, data + size);
  return f;
}

std::vector<std::uint8_t> encode_theta_chunk(const ThetaChunkMsg& msg) {
  Writer w;
  w.buf.reserve(16 + 4 * msg.data.size());
  w.u64(msg.total);
  w.u64(msg.offset);
  for (const float v : msg.data) w.f32(v);
  return w.buf;
}

ThetaChunkMsg decode_theta_chunk(const std::vector<std::uint8_t>& payload) {
  Reader r{payload.data(), payload.size()};
  ThetaChunkMsg msg;
  msg.total = r.u64();
  msg.offset = r.u64();
  if ((payload.size() - 16) % 4 != 0) throw ProtocolError("theta chunk misaligned");
  msg.data.resize((payload.size() - 16) / 4);
  for (auto& v : msg.data) v = r.f32();
  r.done();
  return msg;
}

std::vector<std::uint8_t> encode_batch(const BatchMsg& msg) {
  const TaskBatch& b = msg.batch;
  Writer w;
  w.buf.reserve(24 + b.inputs.size() * 9 + b.lengths.size() * 4);
  w.u64(msg.step);
  w.u32(static_cast<std::uint32_t>(b.batch));
  w.u32(static_cast<std::uint32_t>(b.steps));
  for (const auto v : b.inputs) w.i32(v);
  for (const auto v : b.targets) w.i32(v);
  w.bytes(b.mask.data(), b.mask.size());
  for (const auto v : b.lengths) w.i32(v);
  return w.buf;
}

BatchMsg decode_batch(const std::vector<std::uint8_t>& payload) {
  Reader r{payload.data(), payload.size()};
  BatchMsg msg;
  msg.step = r.u64();
  TaskBatch& b = msg.batch;
  b.batch = r.u32();
  b.steps = r.u32();
  const std::size_t cells = b.batch * b.steps;
  b.inputs.resize(cells);
  for (auto& v : b.inputs) v = r.i32();
  b.targets.resize(cells);
  for (auto& v : b.targets) v = r.i32();
  b.mask.resize(cells);
  r.need(cells);
  std::memcpy(b.mask.data(), r.p + r.pos, cells);
  r.pos += cells;
  b.lengths.resize(b.batch);
  for (auto& v : b.lengths) v = r.i32();
  r.done();
  return msg;
}

std::vector<std::uint8_t> encode_seeds(const SeedsMsg& msg) {
  Writer w;
  w.buf.reserve(26 + 8 * msg.seeds.size());
  w.u64(msg.step);
  w.f64(msg.epsilon);
  w.u8(static_cast<std::uint8_t>(msg.distribution));
  w.u8(static_cast<std::uint8_t>(msg.restore));
  w.u64(msg.seeds.size());
  for (const auto s : msg.seeds) w.u64(s);
  return w.buf;
}

SeedsMsg decode_seeds(const std::vector<std::uint8_t>& payload) {
  Reader r{payload.data(), payload.size()};
  SeedsMsg msg;
  msg.step = r.u64();
  msg.epsilon = r.f64();
  msg.distribution = static_cast<Distribution>(r.u8());
  msg.restore = static_cast<RestoreMode>(r.u8());
  msg.seeds.resize(r.u64());
  for (auto& s : msg.seeds) s = r.u64();
  r.done();
  return msg;
}

std::vector<std::uint8_t> encode_losses(const LossesMsg& msg) {
  Writer w;
  w.buf.reserve(24 + 16 * msg.pairs.size());
  w.u64(msg.rank);
  w.u64(msg.first_index);
  w.u64(msg.pairs.size());
  for (const auto& p : msg.pairs) {
    w.f64(p.minus);
    w.f64(p.plus);
  }
  return w.buf;
}

LossesMsg decode_losses(const std::vector<std::uint8_t>& payload) {
  Reader r{payload.data(), payload.size()};
  LossesMsg msg;
  msg.rank = r.u64();
  msg.first_index = r.u64();
  msg.pairs.resize(r.u64());
  for (auto& p : msg.pairs) {
    p.minus = r.f64();
    p.plus = r.f64();
  }
  r.done();
  return msg;
}

SeedAssignment SeedAssignment::make(const StepConfig& cfg,
                                    std::size_t world_size) {
  if (world_size == 0) throw InputError("SeedAssignment: world_size must be >= 1");
  if (cfg.n_pert % world_size != 0) {
    throw InputError("SeedAssignment: n_pert (" + std::to_string(cfg.n_pert) +
                     ") not divisible by world size (" +
                     std::to_string(world_size) + ")");
  }
  SeedAssignment sa;
  sa.n_pert = cfg.n_pert;
  sa.world_size = world_size;
  sa.flat.resize(cfg.n_pert);
  std::set<std::uint64_t> unique;
  for (std::size_t i = 0; i < cfg.n_pert; ++i) {
    sa.flat[i] = probe_seed(cfg.base_seed, i);
    if (!unique.insert(sa.flat[i]).second) {
      throw InputError("SeedAssignment: seed collision within step");
    }
  }
  return sa;
}

// --- socket plumbing -------------------------------------------------------

namespace {

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket() { close_now(); }
  Socket(Socket&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close_now();
      fd_ = o.fd_;
      o.fd_ = -1;
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void close_now() {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

  void send_all(const std::uint8_t* data, std::size_t n) {
    std::size_t sent = 0;
    while (sent < n) {
      const ssize_t k = ::send(fd_, data + sent, n - sent, MSG_NOSIGNAL);
      if (k <= 0) throw ProtocolError("socket send failed");
      sent += static_cast<std::size_t>(k);
    }
  }

  // false on orderly EOF before any byte; throws on timeout/error.
  bool recv_exact(std::uint8_t* data, std::size_t n, int timeout_ms) {
    std::size_t got = 0;
    while (got < n) {
      pollfd pfd{fd_, POLLIN, 0};
      const int pr = ::poll(&pfd, 1, timeout_ms);
      if (pr == 0) throw ProtocolError("socket receive timeout");
      if (pr < 0) throw ProtocolError("socket poll failed");
      const ssize_t k = ::recv(fd_, data + got, n - got, 0);
      if (k == 0) {
        if (got == 0) return false;
        throw ProtocolError("socket closed mid-frame");
      }
      if (k < 0) throw ProtocolError("socket recv failed");
      got += static_cast<std::size_t>(k);
    }
    return true;
  }

 private:
  int fd_ = -1;
};

sockaddr_in make_addr(const std::string& host, std::uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    throw InputError("dist: cannot parse IPv4 address: " + host);
  }
  return addr;
}

Socket make_listener(const std::string& host, std::uint16_t port) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw ProtocolError("dist: cannot create socket");
  Socket s(fd);
  const int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr = make_addr(host, port);
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    throw ProtocolError("dist: cannot bind " + host + ":" + std::to_string(port));
  }
  if (::listen(fd, 16) != 0) throw ProtocolError("dist: listen failed");
  return s;
}

std::uint16_t local_port(const Socket& s) {
  sockaddr_in addr{};
  socklen_t len = sizeof(addr);
  if (::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len) != 0) {
    throw ProtocolError("dist: getsockname failed");
  }
  return ntohs(addr.sin_port);
}

Socket connect_with_retry(const std::string& host, std::uint16_t port,
                          int budget_ms) {
  const auto deadline = std::chrono::steady_clock::now() +
                        std::chrono::milliseconds(budget_ms);
  sockaddr_in addr = make_addr(host, port);
  for (;;) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw ProtocolError("dist: cannot create socket");
    Socket s(fd);
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0) {
      const int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      return s;
    }
    if (std::chrono::steady_clock::now() >= deadline) {
      throw ProtocolError("dist: cannot connect to " + host + ":" +
                          std::to_string(port));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
}

void write_frame(Socket& s, MsgType type, const std::vector<std::uint8_t>& payload) {
  Frame f{type, payload};
  const auto bytes = encode_frame(f);
  s.send_all(bytes.data(), bytes.size());
}

// empty optional on orderly EOF at a frame boundary
std::optional<Frame> read_frame(Socket& s, int timeout_ms) {
  std::uint8_t header[kFrameHeaderBytes];
  if (!s.recv_exact(header, kFrameHeaderBytes, timeout_ms)) return std::nullopt;
  if (std::memcmp(header, kMagic, 4) != 0) throw ProtocolError("bad frame magic");
  const std::uint8_t type = header[4];
  if (type < 1 || type > 5) {
    throw ProtocolError("unknown frame type " + std::to_string(type));
  }
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(header[5 + i]) << (8 * i);
  if (len > kMaxPayloadBytes) throw ProtocolError("frame payload exceeds maximum");
  Frame f;
  f.type = static_cast<MsgType>(type);
  f.payload.resize(len);
  if (len > 0 && !s.recv_exact(f.payload.data(), len, timeout_ms)) {
    throw ProtocolError("socket closed mid-frame");
  }
  return f;
}

}  // namespace

// --- rank 0 ---------------------------------------------------------------

struct ParamServer::Impl {
  DistConfig cfg;
  Socket listener;
  std::vector<Socket> workers;     // index rank-1
  std::uint64_t step_counter = 0;
  bool shut = false;
};

ParamServer::ParamServer(const DistConfig& cfg) : impl_(new Impl) {
  impl_->cfg = cfg;
  if (cfg.role.rank != 0) throw InputError("ParamServer: role must be rank 0");
  if (cfg.role.world_size < 1) throw InputError("ParamServer: world_size >= 1");
  if (cfg.role.world_size > 1) {
    impl_->listener = make_listener(cfg.role.host, cfg.role.port);
    impl_->workers.resize(cfg.role.world_size - 1);
  }
}

ParamServer::~ParamServer() {
  try {
    shutdown();
  } catch (...) {
  }
}

std::uint16_t ParamServer::bound_port() const {
  if (!impl_->listener.valid()) return impl_->cfg.role.port;
  return local_port(impl_->listener);
}

void ParamServer::accept_workers() {
  const int w = impl_->cfg.role.world_size;
  int registered = 0;
  while (registered < w - 1) {
    pollfd pfd{impl_->listener.fd(), POLLIN, 0};
    const int pr = ::poll(&pfd, 1, impl_->cfg.timeout_ms);
    if (pr == 0) throw ProtocolError("dist: timed out waiting for workers");
    if (pr < 0) throw ProtocolError("dist: poll failed while accepting");
    const int fd = ::accept(impl_->listener.fd(), nullptr, nullptr);
    if (fd < 0) throw ProtocolError("dist: accept failed");
    Socket sock(fd);
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    auto frame = read_frame(sock, impl_->cfg.timeout_ms);
    if (!frame || frame->type != MsgType::kGatherLosses) {
      throw ProtocolError("dist: worker did not register");
    }
    const LossesMsg reg = decode_losses(frame->payload);
    if (reg.first_index != kRegisterIndex || !reg.pairs.empty()) {
      throw ProtocolError("dist: malformed worker registration");
    }
    if (reg.rank < 1 || reg.rank >= static_cast<std::uint64_t>(w)) {
      throw ProtocolError("dist: worker rank " + std::to_string(reg.rank) +
                          " out of range");
    }
    Socket& slot = impl_->workers[reg.rank - 1];
    if (slot.valid()) {
      throw ProtocolError("dist: duplicate registration for rank " +
                          std::to_string(reg.rank));
    }
    slot = std::move(sock);
    ++registered;
  }
}

void ParamServer::shutdown() {
  if (impl_->shut) return;
  impl_->shut = true;
  for (auto& w : impl_->workers) {
    if (!w.valid()) continue;
    try {
      write_frame(w, MsgType::kShutdown, {});
    } catch (...) {
    }
    w.close_now();
  }
}

StepReport ParamServer::step(ModelBatchLoss& loss, const StepConfig& cfg,
                             const TaskBatch& batch,
                             const SeedAssignment* assignment) {
  cfg.validate();
  const auto w = static_cast<std::size_t>(impl_->cfg.role.world_size);
  SeedAssignment local;
  if (assignment == nullptr) {
    local = SeedAssignment::make(cfg, w);
    assignment = &local;
  }
  if (assignment->n_pert != cfg.n_pert || assignment->world_size != w) {
    throw InputError("ParamServer::step: assignment shape mismatch");
  }

  if (w == 1) {
    stats_ = DistStats{0, 0, stats_.degraded};
    return cdrge_step_with_seeds(loss, cfg, assignment->flat);
  }

  const std::uint64_t step_id = impl_->step_counter++;
  stats_.downstream_bytes = 0;
  stats_.upstream_bytes = 0;

  // broadcast theta in chunks, then the batch, then scatter seed slices
  const auto& theta = loss.params().theta().values;
  const std::size_t total = theta.size();
  for (std::size_t off = 0; off < total; off += impl_->cfg.chunk_size) {
    const std::size_t n = std::min(impl_->cfg.chunk_size, total - off);
    ThetaChunkMsg chunk{total, off, {theta.begin() + static_cast<std::ptrdiff_t>(off),
                                     theta.begin() + static_cast<std::ptrdiff_t>(off + n)}};
    const auto payload = encode_theta_chunk(chunk);
    for (auto& worker : impl_->workers) {
      write_frame(worker, MsgType::kBroadcastTheta, payload);
      stats_.downstream_bytes += payload.size();
    }
  }
  {
    const auto payload = encode_batch(BatchMsg{step_id, batch});
    for (auto& worker : impl_->workers) {
      write_frame(worker, MsgType::kBroadcastBatch, payload);
      stats_.downstream_bytes += payload.size();
    }
  }
  for (std::size_t r = 1; r < w; ++r) {
    SeedsMsg msg;
    msg.step = step_id;
    msg.epsilon = cfg.epsilon;
    msg.distribution = cfg.distribution;
    msg.restore = cfg.restore;
    const auto slice = assignment->rank_slice(r);
    msg.seeds.assign(slice.begin(), slice.end());
    const auto payload = encode_seeds(msg);
    write_frame(impl_->workers[r - 1], MsgType::kScatterSeeds, payload);
    stats_.downstream_bytes += payload.size();
  }

  // rank 0 evaluates its own slice while workers run theirs
  const std::size_t npp = assignment->per_rank();
  std::vector<ProbeSpec> specs(cfg.n_pert);
  for (std::size_t i = 0; i < cfg.n_pert; ++i) {
    specs[i] = ProbeSpec{assignment->flat[i], cfg.distribution, cfg.epsilon};
  }
  StepReport report;
  report.seeds = assignment->flat;
  report.pairs.assign(cfg.n_pert, LossPair{});
  bool finite = true;
  for (std::size_t m = 0; m < npp; ++m) {
    report.pairs[m] = cd_pair(loss, specs[m], cfg.restore);
    if (!std::isfinite(report.pairs[m].plus) ||
        !std::isfinite(report.pairs[m].minus)) {
      finite = false;
      break;
    }
  }

  // gather worker pairs; frames from one rank arrive in m order. Counting
  // pairs (not frames) keeps rank 0 agnostic to the workers' gather mode.
  std::vector<std::size_t> received(w, 0);  // pairs received per rank
  std::size_t pairs_left = npp * (w - 1);
  bool timed_out = false;
  while (pairs_left > 0) {
    std::vector<pollfd> pfds;
    pfds.reserve(w - 1);
    for (auto& worker : impl_->workers) {
      pfds.push_back({worker.fd(), POLLIN, 0});
    }
    const int pr = ::poll(pfds.data(), pfds.size(), impl_->cfg.timeout_ms);
    if (pr == 0) {
      timed_out = true;
      break;
    }
    if (pr < 0) throw ProtocolError("dist: poll failed during gather");
    for (std::size_t k = 0; k < pfds.size(); ++k) {
      if (!(pfds[k].revents & (POLLIN | POLLHUP | POLLERR))) continue;
      const std::size_t rank = k + 1;
      std::optional<Frame> frame;
      try {
        frame = read_frame(impl_->workers[k], impl_->cfg.timeout_ms);
      } catch (const ProtocolError&) {
        frame = std::nullopt;
      }
      if (!frame) {
        timed_out = true;  // disconnect mid-step aborts like a timeout
        pairs_left = 0;
        break;
      }
      if (frame->type != MsgType::kGatherLosses) {
        throw ProtocolError("dist: unexpected frame type from rank " +
                            std::to_string(rank));
      }
      LossesMsg msg = decode_losses(frame->payload);
      stats_.upstream_bytes += frame->payload.size();
      if (msg.rank != rank) {
        throw ProtocolError("dist: rank mismatch in gather (socket rank " +
                            std::to_string(rank) + ", frame rank " +
                            std::to_string(msg.rank) + ")");
      }
      if (msg.first_index != received[rank]) {
        throw ProtocolError("dist: out-of-order gather from rank " +
                            std::to_string(rank));
      }
      if (received[rank] + msg.pairs.size() > npp) {
        throw ProtocolError("dist: too many pairs from rank " +
                            std::to_string(rank));
      }
      for (std::size_t j = 0; j < msg.pairs.size(); ++j) {
        const auto& p = msg.pairs[j];
        report.pairs[rank * npp + received[rank] + j] = p;
        if (!std::isfinite(p.plus) || !std::isfinite(p.minus)) finite = false;
      }
      received[rank] += msg.pairs.size();
      pairs_left -= msg.pairs.size();
      if (pairs_left == 0) break;
    }
  }

  if (timed_out) {
    stats_.degraded = true;
    report.aborted = true;
    report.pairs.clear();
    return report;
  }
  if (!finite) {
    report.aborted = true;
    report.pairs.clear();
    return report;
  }

  const double ratio = cfg.resolved_eta() / cfg.epsilon;
  const double scale = 1.0 / (2.0 * static_cast<double>(cfg.n_pert));
  report.alphas.resize(cfg.n_pert);
  std::vector<double> neg(cfg.n_pert);
  double loss_sum = 0.0;
  for (std::size_t i = 0; i < cfg.n_pert; ++i) {
    const auto& p = report.pairs[i];
    report.alphas[i] = ratio * (p.plus - p.minus) * scale;
    neg[i] = -report.alphas[i];
    loss_sum += 0.5 * (p.plus + p.minus);
  }
  report.mean_loss = loss_sum / static_cast<double>(cfg.n_pert);
  report.update_norm = std::sqrt(loss.apply_probe_batch(neg, specs));
  return report;
}

// --- worker -----------------------------------------------------------------

WorkerExit serve_worker(const DistConfig& cfg, const LstmConfig& model_cfg) {
  model_cfg.validate();
  const std::size_t expected_dim = param_count(model_cfg);
  try {
    Socket sock = connect_with_retry(cfg.role.host, cfg.role.port,
                                     cfg.connect_retry_ms);
    {
      LossesMsg reg;
      reg.rank = static_cast<std::uint64_t>(cfg.role.rank);
      reg.first_index = kRegisterIndex;
      write_frame(sock, MsgType::kGatherLosses, encode_losses(reg));
    }

    std::vector<float> theta(expected_dim, 0.0f);
    std::size_t theta_received = 0;
    bool theta_ready = false;
    TaskBatch batch;
    bool batch_ready = false;

    for (;;) {
      auto frame = read_frame(sock, -1);
      if (!frame) {
        std::cerr << "[zorn worker " << cfg.role.rank
                  << "] connection closed by rank 0\n";
        return WorkerExit::kDisconnected;
      }
      switch (frame->type) {
        case MsgType::kBroadcastTheta: {
          ThetaChunkMsg chunk = decode_theta_chunk(frame->payload);
          if (chunk.total != expected_dim) {
            throw ProtocolError("worker: theta size " + std::to_string(chunk.total) +
                                " != model size " + std::to_string(expected_dim));
          }
          if (chunk.offset == 0) theta_received = 0;
          if (chunk.offset != theta_received ||
              chunk.offset + chunk.data.size() > expected_dim) {
            throw ProtocolError("worker: theta chunk out of order");
          }
          std::copy(chunk.data.begin(), chunk.data.end(),
                    theta.begin() + static_cast<std::ptrdiff_t>(chunk.offset));
          theta_received += chunk.data.size();
          theta_ready = theta_received == expected_dim;
          break;
        }
        case MsgType::kBroadcastBatch: {
          batch = decode_batch(frame->payload).batch;
          batch_ready = true;
          break;
        }
        case MsgType::kScatterSeeds: {
          if (!theta_ready || !batch_ready) {
            throw ProtocolError("worker: seeds before theta/batch");
          }
          const SeedsMsg msg = decode_seeds(frame->payload);
          ParamVector pv;
          pv.values = theta;
          ModelBatchLoss local(LstmParams(model_cfg, std::move(pv)), batch,
                               cfg.chunk_size);
          LossesMsg reply;
          reply.rank = static_cast<std::uint64_t>(cfg.role.rank);
          if (msg.seeds.empty()) {
            reply.first_index = 0;
            write_frame(sock, MsgType::kGatherLosses, encode_losses(reply));
            break;
          }
          for (std::size_t m = 0; m < msg.seeds.size(); ++m) {
            const ProbeSpec spec{msg.seeds[m], msg.distribution, msg.epsilon};
            const LossPair pair = cd_pair(local, spec, msg.restore);
            if (cfg.gather == GatherMode::kPerPair) {
              reply.first_index = m;
              reply.pairs = {pair};
              write_frame(sock, MsgType::kGatherLosses, encode_losses(reply));
            } else {
              reply.pairs.push_back(pair);
            }
          }
          if (cfg.gather == GatherMode::kBatched) {
            reply.first_index = 0;
            write_frame(sock, MsgType::kGatherLosses, encode_losses(reply));
          }
          break;
        }
        case MsgType::kShutdown:
          return WorkerExit::kShutdown;
        case MsgType::kGatherLosses:
          throw ProtocolError("worker: unexpected gather frame");
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "[zorn worker " << cfg.role.rank << "] " << e.what() << "\n";
    return WorkerExit::kDisconnected;
  }
}

}  // namespace zorn
