#include "retide/service.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <csignal>
#include <cstring>
#include <deque>
#include <future>

#include "retide/errors.hpp"
#include "retide/int8_engine.hpp"
#include "retide/log.hpp"
#include "retide/parallel.hpp"
#include "retide/pixels.hpp"
#include "retide/tiler.hpp"

namespace retide {

namespace {

void write_all(int fd, const std::uint8_t* p, std::size_t n) {
  while (n > 0) {
    const ssize_t r = ::send(fd, p, n, MSG_NOSIGNAL);
    if (r <= 0) throw ConnectionError(std::string("send failed: ") + std::strerror(errno));
    p += r;
    n -= std::size_t(r);
  }
}

// false on clean EOF at the first byte, throws on mid-message EOF
bool read_all(int fd, std::uint8_t* p, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t r = ::recv(fd, p + got, n - got, 0);
    if (r == 0) {
      if (got == 0) return false;
      throw IncompleteMessage("connection closed mid-message");
    }
    if (r < 0) {
      if (errno == EINTR) continue;
      throw ConnectionError(std::string("recv failed: ") + std::strerror(errno));
    }
    got += std::size_t(r);
  }
  return true;
}

void send_message(int fd, const Message& m) {
  const auto frame = encode_message(m);
  write_all(fd, frame.data(), frame.size());
}

// Reads one frame; empty optional on clean EOF before a header.
std::optional<Message> recv_message(int fd, std::uint64_t max_payload) {
  std::uint8_t hdr[kHeaderSize];
  if (!read_all(fd, hdr, kHeaderSize)) return std::nullopt;
  const MessageHeader h = decode_header({hdr, kHeaderSize}, max_payload);
  std::vector<std::uint8_t> payload(h.payload_len);
  if (h.payload_len > 0 && !read_all(fd, payload.data(), payload.size()))
    throw IncompleteMessage("connection closed mid-message");
  return decode_payload(h.msg_type, payload);
}

TensorF32 request_to_planar(const DenoiseRequest& req) {
  if (req.bit_depth == 8)
    return interleaved_u8_to_planar(req.pixels.data(), int(req.width), int(req.height),
                                    req.channels);
  return interleaved_f32_to_planar(req.pixels.data(), int(req.width), int(req.height),
                                   req.channels);
}

} // namespace

// ---- Server ----

struct Server::Conn {
  int fd = -1;
  std::thread reader;
  std::thread writer;
  // responses in request arrival order
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::shared_future<Message>> order;
  bool done = false; // no more responses will be queued

  void push(std::shared_future<Message> f) {
    {
      std::lock_guard lk(mu);
      order.push_back(std::move(f));
    }
    cv.notify_one();
  }
  void finish() {
    {
      std::lock_guard lk(mu);
      done = true;
    }
    cv.notify_one();
  }
};

Server::Server(ServerConfig cfg) : cfg_(std::move(cfg)) {
  auto loaded = std::make_shared<LoadedModel>(load_model(cfg_.model_path));
  if (!loaded->fp32 && !loaded->quantized)
    throw std::invalid_argument("model file has no weights: " + cfg_.model_path);
  validate_accumulator_bounds(loaded->graph);
  model_ = std::move(loaded);

  pool_ = std::make_unique<WorkerPool>(cfg_.workers);

  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw ConnectionError("socket() failed");
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(cfg_.port);
  if (::inet_pton(AF_INET, cfg_.host.c_str(), &addr.sin_addr) != 1)
    throw std::invalid_argument("bad listen address: " + cfg_.host);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0)
    throw ConnectionError(std::string("bind failed: ") + std::strerror(errno));
  if (::listen(listen_fd_, 64) < 0)
    throw ConnectionError(std::string("listen failed: ") + std::strerror(errno));

  sockaddr_in bound{};
  socklen_t blen = sizeof(bound);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &blen);
  bound_port_ = ntohs(bound.sin_port);
}

Server::~Server() { stop(); }

void Server::start() {
  accept_thread_ = std::thread([this] { accept_loop(); });
  RETIDE_LOG_INFO("serving on %s:%u (%zu workers, %s model)", cfg_.host.c_str(),
                  unsigned(bound_port_), pool_->thread_count(),
                  model_->has_quantized() ? "int8" : "fp32");
}

void Server::wait() {
  std::unique_lock lk(stop_mu_);
  stop_cv_.wait(lk, [this] { return stopped_; });
}

void Server::stop() {
  if (stopping_.exchange(true)) return;
  if (listen_fd_ >= 0) {
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
  if (accept_thread_.joinable()) accept_thread_.join();
  std::vector<std::shared_ptr<Conn>> conns;
  {
    std::lock_guard lk(conns_mu_);
    conns.swap(conns_);
  }
  for (auto& c : conns) {
    ::shutdown(c->fd, SHUT_RDWR);
    if (c->reader.joinable()) c->reader.join();
    if (c->writer.joinable()) c->writer.join();
    ::close(c->fd);
  }
  {
    std::lock_guard lk(stop_mu_);
    stopped_ = true;
  }
  stop_cv_.notify_all();
}

void Server::accept_loop() {
  for (;;) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (stopping_) return;
      if (errno == EINTR) continue;
      return;
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    auto conn = std::make_shared<Conn>();
    conn->fd = fd;
    {
      std::lock_guard lk(conns_mu_);
      conns_.push_back(conn);
    }
    conn->reader = std::thread([this, conn] { reader_loop(conn); });
    conn->writer = std::thread([this, conn] { writer_loop(conn); });
  }
}

void Server::reader_loop(std::shared_ptr<Conn> conn) {
  try {
    for (;;) {
      auto msg = recv_message(conn->fd, cfg_.max_payload);
      if (!msg) break; // clean EOF
      if (std::holds_alternative<PingMsg>(*msg)) {
        std::promise<Message> p;
        p.set_value(PongMsg{});
        conn->push(p.get_future().share());
      } else if (std::holds_alternative<ModelInfoRequest>(*msg)) {
        ModelInfoResponse info;
        info.cin = std::uint8_t(model_->graph.cin);
        info.cout = std::uint8_t(model_->graph.cout);
        info.quantized = model_->has_quantized() ? 1 : 0;
        info.input_exp =
            model_->has_quantized() ? std::int8_t(model_->quantized->input_exp()) : std::int8_t(0);
        info.layer_count = std::uint32_t(model_->graph.layers.size());
        std::uint64_t params = 0;
        if (model_->has_quantized())
          for (const auto& [id, k] : model_->quantized->weights) params += k.data.size();
        else
          for (const auto& [id, k] : model_->fp32->kernels) params += k.data.size();
        info.param_count = params;
        std::promise<Message> p;
        p.set_value(info);
        conn->push(p.get_future().share());
      } else if (auto* req = std::get_if<DenoiseRequest>(&*msg)) {
        // orchestrate each job on its own thread so pool workers only ever
        // run tile tasks and never block on tile futures
        conn->push(std::async(std::launch::async,
                              [this, r = std::move(*req)] { return run_job(r); })
                       .share());
      } else {
        // clients must not send server-only message types
        std::promise<Message> p;
        p.set_value(ErrorMsg{0, "unexpected message type"});
        conn->push(p.get_future().share());
        break;
      }
    }
  } catch (const ProtocolViolation& e) {
    RETIDE_LOG_WARN("protocol violation: %s", e.what());
    std::promise<Message> p;
    p.set_value(ErrorMsg{0, e.what()});
    conn->push(p.get_future().share());
  } catch (const std::exception& e) {
    RETIDE_LOG_WARN("connection dropped: %s", e.what());
  }
  conn->finish();
}

void Server::writer_loop(std::shared_ptr<Conn> conn) {
  for (;;) {
    std::shared_future<Message> next;
    {
      std::unique_lock lk(conn->mu);
      conn->cv.wait(lk, [&] { return !conn->order.empty() || conn->done; });
      if (conn->order.empty()) break;
      next = conn->order.front();
      conn->order.pop_front();
    }
    Message m = next.get(); // job results arrive in arrival order
    try {
      send_message(conn->fd, m);
    } catch (const std::exception&) {
      break; // peer gone; keep draining futures via loop exit
    }
  }
  ::shutdown(conn->fd, SHUT_WR);
}

Message Server::run_job(const DenoiseRequest& req) {
  try {
    if (int(req.channels) != model_->graph.cin)
      throw std::invalid_argument("request has " + std::to_string(req.channels) +
                                  " channels but the model expects " +
                                  std::to_string(model_->graph.cin));
    const TensorF32 frame = request_to_planar(req);
    const TilePlan plan = plan_tiles(frame.w, frame.h, req.tile, req.overlap);
    auto tiles = extract(frame, plan);

    // fan tiles out over the shared pool, index-addressed assembly
    std::vector<IndexedTile> done(tiles.size());
    std::vector<std::future<void>> futs;
    futs.reserve(tiles.size());
    std::atomic<bool> failed{false};
    std::exception_ptr err;
    std::mutex err_mu;
    for (std::size_t i = 0; i < tiles.size(); ++i) {
      futs.push_back(pool_->submit([&, i] {
        if (failed.load(std::memory_order_relaxed)) return;
        try {
          const TensorF32& in = tiles[i];
          TensorF32 out = model_->has_quantized() ? forward_i8(*model_->quantized, in)
                                                  : forward_f32(model_->graph, *model_->fp32, in);
          done[i] = IndexedTile{i, std::move(out)};
        } catch (...) {
          std::lock_guard lk(err_mu);
          if (!err) err = std::current_exception();
          failed.store(true, std::memory_order_relaxed);
        }
      }));
    }
    for (auto& f : futs) f.get();
    if (err) std::rethrow_exception(err);

    const TensorF32 result = assemble(done, plan);

    DenoiseResponse resp;
    resp.job_id = req.job_id;
    resp.status = 0;
    resp.width = req.width;
    resp.height = req.height;
    resp.channels = req.channels;
    resp.bit_depth = req.bit_depth;
    resp.pixels =
        req.bit_depth == 8 ? planar_to_interleaved_u8(result) : planar_to_interleaved_f32(result);
    return resp;
  } catch (const std::exception& e) {
    RETIDE_LOG_WARN("job %llu failed: %s", (unsigned long long)req.job_id, e.what());
    return ErrorMsg{req.job_id, e.what()};
  }
}

namespace {
std::atomic<Server*> g_signal_server{nullptr};
}

void serve(const ServerConfig& cfg) {
  Server server(cfg);
  g_signal_server.store(&server);
  struct sigaction sa{};
  sa.sa_handler = [](int) {
    if (auto* s = g_signal_server.load()) s->stop();
  };
  ::sigaction(SIGINT, &sa, nullptr);
  ::sigaction(SIGTERM, &sa, nullptr);
  server.start();
  server.wait();
  g_signal_server.store(nullptr);
}

// ---- Client ----

Client::Client(const std::string& host, std::uint16_t port, int timeout_ms) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw ConnectionError("socket() failed");

  if (timeout_ms > 0) {
    timeval tv{timeout_ms / 1000, (timeout_ms % 1000) * 1000};
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
    ::setsockopt(fd_, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof(tv));
  }
  int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd_);
    throw std::invalid_argument("bad server address: " + host);
  }
  if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    const int e = errno;
    ::close(fd_);
    throw ConnectionError("connect to " + host + ":" + std::to_string(port) +
                          " failed: " + std::strerror(e));
  }
}

Client::~Client() {
  if (fd_ >= 0) ::close(fd_);
}

Message Client::roundtrip(const Message& m) {
  send_message(fd_, m);
  auto reply = recv_message(fd_, kDefaultMaxPayload);
  if (!reply) throw ConnectionError("server closed the connection");
  return std::move(*reply);
}

void Client::ping() {
  auto reply = roundtrip(PingMsg{});
  if (!std::holds_alternative<PongMsg>(reply)) throw ProtocolViolation("expected pong");
}

ModelInfoResponse Client::model_info() {
  auto reply = roundtrip(ModelInfoRequest{});
  if (auto* info = std::get_if<ModelInfoResponse>(&reply)) return *info;
  throw ProtocolViolation("expected model info response");
}

DenoiseResponse Client::submit(const DenoiseRequest& req) {
  auto reply = roundtrip(req);
  if (auto* err = std::get_if<ErrorMsg>(&reply))
    throw std::runtime_error("server error: " + err->text);
  auto* resp = std::get_if<DenoiseResponse>(&reply);
  if (!resp) throw ProtocolViolation("expected denoise response");
  if (resp->job_id != req.job_id)
    throw ProtocolViolation("response job_id mismatch");
  if (resp->status != 0)
    throw std::runtime_error("server rejected job, status " + std::to_string(resp->status));
  if (resp->width != req.width || resp->height != req.height)
    throw ProtocolViolation("response dims differ from request");
  return *resp;
}

TensorF32 Client::submit_job(const TensorF32& image, int tile, int overlap, int bit_depth) {
  if (image.n != 1) throw std::invalid_argument("submit_job: batch must be 1");
  DenoiseRequest req;
  req.job_id = next_job_id_++;
  req.width = std::uint32_t(image.w);
  req.height = std::uint32_t(image.h);
  req.channels = std::uint8_t(image.c);
  req.bit_depth = std::uint8_t(bit_depth);
  req.tile = std::uint16_t(tile);
  req.overlap = std::uint16_t(overlap);
  req.pixels =
      bit_depth == 8 ? planar_to_interleaved_u8(image) : planar_to_interleaved_f32(image);
  const DenoiseResponse resp = submit(req);
  return resp.bit_depth == 8
             ? interleaved_u8_to_planar(resp.pixels.data(), image.w, image.h, image.c)
             : interleaved_f32_to_planar(resp.pixels.data(), image.w, image.h, image.c);
}

} // namespace retide
