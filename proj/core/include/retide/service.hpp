#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "retide/protocol.hpp"
#include "retide/quant.hpp"
#include "retide/tensor.hpp"

namespace retide {

// Client-server offload path. One logical reader/writer pair per connection;
// a shared pool of N workers processes tiles; responses on a connection are
// written in request arrival order, so assembly tolerates any tile
// completion order while clients see FIFO semantics.

struct ServerConfig {
  std::string host = "127.0.0.1";
  std::uint16_t port = 7878; // 0 picks an ephemeral port (see Server::port())
  std::string model_path;
  std::size_t workers = 0; // 0 -> logical cores
  std::uint64_t max_payload = kDefaultMaxPayload;
};

class Server {
public:
  explicit Server(ServerConfig cfg); // loads the model, binds and listens
  ~Server();

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  void start();          // returns after the accept loop is running
  void stop();           // closes the listener and all connections, joins
  void wait();           // blocks until stop() is called elsewhere
  std::uint16_t port() const { return bound_port_; }

  const LoadedModel& model() const { return *model_; }

private:
  struct Conn;
  void accept_loop();
  void reader_loop(std::shared_ptr<Conn> conn);
  void writer_loop(std::shared_ptr<Conn> conn);
  Message run_job(const DenoiseRequest& req);

  ServerConfig cfg_;
  std::shared_ptr<const LoadedModel> model_;
  int listen_fd_ = -1;
  std::uint16_t bound_port_ = 0;
  std::thread accept_thread_;
  std::atomic<bool> stopping_{false};
  std::unique_ptr<class WorkerPool> pool_;
  std::mutex conns_mu_;
  std::vector<std::shared_ptr<Conn>> conns_;
  std::mutex stop_mu_;
  std::condition_variable stop_cv_;
  bool stopped_ = false;
};

// Loads the model, serves until SIGINT/SIGTERM or stop(). CLI entry point.
void serve(const ServerConfig& cfg);

class Client {
public:
  // Connects immediately; a refused/unreachable server throws ConnectionError
  // rather than hanging. timeout_ms bounds each send/receive (0 = no limit).
  Client(const std::string& host, std::uint16_t port, int timeout_ms = 0);
  ~Client();

  Client(const Client&) = delete;
  Client& operator=(const Client&) = delete;

  void ping();
  ModelInfoResponse model_info();

  // Synchronous request/response; throws on server Error replies.
  DenoiseResponse submit(const DenoiseRequest& req);

  // Planar [0,1] image in, denoised image of identical dims out.
  TensorF32 submit_job(const TensorF32& image, int tile = 256, int overlap = 32,
                       int bit_depth = 32);

private:
  Message roundtrip(const Message& m);
  int fd_ = -1;
  std::uint64_t next_job_id_ = 1;
};

} // namespace retide
