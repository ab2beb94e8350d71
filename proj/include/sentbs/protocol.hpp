// Copyright (c) 2026, The sentbs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

/*
 * Backend protocol v1: newline-delimited JSON over a byte stream (a TCP
 * socket, a socketpair, or a child process' stdin/stdout).
 *
 * Requests:   {"id": 7, "type": "hello" | "logprobs" | "score" | "classify" | "shutdown", ...}
 *   hello     {"version": "v1"}
 *   logprobs  {"source", "control", "prefix": [ids], "truncation"}
 *   score     {"source", "control", "tokens": [ids], "truncation"}
 *   classify  {"text"}
 * Responses:  {"id": 7, "ok": true, ...payload} or
 *             {"id": 7, "ok": false, "error": {"code", "message"}}
 *   hello     {"capabilities": {"version", "vocab_size", "eos_id", "terminal_ids",
 *                               "concurrent_safe", "label_names", "surfaces", "batching"}}
 *   logprobs  {"logprobs": [...]}       one entry per token, null encodes -inf
 *   score     {"logliks": [...]}
 *   classify  {"label_logprobs": {name: logprob}}
 *
 * Token ids cross the wire for LM calls and text for classification. Request
 * ids strictly increase per connection.
 */

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "sentbs/classify.hpp"
#include "sentbs/core.hpp"
#include "sentbs/lm.hpp"

namespace sentbs::protocol {

inline constexpr const char* kVersion = "v1";
inline constexpr int kDefaultTimeoutMs = 60'000;
inline constexpr int kDefaultTruncation = 2048;

/// Owns a file descriptor.
class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() { reset(); }

  int get() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

/// Line-oriented duplex channel over one or two descriptors.
class LineChannel {
 public:
  LineChannel(Fd read_fd, Fd write_fd) : read_(std::move(read_fd)), write_(std::move(write_fd)) {}
  explicit LineChannel(Fd duplex) : read_(std::move(duplex)) {}

  void send_line(const std::string& line) {
    std::string buf = line;
    buf.push_back('\n');
    const int fd = write_fd();
    std::size_t off = 0;
    while (off < buf.size()) {
      const ssize_t w = send_or_write(fd, buf.data() + off, buf.size() - off);
      if (w < 0) {
        if (errno == EINTR) continue;
        throw Error(ErrorCode::BackendFailure, std::string("write failed: ") + std::strerror(errno));
      }
      off += static_cast<std::size_t>(w);
    }
  }

  /// Next line without its newline; nullopt on end of stream.
  std::optional<std::string> read_line(int timeout_ms = -1) {
    for (;;) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      if (eof_) {
        if (buffer_.empty()) return std::nullopt;
        return std::exchange(buffer_, std::string{});
      }
      if (timeout_ms >= 0) {
        pollfd pfd{read_.get(), POLLIN, 0};
        int r;
        do {
          r = ::poll(&pfd, 1, timeout_ms);
        } while (r < 0 && errno == EINTR);
        if (r == 0) throw Error(ErrorCode::Timeout, "no response within " + std::to_string(timeout_ms) + " ms");
        if (r < 0) throw Error(ErrorCode::BackendFailure, std::string("poll failed: ") + std::strerror(errno));
      }
      char chunk[65536];
      const ssize_t n = ::read(read_.get(), chunk, sizeof chunk);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw Error(ErrorCode::BackendFailure, std::string("read failed: ") + std::strerror(errno));
      }
      if (n == 0) eof_ = true;
      else buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  void close() {
    read_.reset();
    write_.reset();
  }

 private:
  static ssize_t send_or_write(int fd, const char* data, std::size_t len) {
    const ssize_t s = ::send(fd, data, len, MSG_NOSIGNAL);
    if (s < 0 && errno == ENOTSOCK) return ::write(fd, data, len);
    return s;
  }

  int write_fd() const { return write_.valid() ? write_.get() : read_.get(); }

  Fd read_;
  Fd write_;
  std::string buffer_;
  bool eof_ = false;
};

/// A connected pair of channels, for in-process loopback.
inline std::pair<LineChannel, LineChannel> channel_pair() {
  int sv[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM, 0, sv) != 0)
    throw Error(ErrorCode::BackendFailure, std::string("socketpair: ") + std::strerror(errno));
  return {LineChannel(Fd(sv[0])), LineChannel(Fd(sv[1]))};
}

inline std::pair<std::string, int> split_address(const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos) throw Error(ErrorCode::ConfigError, "address must be HOST:PORT, got '" + address + "'");
  try {
    return {address.substr(0, colon), std::stoi(address.substr(colon + 1))};
  } catch (const std::exception&) {
    throw Error(ErrorCode::ConfigError, "bad port in '" + address + "'");
  }
}

inline LineChannel connect_tcp(const std::string& address) {
  const auto [host, port] = split_address(address);
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string port_s = std::to_string(port);
  if (int rc = ::getaddrinfo(host.c_str(), port_s.c_str(), &hints, &res); rc != 0)
    throw Error(ErrorCode::BackendFailure, "cannot resolve " + host + ": " + ::gai_strerror(rc));
  std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, ::freeaddrinfo);
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    Fd fd(::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol));
    if (!fd.valid()) continue;
    if (::connect(fd.get(), ai->ai_addr, ai->ai_addrlen) == 0) {
      int one = 1;
      ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      return LineChannel(std::move(fd));
    }
  }
  throw Error(ErrorCode::BackendFailure, "cannot connect to " + address);
}

/// Listening TCP socket on 127.0.0.1 (port 0 picks a free port).
class TcpListener {
 public:
  explicit TcpListener(int port, const std::string& host = "127.0.0.1") {
    fd_ = Fd(::socket(AF_INET, SOCK_STREAM, 0));
    if (!fd_.valid()) throw Error(ErrorCode::BackendFailure, "socket failed");
    int one = 1;
    ::setsockopt(fd_.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
      throw Error(ErrorCode::ConfigError, "bad listen host " + host);
    if (::bind(fd_.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
      throw Error(ErrorCode::BackendFailure, std::string("bind: ") + std::strerror(errno));
    if (::listen(fd_.get(), 16) != 0) throw Error(ErrorCode::BackendFailure, "listen failed");
    socklen_t len = sizeof addr;
    ::getsockname(fd_.get(), reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }

  int port() const { return port_; }

  /// Blocks; nullopt once the listener is shut down.
  std::optional<LineChannel> accept() {
    for (;;) {
      const int c = ::accept(fd_.get(), nullptr, nullptr);
      if (c >= 0) {
        int one = 1;
        ::setsockopt(c, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        return LineChannel(Fd(c));
      }
      if (errno == EINTR) continue;
      return std::nullopt;
    }
  }

  void shutdown() { ::shutdown(fd_.get(), SHUT_RDWR); }

 private:
  Fd fd_;
  int port_ = 0;
};

/// A child process speaking the protocol on its stdin/stdout.
class ChildProcess {
 public:
  explicit ChildProcess(const std::vector<std::string>& argv) {
    if (argv.empty()) throw Error(ErrorCode::ConfigError, "empty server command");
    int to_child[2], from_child[2];
    if (::pipe(to_child) != 0 || ::pipe(from_child) != 0)
      throw Error(ErrorCode::BackendFailure, "pipe failed");
    pid_ = ::fork();
    if (pid_ < 0) throw Error(ErrorCode::BackendFailure, "fork failed");
    if (pid_ == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::close(to_child[0]);
      ::close(to_child[1]);
      ::close(from_child[0]);
      ::close(from_child[1]);
      std::vector<char*> args;
      for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
      args.push_back(nullptr);
      ::execvp(args[0], args.data());
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    channel_ = std::make_unique<LineChannel>(Fd(from_child[0]), Fd(to_child[1]));
  }

  ChildProcess(const ChildProcess&) = delete;
  ChildProcess& operator=(const ChildProcess&) = delete;

  ~ChildProcess() {
    channel_.reset();
    if (pid_ > 0) {
      int status = 0;
      for (int i = 0; i < 50; ++i) {
        if (::waitpid(pid_, &status, WNOHANG) == pid_) return;
        ::usleep(20'000);
      }
      ::kill(pid_, SIGTERM);
      ::waitpid(pid_, &status, 0);
    }
  }

  /// Moves the channel out; the process is still reaped on destruction.
  LineChannel take_channel() { return std::move(*channel_); }

 private:
  pid_t pid_ = -1;
  std::unique_ptr<LineChannel> channel_;
};

// ---------------------------------------------------------------------------
// Messages
// ---------------------------------------------------------------------------

inline json encode_logprobs(std::span<const double> xs) {
  json arr = json::array();
  for (double x : xs) {
    if (x == kNegInf) arr.push_back(nullptr);
    else arr.push_back(x);
  }
  return arr;
}

inline std::vector<double> decode_logprobs(const json& arr) {
  std::vector<double> out;
  out.reserve(arr.size());
  for (const auto& v : arr) out.push_back(v.is_null() ? kNegInf : v.get<double>());
  return out;
}

struct Capabilities {
  std::string version = kVersion;
  std::size_t vocab_size = 0;
  TokenId eos_id = 0;
  std::vector<TokenId> terminal_ids;
  bool concurrent_safe = false;
  std::vector<std::string> label_names;
  std::vector<std::string> surfaces;
  bool batching = false;

  json to_json() const {
    return json{{"version", version},       {"vocab_size", vocab_size},   {"eos_id", eos_id},
                {"terminal_ids", terminal_ids}, {"concurrent_safe", concurrent_safe},
                {"label_names", label_names}, {"surfaces", surfaces},       {"batching", batching}};
  }

  static Capabilities from_json(const json& j) {
    Capabilities c;
    c.version = j.at("version").get<std::string>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.eos_id = j.at("eos_id").get<TokenId>();
    c.terminal_ids = j.at("terminal_ids").get<std::vector<TokenId>>();
    c.concurrent_safe = j.value("concurrent_safe", false);
    c.label_names = j.value("label_names", std::vector<std::string>{});
    c.surfaces = j.value("surfaces", std::vector<std::string>{});
    c.batching = j.value("batching", false);
    return c;
  }

  /// Vocabulary described by the capabilities; placeholder surfaces when the
  /// server does not send any.
  Vocabulary vocabulary() const {
    std::vector<std::string> s = surfaces;
    if (s.empty()) {
      for (std::size_t i = 0; i < vocab_size; ++i) s.push_back("<" + std::to_string(i) + ">");
    }
    if (s.size() != vocab_size) throw Error(ErrorCode::ConfigError, "surface count differs from vocab_size");
    std::vector<TokenId> terms;
    for (TokenId t : terminal_ids)
      if (t != eos_id) terms.push_back(t);
    try {
      return Vocabulary(std::move(s), eos_id, terms);
    } catch (const Error& e) {
      throw Error(ErrorCode::ConfigError, std::string("invalid vocabulary capabilities: ") + e.what());
    }
  }
};

inline json error_response(std::int64_t id, std::string_view code, const std::string& message) {
  return json{{"id", id}, {"ok", false}, {"error", {{"code", code}, {"message", message}}}};
}

// ---------------------------------------------------------------------------
// Server
// ---------------------------------------------------------------------------

struct ServerOptions {
  bool concurrent_safe = false;
};

/// Answers requests on one connection until shutdown or end of stream.
/// `clf` may be null, in which case classify requests fail.
inline void serve_connection(LineChannel& ch, const LanguageModel& lm, const SentenceClassifier* clf,
                             const ServerOptions& opts = {}) {
  const Vocabulary& vocab = lm.vocabulary();
  std::int64_t last_id = 0;
  bool greeted = false;
  while (auto line = ch.read_line()) {
    if (text::trim(*line).empty()) continue;
    json req;
    try {
      req = json::parse(*line);
    } catch (const json::exception& e) {
      ch.send_line(error_response(0, "BadRequest", e.what()).dump());
      continue;
    }
    const std::int64_t id = req.value("id", std::int64_t{0});
    const std::string type = req.value("type", "");
    try {
      if (id <= last_id) {
        ch.send_line(error_response(id, "BadRequest", "request ids must strictly increase").dump());
        continue;
      }
      last_id = id;
      json resp{{"id", id}, {"ok", true}};
      if (type == "hello") {
        if (req.value("version", "") != kVersion) {
          ch.send_line(error_response(id, "ProtocolVersionMismatch",
                                      std::string("server speaks ") + kVersion).dump());
          return;
        }
        Capabilities caps;
        caps.vocab_size = vocab.size();
        caps.eos_id = vocab.eos();
        caps.terminal_ids = vocab.terminals();
        caps.concurrent_safe = opts.concurrent_safe;
        if (clf) caps.label_names = clf->label_set().names();
        caps.surfaces = vocab.surfaces();
        resp["capabilities"] = caps.to_json();
        greeted = true;
      } else if (type == "shutdown") {
        ch.send_line(resp.dump());
        return;
      } else if (!greeted) {
        ch.send_line(error_response(id, "BadRequest", "hello required first").dump());
        continue;
      } else if (type == "logprobs") {
        const SourceInput src{req.value("source", ""), req.value("control", "")};
        const auto prefix = req.at("prefix").get<TokenSeq>();
        resp["logprobs"] = encode_logprobs(lm.next_token_logprobs(src, prefix));
      } else if (type == "score") {
        const SourceInput src{req.value("source", ""), req.value("control", "")};
        const auto tokens = req.at("tokens").get<TokenSeq>();
        resp["logliks"] = encode_logprobs(lm.score_sequence(src, tokens).per_token_loglik);
      } else if (type == "classify") {
        if (!clf) throw Error(ErrorCode::ConfigError, "server has no classifier");
        const auto dist = clf->classify(req.at("text").get<std::string>());
        json m = json::object();
        for (const auto& l : clf->label_set().labels()) m[l.name] = dist[l.id];
        resp["label_logprobs"] = std::move(m);
      } else {
        ch.send_line(error_response(id, "BadRequest", "unknown request type '" + type + "'").dump());
        continue;
      }
      ch.send_line(resp.dump());
    } catch (const Error& e) {
      ch.send_line(error_response(id, error_code_name(e.code()), e.what()).dump());
    } catch (const json::exception& e) {
      ch.send_line(error_response(id, "BadRequest", e.what()).dump());
    }
  }
}

/// Serves an in-process model on a background thread over a socketpair.
class LoopbackServer {
 public:
  LoopbackServer(const LanguageModel& lm, const SentenceClassifier* clf, ServerOptions opts = {}) {
    auto [client, server] = channel_pair();
    client_ = std::make_unique<LineChannel>(std::move(client));
    server_ = std::make_unique<LineChannel>(std::move(server));
    thread_ = std::thread([this, &lm, clf, opts] { serve_connection(*server_, lm, clf, opts); server_->close(); });
  }

  LoopbackServer(const LoopbackServer&) = delete;
  LoopbackServer& operator=(const LoopbackServer&) = delete;

  ~LoopbackServer() {
    if (client_) client_->close();
    if (thread_.joinable()) thread_.join();
  }

  /// Hands the client end to a RemoteBackend. Call once.
  LineChannel take_client() { return std::move(*client_); }

 private:
  std::unique_ptr<LineChannel> client_;
  std::unique_ptr<LineChannel> server_;
  std::thread thread_;
};

// ---------------------------------------------------------------------------
// Client
// ---------------------------------------------------------------------------

struct ClientOptions {
  int timeout_ms = kDefaultTimeoutMs;
  int truncation = kDefaultTruncation;
  double normalization_tol = 1e-6;
};

/// One protocol connection with request/response bookkeeping. Not thread-safe.
class Connection {
 public:
  Connection(LineChannel ch, ClientOptions opts) : ch_(std::move(ch)), opts_(opts) {}

  json call(json req) {
    const std::int64_t id = ++next_id_;
    req["id"] = id;
    ch_.send_line(req.dump());
    auto line = ch_.read_line(opts_.timeout_ms);
    if (!line) throw Error(ErrorCode::BackendFailure, "server closed the connection");
    json resp;
    try {
      resp = json::parse(*line);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::BackendFailure, std::string("malformed response: ") + e.what());
    }
    if (resp.value("id", std::int64_t{-1}) != id) throw Error(ErrorCode::BackendFailure, "response id mismatch");
    if (!resp.value("ok", false)) {
      const auto& err = resp.at("error");
      const std::string code = err.value("code", "Unknown");
      const std::string msg = err.value("message", "");
      if (code == "ProtocolVersionMismatch") {
        ch_.close();
        throw Error(ErrorCode::ProtocolVersionMismatch, msg);
      }
      throw Error(ErrorCode::RemoteError, code + ": " + msg);
    }
    return resp;
  }

  Capabilities hello(const std::string& version = kVersion) {
    json resp = call(json{{"type", "hello"}, {"version", version}});
    Capabilities caps = Capabilities::from_json(resp.at("capabilities"));
    if (caps.version != kVersion) {
      ch_.close();
      throw Error(ErrorCode::ProtocolVersionMismatch, "server reports version " + caps.version);
    }
    return caps;
  }

  void shutdown() {
    try {
      call(json{{"type", "shutdown"}});
    } catch (const Error&) {
    }
    ch_.close();
  }

  const ClientOptions& options() const { return opts_; }

 private:
  LineChannel ch_;
  ClientOptions opts_;
  std::int64_t next_id_ = 0;
};

/// Language model and classifier served by a remote process. Calls are
/// serialized per connection; several connections are used only when the
/// server declares concurrent_safe.
class RemoteBackend final : public LanguageModel, public SentenceClassifier {
 public:
  /// Performs the handshake on `first`. `expected_labels`, when given, must
  /// equal the server's label names. `more` supplies extra connections for
  /// pooling (ignored unless the server is concurrent-safe).
  explicit RemoteBackend(LineChannel first, ClientOptions opts = {},
                         const std::optional<LabelSet>& expected_labels = std::nullopt,
                         std::vector<LineChannel> more = {})
      : opts_(opts) {
    auto conn = std::make_unique<Connection>(std::move(first), opts);
    caps_ = conn->hello();
    vocab_ = std::make_unique<Vocabulary>(caps_.vocabulary());
    if (!caps_.label_names.empty()) labels_ = std::make_unique<LabelSet>(caps_.label_names);
    if (expected_labels) {
      if (!labels_ || !(*labels_ == *expected_labels)) {
        conn->shutdown();
        throw Error(ErrorCode::ConfigError, "server label names differ from the configured label set");
      }
    }
    pool_.push_back(std::move(conn));
    if (caps_.concurrent_safe) {
      for (auto& ch : more) {
        auto extra = std::make_unique<Connection>(std::move(ch), opts);
        extra->hello();
        pool_.push_back(std::move(extra));
      }
    }
    for (auto& c : pool_) free_.push_back(c.get());
  }

  ~RemoteBackend() override {
    for (auto& c : pool_) c->shutdown();
  }

  const Capabilities& capabilities() const { return caps_; }

  const Vocabulary& vocabulary() const override { return *vocab_; }

  bool concurrent_safe() const override { return caps_.concurrent_safe; }

  const LabelSet& label_set() const override {
    if (!labels_) throw Error(ErrorCode::ConfigError, "server does not provide a classifier");
    return *labels_;
  }

  LogDist next_token_logprobs(const SourceInput& source, std::span<const TokenId> prefix) const override {
    vocab_->validate(prefix);
    json resp = with_connection([&](Connection& c) {
      return c.call(json{{"type", "logprobs"},
                         {"source", source.text},
                         {"control", source.control_text},
                         {"prefix", TokenSeq(prefix.begin(), prefix.end())},
                         {"truncation", opts_.truncation}});
    });
    LogDist d = decode_logprobs(resp.at("logprobs"));
    if (d.size() != vocab_->size()) throw Error(ErrorCode::VocabMismatch, "logprob vector length differs from vocab_size");
    if (!is_normalized(d, opts_.normalization_tol))
      throw Error(ErrorCode::NormalizationViolation, "logprobs do not sum to one");
    return d;
  }

  SequenceScore score_sequence(const SourceInput& source, std::span<const TokenId> tokens) const override {
    if (tokens.empty()) throw Error(ErrorCode::EmptySequence, "cannot score an empty sequence");
    vocab_->validate(tokens);
    json resp = with_connection([&](Connection& c) {
      return c.call(json{{"type", "score"},
                         {"source", source.text},
                         {"control", source.control_text},
                         {"tokens", TokenSeq(tokens.begin(), tokens.end())},
                         {"truncation", opts_.truncation}});
    });
    SequenceScore s;
    s.per_token_loglik = decode_logprobs(resp.at("logliks"));
    if (s.per_token_loglik.size() != tokens.size())
      throw Error(ErrorCode::BackendFailure, "score returned " + std::to_string(s.per_token_loglik.size()) +
                                                 " values for " + std::to_string(tokens.size()) + " tokens");
    for (double x : s.per_token_loglik)
      if (x > opts_.normalization_tol) throw Error(ErrorCode::NormalizationViolation, "positive token log-likelihood");
    s.norm_loglik = mean_of(s.per_token_loglik);
    return s;
  }

  LabelLogDist classify(std::string_view sentence_text) const override {
    const LabelSet& ls = label_set();
    json resp = with_connection(
        [&](Connection& c) { return c.call(json{{"type", "classify"}, {"text", std::string(sentence_text)}}); });
    const json& m = resp.at("label_logprobs");
    LabelLogDist d(ls.size(), kNegInf);
    for (const auto& l : ls.labels()) {
      if (!m.contains(l.name)) throw Error(ErrorCode::BackendFailure, "classify response lacks label '" + l.name + "'");
      d[l.id] = m.at(l.name).is_null() ? kNegInf : m.at(l.name).get<double>();
    }
    if (!is_normalized(d, opts_.normalization_tol))
      throw Error(ErrorCode::NormalizationViolation, "label logprobs do not sum to one");
    return d;
  }

 private:
  template <typename F>
  json with_connection(F&& f) const {
    Connection* c = nullptr;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return !free_.empty(); });
      c = free_.back();
      free_.pop_back();
    }
    struct Release {
      const RemoteBackend* self;
      Connection* c;
      ~Release() {
        {
          std::lock_guard lock(self->mu_);
          self->free_.push_back(c);
        }
        self->cv_.notify_one();
      }
    } release{this, c};
    try {
      return f(*c);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::BackendFailure, std::string("malformed response: ") + e.what());
    }
  }

  ClientOptions opts_;
  Capabilities caps_;
  std::unique_ptr<Vocabulary> vocab_;
  std::unique_ptr<LabelSet> labels_;
  std::vector<std::unique_ptr<Connection>> pool_;
  mutable std::vector<Connection*> free_;
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
};

}  // namespace sentbs::protocol
