// SPDX-License-Identifier: Apache-2.0
#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <map>
#include <mutex>
#include <thread>

#include "fedmd/error.hpp"
#include "fedmd/transport.hpp"

namespace fedmd {

// --- in-process ------------------------------------------------------------

namespace {

using Frame = std::vector<std::uint8_t>;

// One direction of a connection.
struct Pipe {
  std::mutex mutex;
  std::condition_variable ready;
  std::deque<Frame> frames;
  bool closed = false;

  void push(Frame frame) {
    {
      std::lock_guard lock(mutex);
      if (closed) throw ChannelError("in-process peer has closed the connection");
      frames.push_back(std::move(frame));
    }
    ready.notify_one();
  }

  Frame pop() {
    std::unique_lock lock(mutex);
    ready.wait(lock, [&] { return !frames.empty() || closed; });
    if (frames.empty()) throw ChannelError("in-process connection closed");
    Frame f = std::move(frames.front());
    frames.pop_front();
    return f;
  }

  void close() {
    {
      std::lock_guard lock(mutex);
      closed = true;
    }
    ready.notify_all();
  }
};

class InProcessChannel : public Channel {
 public:
  InProcessChannel(std::shared_ptr<Pipe> in, std::shared_ptr<Pipe> out) : in_(std::move(in)), out_(std::move(out)) {}
  ~InProcessChannel() override { close(); }

  void send(const Message& msg) override { out_->push(encode_message(msg)); }

  Message recv() override {
    const Frame f = in_->pop();
    return decode_message(f);
  }

  void close() override {
    in_->close();
    out_->close();
  }

 private:
  std::shared_ptr<Pipe> in_;
  std::shared_ptr<Pipe> out_;
};

struct PendingQueue {
  std::mutex mutex;
  std::condition_variable ready;
  std::deque<std::unique_ptr<Channel>> pending;
  bool closed = false;
};

}  // namespace

struct InProcessBus::Impl {
  std::mutex mutex;
  std::map<std::string, std::shared_ptr<PendingQueue>> listeners;
};

namespace {

class InProcessListener : public Listener {
 public:
  InProcessListener(std::shared_ptr<InProcessBus::Impl> bus, std::string name, std::shared_ptr<PendingQueue> queue)
      : bus_(std::move(bus)), name_(std::move(name)), queue_(std::move(queue)) {}

  ~InProcessListener() override {
    {
      std::lock_guard lock(bus_->mutex);
      bus_->listeners.erase(name_);
    }
    {
      std::lock_guard lock(queue_->mutex);
      queue_->closed = true;
    }
    queue_->ready.notify_all();
  }

  std::unique_ptr<Channel> accept() override {
    std::unique_lock lock(queue_->mutex);
    queue_->ready.wait(lock, [&] { return !queue_->pending.empty() || queue_->closed; });
    if (queue_->pending.empty()) throw ChannelError("listener " + name_ + " closed");
    auto ch = std::move(queue_->pending.front());
    queue_->pending.pop_front();
    return ch;
  }

  std::string address() const override { return name_; }

 private:
  std::shared_ptr<InProcessBus::Impl> bus_;
  std::string name_;
  std::shared_ptr<PendingQueue> queue_;
};

}  // namespace

InProcessBus::InProcessBus() : impl_(std::make_shared<Impl>()) {}
InProcessBus::~InProcessBus() = default;

std::unique_ptr<Listener> InProcessBus::serve(const std::string& name) {
  std::lock_guard lock(impl_->mutex);
  if (impl_->listeners.count(name)) throw ChannelError("address " + name + " already in use");
  auto queue = std::make_shared<PendingQueue>();
  impl_->listeners[name] = queue;
  return std::make_unique<InProcessListener>(impl_, name, queue);
}

std::unique_ptr<Channel> InProcessBus::connect(const std::string& name) {
  std::shared_ptr<PendingQueue> queue;
  {
    std::lock_guard lock(impl_->mutex);
    auto it = impl_->listeners.find(name);
    if (it == impl_->listeners.end()) throw ChannelError("nothing is serving " + name);
    queue = it->second;
  }
  auto to_server = std::make_shared<Pipe>();
  auto to_client = std::make_shared<Pipe>();
  {
    std::lock_guard lock(queue->mutex);
    queue->pending.push_back(std::make_unique<InProcessChannel>(to_server, to_client));
  }
  queue->ready.notify_one();
  return std::make_unique<InProcessChannel>(to_client, to_server);
}

// --- TCP -------------------------------------------------------------------

namespace {

std::pair<std::string, std::string> split_address(const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos || colon + 1 == address.size()) {
    throw ConfigError("address '" + address + "' is not host:port");
  }
  return {address.substr(0, colon), address.substr(colon + 1)};
}

std::string errno_text() { return std::strerror(errno); }

class Socket {
 public:
  explicit Socket(int fd = -1) : fd_(fd) {}
  ~Socket() { reset(); }
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }

  int fd() const { return fd_; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  void shutdown_both() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

 private:
  int fd_;
};

class TcpChannel : public Channel {
 public:
  explicit TcpChannel(Socket socket) : socket_(std::move(socket)) {
    int one = 1;
    ::setsockopt(socket_.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  }
  ~TcpChannel() override { close(); }

  void send(const Message& msg) override {
    const auto frame = encode_message(msg);
    std::lock_guard lock(send_mutex_);
    std::size_t sent = 0;
    while (sent < frame.size()) {
      const ssize_t n = ::send(socket_.fd(), frame.data() + sent, frame.size() - sent, MSG_NOSIGNAL);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) throw ChannelError("tcp send failed: " + errno_text());
      sent += static_cast<std::size_t>(n);
    }
  }

  Message recv() override {
    std::lock_guard lock(recv_mutex_);
    std::vector<std::uint8_t> frame(kLengthPrefixSize);
    read_exact(frame.data(), kLengthPrefixSize);
    const std::uint32_t length = (std::uint32_t{frame[0]} << 24) | (std::uint32_t{frame[1]} << 16) |
                                 (std::uint32_t{frame[2]} << 8) | std::uint32_t{frame[3]};
    if (length > kMaxFrameLength) {
      throw ChannelError("peer announced a frame of " + std::to_string(length) + " bytes");
    }
    frame.resize(kLengthPrefixSize + length);
    read_exact(frame.data() + kLengthPrefixSize, length);
    return decode_message(frame);
  }

  void close() override {
    socket_.shutdown_both();
  }

 private:
  void read_exact(std::uint8_t* out, std::size_t n) {
    std::size_t got = 0;
    while (got < n) {
      const ssize_t r = ::recv(socket_.fd(), out + got, n - got, 0);
      if (r < 0 && errno == EINTR) continue;
      if (r == 0) throw ChannelError("tcp connection closed by peer");
      if (r < 0) throw ChannelError("tcp recv failed: " + errno_text());
      got += static_cast<std::size_t>(r);
    }
  }

  Socket socket_;
  std::mutex send_mutex_;
  std::mutex recv_mutex_;
};

class TcpListener : public Listener {
 public:
  explicit TcpListener(const std::string& address) {
    const auto [host, port] = split_address(address);
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    if (const int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0) {
      throw ChannelError("cannot resolve " + address + ": " + ::gai_strerror(rc));
    }
    std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, ::freeaddrinfo);
    socket_ = Socket(::socket(res->ai_family, res->ai_socktype, res->ai_protocol));
    if (socket_.fd() < 0) throw ChannelError("socket: " + errno_text());
    int one = 1;
    ::setsockopt(socket_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (::bind(socket_.fd(), res->ai_addr, res->ai_addrlen) != 0) {
      throw ChannelError("bind " + address + ": " + errno_text());
    }
    if (::listen(socket_.fd(), 64) != 0) throw ChannelError("listen " + address + ": " + errno_text());
    sockaddr_in bound{};
    socklen_t len = sizeof(bound);
    ::getsockname(socket_.fd(), reinterpret_cast<sockaddr*>(&bound), &len);
    char text[INET_ADDRSTRLEN] = {};
    ::inet_ntop(AF_INET, &bound.sin_addr, text, sizeof(text));
    address_ = std::string(text) + ":" + std::to_string(ntohs(bound.sin_port));
  }

  std::unique_ptr<Channel> accept() override {
    for (;;) {
      const int fd = ::accept(socket_.fd(), nullptr, nullptr);
      if (fd >= 0) return std::make_unique<TcpChannel>(Socket(fd));
      if (errno != EINTR) throw ChannelError("accept: " + errno_text());
    }
  }

  std::string address() const override { return address_; }

 private:
  Socket socket_;
  std::string address_;
};

}  // namespace

std::unique_ptr<Listener> serve_tcp(const std::string& address) { return std::make_unique<TcpListener>(address); }

std::unique_ptr<Channel> connect_tcp(const std::string& address, double retry_seconds) {
  const auto [host, port] = split_address(address);
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(retry_seconds);
  for (;;) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (const int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0) {
      throw ChannelError("cannot resolve " + address + ": " + ::gai_strerror(rc));
    }
    std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, ::freeaddrinfo);
    Socket s(::socket(res->ai_family, res->ai_socktype, res->ai_protocol));
    if (s.fd() < 0) throw ChannelError("socket: " + errno_text());
    if (::connect(s.fd(), res->ai_addr, res->ai_addrlen) == 0) {
      return std::make_unique<TcpChannel>(std::move(s));
    }
    const std::string reason = errno_text();
    if (std::chrono::steady_clock::now() >= deadline) {
      throw ChannelError("connect " + address + ": " + reason);
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
}

}  // namespace fedmd
