#include "fedci/transport.hpp"

#include <condition_variable>
#include <deque>
#include <mutex>
#include <optional>
#include <thread>

#include <boost/asio.hpp>

#include "fedci/error.hpp"

namespace fedci {

namespace {

namespace asio = boost::asio;
using asio::ip::tcp;

// Turns one incoming message into the reply, or nothing on shutdown.
std::optional<Message> handle(const WorkerSpec& w, const Message& in) {
  if (std::holds_alternative<Shutdown>(in)) return std::nullopt;
  const auto* b = std::get_if<ParamBroadcast>(&in);
  if (!b) return WorkerError{w.source_id, -1, "SchemaError", "worker received an unexpected message"};
  try {
    GradientReport r = w.fn(*b);
    r.source_id = w.source_id;
    r.round = b->round;
    return r;
  } catch (const Error& e) {
    return WorkerError{w.source_id, b->round, std::string(to_string(e.kind())), e.what()};
  } catch (const std::exception& e) {
    return WorkerError{w.source_id, b->round, "Unknown", e.what()};
  }
}

template <class T>
class Channel {
 public:
  void push(T v) {
    {
      std::lock_guard lock(mu_);
      q_.push_back(std::move(v));
    }
    cv_.notify_one();
  }
  T pop() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !q_.empty(); });
    T v = std::move(q_.front());
    q_.pop_front();
    return v;
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<T> q_;
};

class InprocTransport final : public Transport {
 public:
  explicit InprocTransport(std::vector<WorkerSpec> workers) : inboxes_(workers.size()) {
    for (std::size_t i = 0; i < workers.size(); ++i) {
      threads_.emplace_back([this, i, w = std::move(workers[i])] {
        for (;;) {
          auto reply = handle(w, inboxes_[i].pop());
          if (!reply) return;
          outbox_.push(std::move(*reply));
        }
      });
    }
  }

  ~InprocTransport() override {
    for (auto& in : inboxes_) in.push(Shutdown{});
    for (auto& t : threads_) t.join();
  }

  std::vector<Message> exchange(const ParamBroadcast& msg) override {
    for (auto& in : inboxes_) in.push(msg);
    std::vector<Message> out;
    for (std::size_t i = 0; i < inboxes_.size(); ++i) out.push_back(outbox_.pop());
    return out;
  }

  std::size_t worker_count() const override { return inboxes_.size(); }

 private:
  std::vector<Channel<Message>> inboxes_;
  Channel<Message> outbox_;
  std::vector<std::thread> threads_;
};

void write_line(tcp::socket& sock, const Message& msg) {
  const std::string line = encode(msg) + "\n";
  asio::write(sock, asio::buffer(line));
}

std::string read_line(tcp::socket& sock, asio::streambuf& buf) {
  asio::read_until(sock, buf, '\n');
  std::istream in(&buf);
  std::string line;
  std::getline(in, line);
  return line;
}

void tcp_worker(const WorkerSpec& w, unsigned short port) {
  asio::io_context io;
  tcp::socket sock(io);
  sock.connect(tcp::endpoint(asio::ip::address_v4::loopback(), port));
  asio::streambuf buf;
  for (;;) {
    Message in;
    try {
      in = decode(read_line(sock, buf));
    } catch (const Error& e) {
      write_line(sock, WorkerError{w.source_id, -1, std::string(to_string(e.kind())), e.what()});
      continue;
    }
    auto reply = handle(w, in);
    if (!reply) return;
    write_line(sock, *reply);
  }
}

class TcpTransport final : public Transport {
 public:
  explicit TcpTransport(std::vector<WorkerSpec> workers)
      : acceptor_(io_, tcp::endpoint(asio::ip::address_v4::loopback(), 0)) {
    const unsigned short port = acceptor_.local_endpoint().port();
    for (auto& w : workers) {
      threads_.emplace_back([w = std::move(w), port] {
        try {
          tcp_worker(w, port);
        } catch (const std::exception&) {
          // The server sees the closed connection and reports the failure.
        }
      });
    }
    for (std::size_t i = 0; i < workers.size(); ++i) {
      sockets_.emplace_back(io_);
      acceptor_.accept(sockets_.back());
      buffers_.push_back(std::make_unique<asio::streambuf>());
    }
  }

  ~TcpTransport() override {
    for (auto& s : sockets_) {
      try {
        write_line(s, Shutdown{});
      } catch (const std::exception&) {
      }
    }
    for (auto& t : threads_) t.join();
  }

  std::vector<Message> exchange(const ParamBroadcast& msg) override {
    for (auto& s : sockets_) {
      try {
        write_line(s, msg);
      } catch (const std::exception& e) {
        throw Error(ErrorKind::WorkerFailure, std::string("send failed: ") + e.what());
      }
    }
    std::vector<Message> out;
    for (std::size_t i = 0; i < sockets_.size(); ++i) {
      std::string line;
      try {
        line = read_line(sockets_[i], *buffers_[i]);
      } catch (const std::exception& e) {
        throw Error(ErrorKind::WorkerFailure, "connection " + std::to_string(i) + " lost: " + e.what());
      }
      out.push_back(decode(line));
    }
    return out;
  }

  std::size_t worker_count() const override { return sockets_.size(); }

 private:
  asio::io_context io_;
  tcp::acceptor acceptor_;
  std::vector<tcp::socket> sockets_;
  std::vector<std::unique_ptr<asio::streambuf>> buffers_;
  std::vector<std::thread> threads_;
};

}  // namespace

TransportKind parse_transport(const std::string& name) {
  if (name == "inproc") return TransportKind::Inproc;
  if (name == "tcp") return TransportKind::Tcp;
  throw Error(ErrorKind::InvalidConfig, "unknown transport '" + name + "' (expected inproc or tcp)");
}

std::string to_string(TransportKind kind) { return kind == TransportKind::Inproc ? "inproc" : "tcp"; }

std::unique_ptr<Transport> make_transport(TransportKind kind, std::vector<WorkerSpec> workers) {
  if (workers.empty()) throw Error(ErrorKind::InvalidConfig, "transport needs at least one worker");
  if (kind == TransportKind::Inproc) return std::make_unique<InprocTransport>(std::move(workers));
  return std::make_unique<TcpTransport>(std::move(workers));
}

}  // namespace fedci
