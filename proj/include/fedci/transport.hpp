#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fedci/messages.hpp"

namespace fedci {

enum class TransportKind { Inproc, Tcp };

TransportKind parse_transport(const std::string& name);
std::string to_string(TransportKind kind);

/// Source-side handler. Runs on the worker's own thread and only ever sees broadcasts.
using WorkerFn = std::function<GradientReport(const ParamBroadcast&)>;

struct WorkerSpec {
  int source_id = 0;
  WorkerFn fn;
};

/// Server end of the channel to all workers.
class Transport {
 public:
  virtual ~Transport() = default;

  /// Deliver the broadcast to every worker, then block until each has replied once.
  /// Replies are GradientReport or WorkerError, in arbitrary order.
  virtual std::vector<Message> exchange(const ParamBroadcast& msg) = 0;

  virtual std::size_t worker_count() const = 0;
};

/// Starts one thread per worker. Inproc passes message objects through queues;
/// tcp serializes them as newline-delimited JSON over loopback sockets.
std::unique_ptr<Transport> make_transport(TransportKind kind, std::vector<WorkerSpec> workers);

}  // namespace fedci
