#pragma once

#include <memory>
#include <string>

#include "melodica/service.hpp"

namespace melodica {

/// WebSocket transport for a ServiceCore. One participant channel at a
/// time; a second connection gets an error frame and is closed. All frames
/// and timer ticks are handled on the thread that calls run(), so the core
/// sees events strictly in arrival order.
class WsServer {
public:
  /// Binds immediately; port 0 picks a free port.
  WsServer(ServiceCore &core, unsigned short port, const std::string &address = "127.0.0.1");
  ~WsServer();
  WsServer(const WsServer &) = delete;
  WsServer &operator=(const WsServer &) = delete;

  unsigned short port() const;
  /// Serves until stop(), or until the session is over and the participant
  /// has left.
  void run();
  /// Safe to call from any thread.
  void stop();

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

} // namespace melodica
