#include "melodica/ws_server.hpp"

#include <chrono>
#include <deque>
#include <functional>
#include <utility>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

namespace melodica {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using nlohmann::json;

namespace {

constexpr auto kTick = std::chrono::milliseconds(50);

class Connection : public std::enable_shared_from_this<Connection> {
public:
  struct Hooks {
    std::function<void(std::shared_ptr<Connection>)> opened;
    std::function<void(std::shared_ptr<Connection>, std::string)> frame;
    std::function<void(std::shared_ptr<Connection>)> closed;
  };

  Connection(tcp::socket socket, Hooks &hooks) : ws_(std::move(socket)), hooks_(hooks) {}

  void start() {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept([self = shared_from_this()](beast::error_code ec) {
      if (ec)
        return;
      self->open_ = true;
      self->hooks_.opened(self);
      self->read();
    });
  }

  void send(const json &msg) {
    if (!open_)
      return;
    queue_.push_back(msg.dump());
    if (queue_.size() == 1)
      write();
  }

  // Sends a last frame, then closes.
  void refuse(const json &msg) {
    queue_.push_back(msg.dump());
    closing_ = true;
    if (queue_.size() == 1)
      write();
  }

  void close() {
    if (!open_)
      return;
    open_ = false;
    ws_.async_close(websocket::close_code::normal,
                    [self = shared_from_this()](beast::error_code) {});
  }

  // Closes once the queued frames are out.
  void finish() {
    closing_ = true;
    if (queue_.empty())
      close();
  }

private:
  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->open_ = false;
        if (!std::exchange(self->reported_, true))
          self->hooks_.closed(self);
        return;
      }
      std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      self->hooks_.frame(self, std::move(text));
      self->read();
    });
  }

  void write() {
    ws_.text(true);
    ws_.async_write(asio::buffer(queue_.front()),
                    [self = shared_from_this()](beast::error_code ec, std::size_t) {
                      self->queue_.pop_front();
                      if (ec)
                        return;
                      if (!self->queue_.empty())
                        self->write();
                      else if (self->closing_)
                        self->close();
                    });
  }

  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buffer_;
  std::deque<std::string> queue_;
  Hooks &hooks_;
  bool open_ = false;
  bool closing_ = false;
  bool reported_ = false;
};

} // namespace

struct WsServer::Impl {
  ServiceCore &core;
  asio::io_context ioc;
  tcp::acceptor acceptor;
  asio::steady_timer ticker;
  std::chrono::steady_clock::time_point epoch = std::chrono::steady_clock::now();
  std::shared_ptr<Connection> active;
  Connection::Hooks hooks;
  bool stopping = false;
  unsigned short bound_port = 0;

  Impl(ServiceCore &c, unsigned short port, const std::string &address)
      : core(c), acceptor(ioc), ticker(ioc) {
    const tcp::endpoint ep(asio::ip::make_address(address), port);
    acceptor.open(ep.protocol());
    acceptor.set_option(asio::socket_base::reuse_address(true));
    acceptor.bind(ep);
    acceptor.listen();
    bound_port = acceptor.local_endpoint().port();

    hooks.opened = [this](std::shared_ptr<Connection> c) { opened(std::move(c)); };
    hooks.frame = [this](std::shared_ptr<Connection> c, std::string text) {
      if (c != active)
        return;
      deliver(core.on_message(text, now()));
    };
    hooks.closed = [this](std::shared_ptr<Connection> c) {
      if (c != active)
        return;
      active.reset();
      core.on_disconnect(now());
      if (core.done())
        shutdown();
    };
  }

  double now() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch).count();
  }

  void opened(std::shared_ptr<Connection> c) {
    if (active) {
      c->refuse(protocol_message("error", json{{"message", "session already has a participant"}}));
      return;
    }
    active = std::move(c);
  }

  void deliver(const std::vector<json> &msgs) {
    if (!active)
      return;
    for (const auto &m : msgs)
      active->send(m);
    if (core.done())
      shutdown();
  }

  void accept() {
    acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec)
        return;
      std::make_shared<Connection>(std::move(socket), hooks)->start();
      accept();
    });
  }

  void tick() {
    ticker.expires_after(kTick);
    ticker.async_wait([this](beast::error_code ec) {
      if (ec || stopping)
        return;
      deliver(core.on_tick(now()));
      tick();
    });
  }

  void shutdown() {
    if (stopping)
      return;
    stopping = true;
    beast::error_code ignored;
    acceptor.close(ignored);
    ticker.cancel();
    if (active) {
      active->finish();
      active.reset();
      core.on_disconnect(now());
    }
    // Let the last frames and the close handshake go out, then stop.
    auto grace = std::make_shared<asio::steady_timer>(ioc, std::chrono::milliseconds(500));
    grace->async_wait([this, grace](beast::error_code) { ioc.stop(); });
  }
};

WsServer::WsServer(ServiceCore &core, unsigned short port, const std::string &address)
    : impl_(std::make_unique<Impl>(core, port, address)) {}

WsServer::~WsServer() = default;

unsigned short WsServer::port() const { return impl_->bound_port; }

void WsServer::run() {
  impl_->accept();
  impl_->tick();
  impl_->ioc.run();
}

void WsServer::stop() {
  asio::post(impl_->ioc, [this] { impl_->shutdown(); });
}

} // namespace melodica
