#include <doctest.h>

#include <set>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "melodica/service.hpp"
#include "melodica/ws_server.hpp"

using namespace melodica;
using nlohmann::json;

namespace {

const RobotSimulator &robot() {
  static const RobotSimulator r;
  return r;
}

std::string frame(const std::string &type, json body = json::object()) {
  return json{{"type", type}, {"body", std::move(body)}}.dump();
}

// Fake-clock harness around a ServiceCore.
struct Harness {
  ServiceCore core;
  double now = 100.0;
  std::vector<json> inbox;

  explicit Harness(const std::string &kind = "intervention:1", std::uint64_t seed = 1)
      : core(SessionSpec::parse(kind), seed, EngineConfig{}, robot()) {}

  void send(const std::string &f) {
    for (auto &m : core.on_message(f, now))
      inbox.push_back(std::move(m));
  }
  // Returns the oldest message of the given type not yet handed out,
  // advancing the clock in 50 ms ticks until one arrives.
  std::optional<json> wait_for(const std::string &type, double max_s = 120) {
    const double until = now + max_s;
    std::size_t seen = 0;
    for (;;) {
      for (; seen < inbox.size(); ++seen)
        if (inbox[seen].at("type") == type && !taken.count(seen)) {
          taken.insert(seen);
          return inbox[seen];
        }
      if (now >= until)
        return std::nullopt;
      now += 0.05;
      for (auto &m : core.on_tick(now))
        inbox.push_back(std::move(m));
    }
  }
  std::set<std::size_t> taken;
};

} // namespace

TEST_SUITE("service") {
  TEST_CASE("join opens with the first phase") {
    Harness h;
    h.send(frame("join", {{"participant_id", "P1"}}));
    REQUIRE_FALSE(h.inbox.empty());
    CHECK(h.inbox[0].at("type") == "state");
    CHECK(h.inbox[0].at("body").at("phase") == "WarmUp");
    bool demo = false;
    for (const auto &m : h.inbox)
      demo = demo || m.at("type") == "demonstrate";
    CHECK(demo);
  }

  TEST_CASE("bad frames get an error and nothing else changes") {
    Harness h;
    h.send("{not json");
    h.send(frame("strike", {{"note", "5"}}));
    h.send(frame("join", {{"participant_id", "P1"}}));
    const std::size_t n = h.inbox.size();
    h.send(frame("dance"));
    h.send(R"([1, 2])");
    h.send(frame("strike", {{"note", "z"}}));
    h.send(frame("rating", {{"value", 9}}));
    h.send(frame("join", {{"participant_id", "P2"}}));
    REQUIRE(h.inbox.size() == n + 5);
    for (std::size_t i = 0; i < h.inbox.size(); ++i)
      if (i < 2 || i >= n)
        CHECK(h.inbox[i].at("type") == "error");
    CHECK(h.core.connected());
  }

  TEST_CASE("a strike in the open window gets feedback in the same conversation") {
    Harness h;
    h.send(frame("join", {{"participant_id", "P1"}}));
    const auto demo = h.wait_for("demonstrate", 0.0);
    REQUIRE(demo);
    const std::string target = demo->at("body").at("notes");
    const auto cue = h.wait_for("cue");
    REQUIRE(cue);
    CHECK(cue->at("body").at("eye_flash") == true);
    CHECK(cue->at("body").at("window_s") == 7.0);
    CHECK(cue->at("body").at("text") == kCueText);
    h.now += 0.5;
    h.send(frame("strike", {{"note", target}}));
    const std::size_t strike_at = h.inbox.size();
    const auto fb = h.wait_for("feedback");
    REQUIRE(fb);
    CHECK(fb->at("body").at("detected") == target);
    CHECK(fb->at("body").at("verdict") == "pass");
    for (std::size_t i = strike_at; i < h.inbox.size() - 1; ++i)
      CHECK(h.inbox[i].at("type") != "demonstrate");
  }

  TEST_CASE("heartbeat every second") {
    Harness h;
    h.send(frame("join", {{"participant_id", "P1"}}));
    const std::size_t start = h.inbox.size();
    std::size_t beats = 0;
    for (int i = 0; i < 100; ++i) {
      h.now += 0.05;
      for (auto &m : h.core.on_tick(h.now))
        if (m.at("type") == "state" && m.at("body").contains("paused"))
          ++beats;
    }
    CHECK(start > 0);
    CHECK(beats >= 4);
    CHECK(beats <= 5);
  }

  TEST_CASE("a disconnect pauses the window and a rejoin resumes it") {
    Harness h;
    h.send(frame("join", {{"participant_id", "P1"}}));
    REQUIRE(h.wait_for("cue"));
    const double opened = h.core.session_time(h.now);
    h.now += 2.0;
    h.core.on_disconnect(h.now);
    CHECK_FALSE(h.core.connected());
    const double frozen = h.core.session_time(h.now);
    h.now += 60.0;
    CHECK(h.core.on_tick(h.now).empty());
    CHECK(h.core.session_time(h.now) == doctest::Approx(frozen));
    CHECK(h.core.driver()->engine().window_open());

    h.send(frame("join", {{"participant_id", "P9"}}));
    CHECK(h.inbox.back().at("type") == "error");
    h.send(frame("join", {{"participant_id", "P1"}}));
    CHECK(h.core.connected());
    CHECK(h.core.driver()->engine().window_open());
    const auto fb = h.wait_for("feedback");
    REQUIRE(fb);
    // Seven seconds of window in session time, however long the break.
    CHECK(h.core.session_time(h.now) - opened == doctest::Approx(7.0).epsilon(0.02));
  }

  TEST_CASE("a full session over the protocol") {
    Harness h("baseline", 3);
    h.send(frame("join", {{"participant_id", "P1"}}));
    std::string target;
    int demos = 0, cues = 0;
    bool window_open = false;
    bool done = false;
    std::size_t seen = 0;
    for (int step = 0; step < 40000 && !done; ++step) {
      for (; seen < h.inbox.size(); ++seen) {
        const json m = h.inbox[seen];
        const std::string type = m.at("type");
        const json &b = m.at("body");
        if (type == "demonstrate") {
          // Every demonstrate is followed by exactly one cue.
          CHECK(demos == cues);
          ++demos;
          target = b.at("notes");
        } else if (type == "cue") {
          CHECK_FALSE(window_open);
          window_open = true;
          if (!b.at("free_play").get<bool>())
            ++cues;
          const std::string play = b.at("free_play").get<bool>() ? "135" : target;
          for (char c : play) {
            h.now += 0.3;
            h.send(frame("strike", {{"note", std::string(1, c)}}));
          }
        } else if (type == "feedback") {
          window_open = false;
        } else if (type == "game_prompt") {
          const std::string kind = b.at("kind");
          if (kind == "menu" && b.at("unplayed").empty())
            h.send(frame("end"));
          else if (kind == "menu")
            h.send(frame("mode_select", {{"mode", b.at("unplayed").at(0)}}));
          else if (kind == "emotion")
            h.send(frame("emotion_answer", {{"text", "happy"}}));
          else if (kind == "rating")
            h.send(frame("rating", {{"value", 4}}));
          else if (kind == "imitate")
            window_open = false;
        } else if (type == "state" && b.value("event", "") == "Done") {
          done = true;
          CHECK(b.at("summary").at("modes_played") == json::array({1, 2, 3}));
          CHECK(b.at("summary").at("practice_accuracy") == 1.0);
        } else if (type == "error") {
          FAIL(m.dump());
        }
      }
      h.now += 0.05;
      for (auto &m : h.core.on_tick(h.now))
        h.inbox.push_back(std::move(m));
    }
    CHECK(done);
    CHECK(demos == cues);
    CHECK(h.core.done());
    h.send(frame("strike", {{"note", "1"}}));
    CHECK(h.inbox.back().at("type") == "error");
  }

  TEST_CASE("engine config") {
    const json j = {{"session", {{"response_window_s", 8.0}}},
                    {"song_bank", SongBank::builtin().to_json()},
                    {"participants", {{"P7", {{"song", "Ode to Joy"}}}}},
                    {"robot", {{"cue_s", 1.5}}},
                    {"heartbeat_s", 0.5}};
    const EngineConfig c = EngineConfig::from_json(j);
    CHECK(c.session.response_window_s == 8.0);
    CHECK(c.prefs_for("P7").song == "Ode to Joy");
    CHECK_FALSE(c.prefs_for("P8").song.has_value());
    CHECK(c.robot.cue_s == 1.5);
    CHECK(c.heartbeat_s == 0.5);
    CHECK_THROWS(EngineConfig::from_json(json{{"participants", {{"P7", {{"song", "Nope"}}}}}}));
    CHECK_THROWS(EngineConfig::from_json(json{{"heartbeat_s", 0}}));
  }

  TEST_CASE("the shipped config matches the built-in defaults") {
    const EngineConfig c = EngineConfig::load(MELODICA_CONFIG_DIR "/melodica.json");
    CHECK(c.bank.to_json() == SongBank::builtin().to_json());
    CHECK(c.session.to_json() == SessionConfig{}.to_json());
    CHECK(c.prefs_for("P1").song == std::string(kEntrySong));
    CHECK(c.heartbeat_s == 1.0);
  }

  TEST_CASE("websocket transport") {
    namespace beast = boost::beast;
    namespace asio = boost::asio;
    ServiceCore core(SessionSpec::parse("intervention:1"), 5, EngineConfig{}, robot());
    WsServer server(core, 0);
    const unsigned short port = server.port();
    std::thread serving([&] { server.run(); });

    asio::io_context ioc;
    asio::ip::tcp::resolver resolver(ioc);
    beast::websocket::stream<asio::ip::tcp::socket> ws(ioc);
    asio::connect(ws.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    ws.handshake("127.0.0.1", "/");
    auto next = [&] {
      beast::flat_buffer buf;
      ws.read(buf);
      return json::parse(beast::buffers_to_string(buf.data()));
    };

    ws.write(asio::buffer(std::string("garbage")));
    CHECK(next().at("type") == "error");
    ws.write(asio::buffer(frame("join", {{"participant_id", "P1"}})));
    const json first = next();
    CHECK(first.at("type") == "state");
    CHECK(first.at("body").at("phase") == "WarmUp");

    // A second participant is turned away.
    beast::websocket::stream<asio::ip::tcp::socket> other(ioc);
    asio::connect(other.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    other.handshake("127.0.0.1", "/");
    beast::flat_buffer obuf;
    other.read(obuf);
    CHECK(json::parse(beast::buffers_to_string(obuf.data())).at("type") == "error");

    // Still connected: the first cue arrives after the demonstration.
    json m;
    do
      m = next();
    while (m.at("type") != "cue");
    CHECK(m.at("body").at("window_s") == 7.0);

    ws.close(beast::websocket::close_code::normal);
    server.stop();
    serving.join();
    CHECK_FALSE(core.connected());
  }
}
