#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include <json.hpp>

#include "melodica/session.hpp"
#include "melodica/session_runner.hpp"

namespace melodica {

// ---- engine config ---------------------------------------------------------

/// Contents of the file named by MELODICA_CONFIG:
///   {"session": {...SessionConfig},
///    "song_bank": "songs.json",          // relative to the config file
///    "participants": {"P01": {"song": "Ode to Joy"}},
///    "robot": {"cue_s", "feedback_s", "phase_gap_s", "settle_s"},
///    "heartbeat_s": 1.0}
/// Every key is optional.
struct EngineConfig {
  SessionConfig session;
  SongBank bank = SongBank::builtin();
  std::map<std::string, std::string> preferred_songs;
  RobotTiming robot;
  double heartbeat_s = 1.0;

  ParticipantPrefs prefs_for(const std::string &participant_id) const;

  static EngineConfig from_json(const nlohmann::json &j,
                                const std::filesystem::path &base_dir = {});
  static EngineConfig load(const std::filesystem::path &path);
  /// MELODICA_CONFIG when set, the defaults otherwise.
  static EngineConfig from_env();
};

// ---- protocol --------------------------------------------------------------

/// {"type": ..., "body": {...}} as sent to the client.
nlohmann::json protocol_message(const std::string &type, nlohmann::json body);

/// Session service behind one participant channel. Frames come in as text,
/// replies go out as JSON objects; time is the caller's monotonic clock in
/// seconds. The session clock stops while the participant is away, so a
/// response window interrupted by a disconnect resumes where it was.
///
/// Client frames:
///   join {participant_id} | strike {note, t_s?} | mode_select {mode}
///   emotion_answer {text} | rating {value 1..5} | end {}
/// Server frames:
///   demonstrate | cue | feedback | game_prompt | state | error
class ServiceCore {
public:
  ServiceCore(SessionSpec spec, std::uint64_t seed, EngineConfig config,
              const RobotSimulator &robot);

  std::vector<nlohmann::json> on_message(const std::string &frame, double now_s);
  /// Fires due robot timers and the state heartbeat.
  std::vector<nlohmann::json> on_tick(double now_s);
  std::vector<nlohmann::json> on_disconnect(double now_s);

  bool joined() const noexcept { return driver_.has_value(); }
  bool connected() const noexcept { return connected_; }
  bool done() const noexcept { return done_; }
  /// Session clock: seconds since join, excluding time spent disconnected.
  double session_time(double now_s) const;
  /// Null before join.
  const SessionDriver *driver() const noexcept { return driver_ ? &*driver_ : nullptr; }
  nlohmann::json state(double now_s) const;

private:
  struct Timer {
    Event event;
    std::uint64_t order;
  };
  struct Later {
    bool operator()(const Timer &a, const Timer &b) const {
      return a.event.t_s != b.event.t_s ? a.event.t_s > b.event.t_s : a.order > b.order;
    }
  };

  void join(const nlohmann::json &body, double now_s, std::vector<nlohmann::json> &out);
  void feed(const Event &e, std::vector<nlohmann::json> &out);
  void translate(const Action &a, double t_s, std::vector<nlohmann::json> &out);
  void fire_due(double now_s, std::vector<nlohmann::json> &out);

  SessionSpec spec_;
  std::uint64_t seed_;
  EngineConfig config_;
  const RobotSimulator &robot_;

  std::optional<SessionDriver> driver_;
  std::string participant_;
  std::priority_queue<Timer, std::vector<Timer>, Later> timers_;
  std::uint64_t order_ = 0;
  std::string pending_cue_;
  bool connected_ = false;
  bool done_ = false;

  double start_s_ = 0;
  double paused_total_s_ = 0;
  std::optional<double> paused_since_;
  double last_heartbeat_s_ = 0;
};

} // namespace melodica
