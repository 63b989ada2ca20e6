#include "melodica/service.hpp"

#include <cstdlib>
#include <fstream>

#include "melodica/errors.hpp"

namespace melodica {

using nlohmann::json;

// ---- engine config ---------------------------------------------------------

ParticipantPrefs EngineConfig::prefs_for(const std::string &participant_id) const {
  ParticipantPrefs p;
  p.participant_id = participant_id;
  if (auto it = preferred_songs.find(participant_id); it != preferred_songs.end())
    p.song = it->second;
  return p;
}

EngineConfig EngineConfig::from_json(const json &j, const std::filesystem::path &base_dir) {
  if (!j.is_object())
    throw std::invalid_argument("engine config must be a JSON object");
  EngineConfig c;
  if (j.contains("session"))
    c.session = SessionConfig::from_json(j.at("session"));
  if (j.contains("song_bank")) {
    const auto &bank = j.at("song_bank");
    if (bank.is_string()) {
      std::filesystem::path p = bank.get<std::string>();
      if (p.is_relative())
        p = base_dir / p;
      c.bank = SongBank::load(p);
    } else {
      c.bank = SongBank::from_json(bank);
    }
  }
  if (j.contains("participants"))
    for (const auto &[id, prefs] : j.at("participants").items())
      if (prefs.contains("song"))
        c.preferred_songs[id] = prefs.at("song").get<std::string>();
  if (j.contains("robot")) {
    const auto &r = j.at("robot");
    c.robot.cue_s = r.value("cue_s", c.robot.cue_s);
    c.robot.feedback_s = r.value("feedback_s", c.robot.feedback_s);
    c.robot.phase_gap_s = r.value("phase_gap_s", c.robot.phase_gap_s);
    c.robot.settle_s = r.value("settle_s", c.robot.settle_s);
    if (c.robot.cue_s < 0 || c.robot.feedback_s < 0 || c.robot.phase_gap_s < 0 ||
        c.robot.settle_s < 0)
      throw std::invalid_argument("robot timings must be non-negative");
  }
  c.heartbeat_s = j.value("heartbeat_s", c.heartbeat_s);
  if (!(c.heartbeat_s > 0))
    throw std::invalid_argument("heartbeat_s must be positive");
  // Catch a misspelt preference now rather than at join time.
  for (const auto &[id, song] : c.preferred_songs)
    (void)c.bank.find(song);
  return c;
}

EngineConfig EngineConfig::load(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("cannot open engine config " + path.string());
  return from_json(json::parse(in), path.parent_path());
}

EngineConfig EngineConfig::from_env() {
  const char *p = std::getenv("MELODICA_CONFIG");
  if (p == nullptr || *p == '\0')
    return {};
  return load(p);
}

// ---- protocol --------------------------------------------------------------

json protocol_message(const std::string &type, json body) {
  return json{{"type", type}, {"body", std::move(body)}};
}

namespace {

template <class... Ts> struct overloaded : Ts... {
  using Ts::operator()...;
};

json error_message(const std::string &message) {
  return protocol_message("error", json{{"message", message}});
}

// Client bodies live under "body"; a flat object is accepted too.
const json &body_of(const json &msg) {
  if (auto it = msg.find("body"); it != msg.end() && it->is_object())
    return *it;
  return msg;
}

} // namespace

ServiceCore::ServiceCore(SessionSpec spec, std::uint64_t seed, EngineConfig config,
                         const RobotSimulator &robot)
    : spec_(spec), seed_(seed), config_(std::move(config)), robot_(robot) {}

double ServiceCore::session_time(double now_s) const {
  if (!driver_)
    return 0;
  const double until = paused_since_ ? *paused_since_ : now_s;
  return until - start_s_ - paused_total_s_;
}

json ServiceCore::state(double now_s) const {
  json body = driver_ ? driver_->engine().snapshot() : json{{"phase", nullptr}};
  body["t_s"] = session_time(now_s);
  body["paused"] = paused_since_.has_value();
  body["participant_id"] = participant_;
  return body;
}

std::vector<json> ServiceCore::on_message(const std::string &frame, double now_s) {
  std::vector<json> out;
  json msg;
  try {
    msg = json::parse(frame);
  } catch (const json::parse_error &e) {
    out.push_back(error_message(std::string("malformed frame: ") + e.what()));
    return out;
  }
  if (!msg.is_object() || !msg.contains("type") || !msg.at("type").is_string()) {
    out.push_back(error_message("frame must be an object with a string \"type\""));
    return out;
  }
  const std::string type = msg.at("type").get<std::string>();
  const json &body = body_of(msg);

  try {
    if (type == "join") {
      join(body, now_s, out);
      return out;
    }
    if (type != "strike" && type != "mode_select" && type != "emotion_answer" &&
        type != "rating" && type != "end") {
      out.push_back(error_message("unknown message type " + type));
      return out;
    }
    if (!driver_ || !connected_) {
      out.push_back(error_message("join first"));
      return out;
    }
    if (done_) {
      out.push_back(error_message("session is over"));
      return out;
    }
    // Let any timer that is already due go first, so the event lands in the
    // stage the participant saw.
    fire_due(now_s, out);
    const double t = session_time(now_s);
    EventBody ev;
    if (type == "strike") {
      const std::string note = body.at("note").get<std::string>();
      if (note.size() != 1)
        throw InvalidDigit(0);
      ev = ev::StrikeEvent{NoteId::from_hex(note[0])};
    } else if (type == "mode_select") {
      ev = ev::ModeSelected{body.at("mode").get<int>()};
    } else if (type == "emotion_answer") {
      ev = ev::EmotionAnswer{body.at("text").get<std::string>()};
    } else if (type == "rating") {
      const int v = body.at("value").get<int>();
      if (v < 1 || v > 5) {
        out.push_back(error_message("rating must be 1..5"));
        return out;
      }
      ev = ev::Rating{v};
    } else {
      ev = ev::EndRequested{};
    }
    feed({t, std::move(ev)}, out);
  } catch (const IllegalEvent &e) {
    out.push_back(error_message(e.what()));
  } catch (const json::exception &e) {
    out.push_back(error_message(std::string("bad body: ") + e.what()));
  } catch (const InvalidDigit &) {
    out.push_back(error_message("note must be one hex digit 1..b"));
  } catch (const Error &e) {
    out.push_back(error_message(e.what()));
  } catch (const std::invalid_argument &e) {
    out.push_back(error_message(e.what()));
  } catch (const std::out_of_range &e) {
    out.push_back(error_message(e.what()));
  }
  return out;
}

void ServiceCore::join(const json &body, double now_s, std::vector<json> &out) {
  const std::string id = body.at("participant_id").get<std::string>();
  if (id.empty()) {
    out.push_back(error_message("participant_id must not be empty"));
    return;
  }
  if (connected_) {
    out.push_back(error_message("a participant is already connected"));
    return;
  }
  if (driver_) {
    // Rejoin after a disconnect: only the same participant may resume.
    if (id != participant_) {
      out.push_back(error_message("session belongs to participant " + participant_));
      return;
    }
    connected_ = true;
    if (paused_since_) {
      paused_total_s_ += now_s - *paused_since_;
      paused_since_.reset();
    }
    out.push_back(protocol_message("state", state(now_s)));
    if (!done_)
      feed({session_time(now_s), ev::ParticipantRejoined{}}, out);
    return;
  }
  const SessionPlan plan = plan_session(spec_, config_.prefs_for(id), config_.bank,
                                        config_.session, seed_);
  participant_ = id;
  driver_.emplace(plan, seed_, json{{"participant_channel", "service"}});
  connected_ = true;
  start_s_ = now_s;
  last_heartbeat_s_ = now_s;
  feed({0.0, ev::PhaseStart{}}, out);
  // The opening state goes first so the client knows the phase before any
  // demonstration arrives.
  out.insert(out.begin(), protocol_message("state", state(now_s)));
}

std::vector<json> ServiceCore::on_tick(double now_s) {
  std::vector<json> out;
  if (!driver_)
    return out;
  if (connected_ && !done_)
    fire_due(now_s, out);
  if (connected_ && now_s - last_heartbeat_s_ >= config_.heartbeat_s) {
    last_heartbeat_s_ = now_s;
    out.push_back(protocol_message("state", state(now_s)));
  }
  return out;
}

std::vector<json> ServiceCore::on_disconnect(double now_s) {
  std::vector<json> out;
  if (!connected_)
    return out;
  connected_ = false;
  if (!driver_ || done_)
    return out;
  fire_due(now_s, out);
  feed({session_time(now_s), ev::ParticipantLeft{}}, out);
  paused_since_ = now_s;
  return out;
}

void ServiceCore::fire_due(double now_s, std::vector<json> &out) {
  const double t = session_time(now_s);
  while (!done_ && !timers_.empty() && timers_.top().event.t_s <= t) {
    const Event e = timers_.top().event;
    timers_.pop();
    feed(e, out);
  }
}

void ServiceCore::feed(const Event &e, std::vector<json> &out) {
  for (const Action &a : driver_->dispatch(e)) {
    translate(a, e.t_s, out);
    for (Event follow : robot_follow_ups(a, e.t_s, robot_))
      timers_.push({std::move(follow), order_++});
  }
}

void ServiceCore::translate(const Action &a, double t, std::vector<json> &out) {
  const std::string name = action_name(a);
  json payload = action_payload(a);
  std::visit(
      overloaded{
          [&](const act::DemonstrateMelody &) {
            out.push_back(protocol_message("demonstrate", payload));
          },
          [&](const act::PlaySong &) {
            payload["kind"] = "play_song";
            out.push_back(protocol_message("game_prompt", payload));
          },
          // The spoken cue and the eye flash are announced together when
          // the window opens; that is the moment the client should react to.
          [&](const act::VerbalCue &c) { pending_cue_ = c.text; },
          [&](const act::EyeFlash &) {},
          [&](const act::OpenResponseWindow &w) {
            out.push_back(protocol_message("cue", json{{"text", pending_cue_},
                                                       {"eye_flash", true},
                                                       {"window_s", w.seconds},
                                                       {"free_play", w.free_play},
                                                       {"t_s", t}}));
            pending_cue_.clear();
          },
          [&](const act::Feedback &) { out.push_back(protocol_message("feedback", payload)); },
          [&](const act::GamePrompt &) {
            payload["kind"] = "menu";
            out.push_back(protocol_message("game_prompt", payload));
          },
          [&](const act::EmotionPrompt &) {
            payload["kind"] = "emotion";
            out.push_back(protocol_message("game_prompt", payload));
          },
          [&](const act::RatingPrompt &) {
            payload["kind"] = "rating";
            out.push_back(protocol_message("game_prompt", payload));
          },
          [&](const act::RobotImitate &) {
            payload["kind"] = "imitate";
            out.push_back(protocol_message("game_prompt", payload));
          },
          [&](const act::Done &) {
            done_ = true;
            json body = driver_->engine().snapshot();
            body["event"] = name;
            body["summary"] = payload;
            out.push_back(protocol_message("state", body));
          },
          [&](const auto &) {
            json body = driver_->engine().snapshot();
            body["event"] = name;
            body["payload"] = payload;
            body["t_s"] = t;
            out.push_back(protocol_message("state", body));
          },
      },
      a);
}

} // namespace melodica
