#include "melodica/session_runner.hpp"

#include <fstream>
#include <queue>
#include <sstream>

#include "melodica/audio.hpp"
#include "melodica/errors.hpp"

namespace melodica {

using nlohmann::json;

// ---- log -------------------------------------------------------------------

std::string LogEntry::to_line() const {
  return json{{"seq", seq}, {"t_s", t_s}, {"dir", dir}, {"event", event}, {"payload", payload}}
      .dump();
}

LogEntry LogEntry::from_line(const std::string &line) {
  const json j = json::parse(line);
  LogEntry e;
  e.seq = j.at("seq").get<std::uint64_t>();
  e.t_s = j.at("t_s").get<double>();
  e.dir = j.at("dir").get<std::string>();
  e.event = j.at("event").get<std::string>();
  e.payload = j.value("payload", json::object());
  return e;
}

SessionDriver::SessionDriver(SessionPlan plan, std::uint64_t seed, json header_extra)
    : engine_(plan, seed) {
  json header{{"schema", kLogSchema},
              {"plan", plan.to_json()},
              {"seed", seed},
              {"turn_taking_grader", "automated timing rules (stand-in for human annotation)"}};
  if (header_extra.is_object())
    for (auto it = header_extra.begin(); it != header_extra.end(); ++it)
      header[it.key()] = it.value();
  push(0.0, "meta", "SessionHeader", std::move(header));
}

void SessionDriver::push(double t, std::string dir, std::string event, json payload) {
  entries_.push_back({entries_.size(), t, std::move(dir), std::move(event), std::move(payload)});
}

std::vector<Action> SessionDriver::dispatch(const Event &e) {
  push(e.t_s, "in", event_name(e.body), event_payload(e.body));
  std::vector<Action> actions;
  try {
    actions = engine_.advance(e);
  } catch (const IllegalEvent &err) {
    push(e.t_s, "error", "IllegalEvent", json{{"message", err.what()}});
    throw;
  }
  for (const Action &a : actions)
    push(e.t_s, "out", action_name(a), action_payload(a));
  return actions;
}

std::string SessionDriver::jsonl() const {
  std::string out;
  for (const auto &e : entries_) {
    out += e.to_line();
    out += '\n';
  }
  return out;
}

void SessionDriver::write(const std::filesystem::path &path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f)
    throw std::runtime_error("cannot write " + path.string());
  f << jsonl();
}

std::string replay_log(const std::string &jsonl) {
  std::istringstream in(jsonl);
  std::string line;
  std::optional<SessionDriver> driver;
  while (std::getline(in, line)) {
    if (line.empty())
      continue;
    const LogEntry e = LogEntry::from_line(line);
    if (e.dir == "meta" && e.event == "SessionHeader") {
      if (driver)
        throw std::invalid_argument("log has more than one header");
      json extra = e.payload;
      const auto plan = SessionPlan::from_json(extra.at("plan"));
      const auto seed = extra.at("seed").get<std::uint64_t>();
      for (const char *k : {"schema", "plan", "seed", "turn_taking_grader"})
        extra.erase(k);
      driver.emplace(plan, seed, extra);
    } else if (e.dir == "in") {
      if (!driver)
        throw std::invalid_argument("log does not start with a header");
      try {
        driver->dispatch({e.t_s, event_from(e.event, e.payload)});
      } catch (const IllegalEvent &) {
        // Logged by the driver, exactly as in the original run.
      }
    }
  }
  if (!driver)
    throw std::invalid_argument("empty log");
  return driver->jsonl();
}

// ---- robot -----------------------------------------------------------------

RobotSimulator::RobotSimulator(XylophoneModel model, Rig rig, RobotTiming timing)
    : model_(std::move(model)), rig_(std::move(rig)), timing_(timing) {
  table_ = strike_configs(model_, rig_);
}

std::array<JointTrajectory, 2> RobotSimulator::plan_performance(const Melody &melody) const {
  return generate_trajectory(melody, table_, rig_, traj_opts_);
}

double RobotSimulator::perform_duration(const std::vector<NoteId> &notes, double tempo_bpm) const {
  if (notes.empty())
    return timing_.settle_s;
  Melody m;
  m.notes = notes;
  m.tempo_bpm = tempo_bpm;
  const auto trajs = plan_performance(m);
  double end = 0;
  for (const auto &t : trajs)
    if (!t.path.empty())
      end = std::max(end, t.path.end_s());
  return end + timing_.settle_s;
}

std::vector<SimStrike> RobotSimulator::imitate(const std::vector<NoteId> &notes,
                                               const std::vector<double> &onsets_s) const {
  if (notes.empty())
    return {};
  Melody take;
  take.notes = notes;
  take.onsets_s = onsets_s;
  take.validate();

  // What the robot hears: the take rendered as audio and run through the
  // note detector.
  Timbre timbre;
  timbre.lead_in_s = 0.2;
  Melody heard_take = take;
  for (double &t : *heard_take.onsets_s)
    t += timbre.lead_in_s;
  const auto detected = detect_notes(synthesize_melody(heard_take, timbre));
  if (detected.empty())
    return {};

  // Replay at the detected timing, nudging strikes apart where one arm
  // could not keep up.
  Melody copy;
  copy.onsets_s.emplace();
  const double t0 = detected.front().onset_s;
  const double min_gap = traj_opts_.strike_dur_s + 0.05;
  for (const auto &ev : detected) {
    double t = ev.onset_s - t0;
    if (!copy.onsets_s->empty())
      t = std::max(t, copy.onsets_s->back() + min_gap);
    copy.notes.push_back(ev.note);
    copy.onsets_s->push_back(t);
  }
  const auto trajs = plan_performance(copy);
  return execute_sim(trajs, model_, rig_);
}

// ---- personas --------------------------------------------------------------

const char *to_string(PersonaKind p) noexcept {
  switch (p) {
  case PersonaKind::Perfect:
    return "perfect";
  case PersonaKind::Noisy:
    return "noisy";
  case PersonaKind::Silent:
    return "silent";
  case PersonaKind::Cyclic:
    return "cyclic";
  }
  return "?";
}

PersonaKind persona_from_string(const std::string &s) {
  for (PersonaKind p :
       {PersonaKind::Perfect, PersonaKind::Noisy, PersonaKind::Silent, PersonaKind::Cyclic})
    if (s == to_string(p))
      return p;
  throw std::invalid_argument("unknown persona " + s);
}

Persona::Persona(PersonaKind kind, std::uint64_t seed, RobotTiming timing)
    : kind_(kind), rng_(seed ^ 0x9e3779b97f4a7c15ull), timing_(timing) {}

std::vector<Event> Persona::play(const std::vector<NoteId> &notes, double start_s,
                                 double spacing_s) {
  std::vector<Event> out;
  for (std::size_t i = 0; i < notes.size(); ++i)
    out.push_back({start_s + spacing_s * static_cast<double>(i), ev::StrikeEvent{notes[i]}});
  return out;
}

namespace {

template <class... Ts> struct overloaded : Ts... {
  using Ts::operator()...;
};

constexpr int kCycle[] = {3, 2, 1, 0};
constexpr const char *kFeelings[] = {"happy", "calm", "excited", "sad", "sleepy"};

} // namespace

std::vector<Event> Persona::react(const Action &a, double t) {
  std::vector<Event> out;
  std::visit(
      overloaded{
          [&](const act::PhaseChanged &p) { phase_ = p.phase; },
          [&](const act::DemonstrateMelody &d) {
            target_ = d.notes;
            const bool graded = d.phase != Phase::Gameplay;
            switch (kind_) {
            case PersonaKind::Perfect:
              level_ = 3;
              break;
            case PersonaKind::Silent:
              level_ = 0;
              break;
            case PersonaKind::Cyclic:
              level_ = graded ? kCycle[cycle_++ % 4] : 3;
              break;
            case PersonaKind::Noisy: {
              const double u = rng_.uniform();
              level_ = u < 0.7 ? 3 : u < 0.85 ? 2 : u < 0.95 ? 1 : 0;
              // Occasional slips on individual notes.
              for (auto &n : target_)
                if (rng_.chance(0.15))
                  n = NoteId(rng_.between(NoteId::kMin, NoteId::kMax));
              break;
            }
            }
            if (level_ == 1)
              out.push_back({t + 0.1, ev::StrikeEvent{target_.front()}});
          },
          [&](const act::VerbalCue &) {
            // Jumping the gun: first note half a second before the flash.
            if (level_ == 2 && !target_.empty())
              out.push_back({t + timing_.cue_s - 0.5, ev::StrikeEvent{target_.front()}});
          },
          [&](const act::OpenResponseWindow &w) {
            if (w.free_play) {
              if (kind_ == PersonaKind::Silent)
                return;
              std::vector<NoteId> notes(static_cast<std::size_t>(rng_.between(3, 5)), NoteId(1));
              for (auto &n : notes)
                n = NoteId(rng_.between(NoteId::kMin, NoteId::kMax));
              out = play(notes, t + 0.5, 0.6);
              return;
            }
            if (level_ == 0 || target_.empty())
              return;
            std::vector<NoteId> notes = target_;
            if (level_ == 2)
              notes.erase(notes.begin());
            const double spacing =
                std::min(0.5, (w.seconds - 1.0) / static_cast<double>(target_.size()));
            out = play(notes, t + 0.5, spacing);
            level_ = 3;
          },
          [&](const act::GamePrompt &g) {
            ++prompts_;
            const double at = t + 1.5;
            switch (kind_) {
            case PersonaKind::Silent:
              out.push_back({at, ev::EndRequested{}});
              break;
            case PersonaKind::Noisy:
              if (prompts_ <= 3)
                out.push_back({at, ev::ModeSelected{rng_.between(1, 3)}});
              else
                out.push_back({at, ev::EndRequested{}});
              break;
            default:
              if (!g.unplayed.empty())
                out.push_back({at, ev::ModeSelected{g.unplayed.front()}});
              else
                out.push_back({at, ev::EndRequested{}});
              break;
            }
          },
          [&](const act::EmotionPrompt &) {
            std::string text;
            if (kind_ != PersonaKind::Silent)
              text = kFeelings[rng_.index(std::size(kFeelings))];
            out.push_back({t + 2.0, ev::EmotionAnswer{text}});
          },
          [&](const act::RatingPrompt &) {
            int v = 0;
            if (kind_ == PersonaKind::Perfect)
              v = 5;
            else if (kind_ == PersonaKind::Cyclic)
              v = 4;
            else if (kind_ == PersonaKind::Noisy)
              v = rng_.between(1, 5);
            out.push_back({t + 2.0, ev::Rating{v}});
          },
          [&](const auto &) {},
      },
      a);
  return out;
}

// ---- runner ----------------------------------------------------------------

namespace {

struct Pending {
  Event event;
  std::uint64_t order;
};

struct Later {
  bool operator()(const Pending &a, const Pending &b) const {
    if (a.event.t_s != b.event.t_s)
      return a.event.t_s > b.event.t_s;
    return a.order > b.order;
  }
};

} // namespace

std::vector<Event> robot_follow_ups(const Action &a, double t, const RobotSimulator &robot) {
  const RobotTiming &timing = robot.timing();
  std::vector<Event> out;
  std::visit(overloaded{
                 [&](const act::PhaseChanged &p) {
                   if (p.phase != Phase::Done)
                     out.push_back({t + timing.phase_gap_s, ev::PhaseStart{}});
                 },
                 [&](const act::DemonstrateMelody &d) {
                   out.push_back({t + robot.perform_duration(d.notes, d.tempo_bpm),
                                  ev::DemonstrationDone{}});
                 },
                 [&](const act::PlaySong &s) {
                   out.push_back({t + robot.perform_duration(s.notes, s.tempo_bpm),
                                  ev::DemonstrationDone{}});
                 },
                 [&](const act::VerbalCue &) { out.push_back({t + timing.cue_s, ev::CueIssued{}}); },
                 [&](const act::OpenResponseWindow &w) {
                   out.push_back({t + w.seconds, ev::WindowElapsed{}});
                 },
                 [&](const act::Feedback &) {
                   out.push_back({t + timing.feedback_s, ev::FeedbackDone{}});
                 },
                 [&](const act::RobotImitate &r) {
                   ev::ImitationDone d;
                   double end = 0;
                   for (const auto &s : robot.imitate(r.notes, r.onsets_s)) {
                     d.notes.push_back(s.note);
                     end = std::max(end, s.t_s);
                   }
                   out.push_back({t + end + timing.settle_s, std::move(d)});
                 },
                 [&](const auto &) {},
             },
             a);
  return out;
}

RunResult run_scripted_session(const SessionPlan &plan, std::uint64_t seed, PersonaKind kind,
                               const RobotSimulator &robot) {
  SessionDriver driver(plan, seed, json{{"persona", to_string(kind)}});
  Persona persona(kind, seed, robot.timing());
  std::priority_queue<Pending, std::vector<Pending>, Later> queue;
  std::uint64_t order = 0;
  auto schedule = [&](Event e) { queue.push({std::move(e), order++}); };

  RunResult result;
  // The opening phase is entered without a PhaseChanged.
  result.phase_order.push_back(plan.phases.front());
  schedule({0.0, ev::PhaseStart{}});
  bool done = false;
  while (!done && !queue.empty()) {
    const Event e = queue.top().event;
    queue.pop();
    const double t = e.t_s;
    for (const Action &a : driver.dispatch(e)) {
      for (Event reply : persona.react(a, t))
        schedule(std::move(reply));
      if (const auto *p = std::get_if<act::PhaseChanged>(&a))
        result.phase_order.push_back(p->phase);
      if (const auto *d = std::get_if<act::Done>(&a)) {
        result.summary = d->summary;
        done = true;
      }
      for (Event follow : robot_follow_ups(a, t, robot))
        schedule(std::move(follow));
    }
  }
  if (!done)
    throw std::logic_error("scripted session stalled before Done");
  result.grades = driver.engine().grades();
  result.jsonl = driver.jsonl();
  return result;
}

} // namespace melodica
