#include "melodica/session.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "melodica/errors.hpp"

namespace melodica {

using nlohmann::json;

namespace {

template <class... Ts> struct overloaded : Ts... {
  using Ts::operator()...;
};

// Empty strings are allowed here: a silent take has no notes.
std::vector<NoteId> notes_from_hex(const std::string &hex) {
  return hex.empty() ? std::vector<NoteId>{} : parse_hex_melody(hex).notes;
}

json song_json(const Song &s) {
  json j{{"name", s.name},
         {"melody", s.melody.to_hex()},
         {"tempo_bpm", s.melody.tempo_bpm}};
  if (s.placeholder)
    j["placeholder"] = true;
  return j;
}

Song song_from(const json &j) {
  Song s;
  s.name = j.at("name").get<std::string>();
  s.melody = parse_hex_melody(j.at("melody").get<std::string>(), j.value("tempo_bpm", 100.0));
  s.placeholder = j.value("placeholder", false);
  if (s.melody.notes.empty())
    throw std::invalid_argument("song '" + s.name + "' has no notes");
  return s;
}

} // namespace

// ---- song bank -------------------------------------------------------------

SongBank::SongBank(std::vector<Song> songs) : songs_(std::move(songs)) {}

SongBank SongBank::builtin() {
  // Title, hex melody, tempo, placeholder. Bars 1..b are C6..F7.
  struct Row {
    const char *name, *hex;
    double bpm;
    bool placeholder;
  };
  static constexpr Row rows[] = {
      {kEntrySong, "11556654433221", 100, false},
      {"Can Can", "124325556342", 120, true},
      {"Shake It Off", "5556543215", 120, true},
      {"SpongeBob SquarePants", "1355531355", 110, true},
      {"You Are My Sunshine", "589aaa9a88", 100, true},
      {"Mary Had a Little Lamb", "3212333222355", 110, false},
      {"Ode to Joy", "334554321123322", 110, false},
      {"Hot Cross Buns", "321321", 100, false},
      {"Row, Row, Row Your Boat", "1112332345", 100, false},
      {"London Bridge", "5654345234345", 110, false},
      {"Frere Jacques", "12311231345345", 110, false},
  };
  std::vector<Song> songs;
  for (const auto &r : rows)
    songs.push_back({r.name, parse_hex_melody(r.hex, r.bpm), r.placeholder});
  return SongBank(std::move(songs));
}

SongBank SongBank::from_json(const json &j) {
  std::vector<Song> songs;
  for (const auto &s : j.at("songs"))
    songs.push_back(song_from(s));
  return SongBank(std::move(songs));
}

SongBank SongBank::load(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("cannot open song bank " + path.string());
  return from_json(json::parse(in));
}

json SongBank::to_json() const {
  json arr = json::array();
  for (const auto &s : songs_)
    arr.push_back(song_json(s));
  return json{{"songs", arr}};
}

const Song &SongBank::find(const std::string &name) const {
  for (const auto &s : songs_)
    if (s.name == name)
      return s;
  throw UnknownSong("song not in bank: " + name);
}

// ---- plan ------------------------------------------------------------------

SessionSpec SessionSpec::parse(const std::string &text) {
  if (text == "baseline")
    return {SessionKind::Baseline, 0};
  if (text == "exit")
    return {SessionKind::Exit, 0};
  const std::string prefix = "intervention:";
  if (text.rfind(prefix, 0) == 0) {
    const std::string num = text.substr(prefix.size());
    if (num.size() == 1 && num[0] >= '1' && num[0] <= '4')
      return {SessionKind::Intervention, num[0] - '0'};
  }
  throw std::invalid_argument("session kind must be baseline, exit or intervention:1..4, got '" +
                              text + "'");
}

std::string SessionSpec::to_string() const {
  switch (kind) {
  case SessionKind::Baseline:
    return "baseline";
  case SessionKind::Exit:
    return "exit";
  case SessionKind::Intervention:
    return "intervention:" + std::to_string(intervention);
  }
  return "?";
}

const char *to_string(Phase p) noexcept {
  switch (p) {
  case Phase::WarmUp:
    return "WarmUp";
  case Phase::SinglePractice:
    return "SinglePractice";
  case Phase::MusicPractice:
    return "MusicPractice";
  case Phase::Gameplay:
    return "Gameplay";
  case Phase::Done:
    return "Done";
  }
  return "?";
}

Phase phase_from_string(const std::string &s) {
  for (Phase p : {Phase::WarmUp, Phase::SinglePractice, Phase::MusicPractice, Phase::Gameplay,
                  Phase::Done})
    if (s == to_string(p))
      return p;
  throw std::invalid_argument("unknown phase " + s);
}

json SessionConfig::to_json() const {
  return json{{"response_window_s", response_window_s},
              {"window_per_note_s", window_per_note_s},
              {"free_play_window_s", free_play_window_s},
              {"warmup_trials", warmup_trials},
              {"practice_trials", practice_trials},
              {"practice_threshold", practice_threshold},
              {"max_extra_rounds", max_extra_rounds},
              {"baseline_unit", baseline_unit},
              {"game_melody_length", game_melody_length}};
}

SessionConfig SessionConfig::from_json(const json &j) {
  SessionConfig c;
  c.response_window_s = j.value("response_window_s", c.response_window_s);
  c.window_per_note_s = j.value("window_per_note_s", c.window_per_note_s);
  c.free_play_window_s = j.value("free_play_window_s", c.free_play_window_s);
  c.warmup_trials = j.value("warmup_trials", c.warmup_trials);
  c.practice_trials = j.value("practice_trials", c.practice_trials);
  c.practice_threshold = j.value("practice_threshold", c.practice_threshold);
  c.max_extra_rounds = j.value("max_extra_rounds", c.max_extra_rounds);
  c.baseline_unit = j.value("baseline_unit", c.baseline_unit);
  c.game_melody_length = j.value("game_melody_length", c.game_melody_length);
  if (c.response_window_s < 5.0 || c.response_window_s > 10.0)
    throw std::invalid_argument("response_window_s must lie in [5, 10]");
  if (c.practice_trials == 0 || c.baseline_unit == 0 || c.game_melody_length < 2)
    throw std::invalid_argument("practice_trials, baseline_unit must be positive and "
                                "game_melody_length at least 2");
  if (!(c.practice_threshold > 0.0 && c.practice_threshold < 1.0))
    throw std::invalid_argument("practice_threshold must lie in (0, 1)");
  if (c.free_play_window_s <= 0.0 || c.window_per_note_s < 0.0)
    throw std::invalid_argument("window lengths must be positive");
  return c;
}

double SessionPlan::window_for(std::size_t notes) const {
  return std::max(config.response_window_s,
                  1.0 + config.window_per_note_s * static_cast<double>(notes));
}

json SessionPlan::to_json() const {
  json phases_j = json::array();
  for (Phase p : phases)
    phases_j.push_back(to_string(p));
  json games = json::array();
  for (const auto &s : game_songs)
    games.push_back(song_json(s));
  return json{{"kind", spec.to_string()},
              {"participant", participant_id},
              {"song", song_json(song)},
              {"phases", phases_j},
              {"practice_unit", practice_unit},
              {"warmup_unit", warmup_unit},
              {"config", config.to_json()},
              {"game_songs", games}};
}

SessionPlan SessionPlan::from_json(const json &j) {
  SessionPlan p;
  p.spec = SessionSpec::parse(j.at("kind").get<std::string>());
  p.participant_id = j.value("participant", "");
  p.song = song_from(j.at("song"));
  for (const auto &s : j.at("phases"))
    p.phases.push_back(phase_from_string(s.get<std::string>()));
  p.practice_unit = j.at("practice_unit").get<std::size_t>();
  p.warmup_unit = j.value("warmup_unit", std::size_t{1});
  p.config = SessionConfig::from_json(j.value("config", json::object()));
  for (const auto &s : j.at("game_songs"))
    p.game_songs.push_back(song_from(s));
  if (p.game_songs.empty() || p.practice_unit == 0 || p.warmup_unit == 0)
    throw std::invalid_argument("plan needs game songs and positive unit lengths");
  return p;
}

std::size_t intervention_unit(int n, std::size_t len) {
  switch (n) {
  case 1:
    return 1;
  case 2:
    return std::min<std::size_t>(3, len);
  case 3:
    return (len + 1) / 2;
  case 4:
    return len;
  }
  throw std::invalid_argument("intervention index must be 1..4");
}

std::vector<std::vector<NoteId>> split_units(const std::vector<NoteId> &notes, std::size_t unit) {
  if (unit == 0)
    throw std::invalid_argument("unit length must be positive");
  std::vector<std::vector<NoteId>> out;
  for (std::size_t i = 0; i < notes.size(); i += unit)
    out.emplace_back(notes.begin() + static_cast<std::ptrdiff_t>(i),
                     notes.begin() + static_cast<std::ptrdiff_t>(std::min(notes.size(), i + unit)));
  return out;
}

SessionPlan plan_session(const SessionSpec &spec, const ParticipantPrefs &prefs,
                         const SongBank &bank, const SessionConfig &config, std::uint64_t seed) {
  if (bank.empty())
    throw std::invalid_argument("song bank is empty");
  SessionPlan plan;
  plan.spec = spec;
  plan.participant_id = prefs.participant_id;
  plan.config = config;
  plan.game_songs = bank.songs();

  switch (spec.kind) {
  case SessionKind::Baseline:
    plan.song = bank.find(kEntrySong);
    break;
  case SessionKind::Intervention:
    if (spec.intervention < 1 || spec.intervention > 4)
      throw std::invalid_argument("intervention index must be 1..4");
    plan.song = prefs.song ? bank.find(*prefs.song) : bank.find(kEntrySong);
    break;
  case SessionKind::Exit:
    if (prefs.song) {
      plan.song = bank.find(*prefs.song);
    } else {
      // Stand-in for the participant's pick when none was recorded.
      Rng rng(seed ^ 0x5eed50f7ull);
      plan.song = bank.songs()[rng.index(bank.songs().size())];
    }
    break;
  }

  const std::size_t len = plan.song.melody.notes.size();
  if (spec.kind == SessionKind::Intervention) {
    plan.phases = {Phase::WarmUp, Phase::SinglePractice, Phase::Gameplay};
    plan.practice_unit = intervention_unit(spec.intervention, len);
    // Warm-up revisits the previous session's difficulty.
    plan.warmup_unit = spec.intervention == 1 ? 1 : intervention_unit(spec.intervention - 1, len);
  } else {
    plan.phases = {Phase::MusicPractice, Phase::Gameplay};
    plan.practice_unit = std::min(config.baseline_unit, len);
    plan.warmup_unit = 1;
  }
  return plan;
}

// ---- game mode 2 -----------------------------------------------------------

const char *to_string(Harmony h) noexcept {
  return h == Harmony::Consonant ? "consonant" : "dissonant";
}

bool interval_allowed(Harmony h, NoteId a, NoteId b) {
  const XylophoneModel &m = []() -> const XylophoneModel & {
    static const XylophoneModel model = XylophoneModel::standard();
    return model;
  }();
  const int semis = std::abs(m.bar(a).midi - m.bar(b).midi);
  if (h == Harmony::Consonant)
    return semis == 3 || semis == 4 || semis == 5 || semis == 7 || semis == 8 || semis == 9 ||
           semis == 12;
  // In C major the only tritones are F-B and B-F.
  return semis == 1 || semis == 2 || semis == 11 || semis == 6;
}

std::vector<NoteId> generate_game_melody(Harmony h, std::size_t length, Rng &rng) {
  std::vector<NoteId> out;
  if (length == 0)
    return out;
  out.push_back(NoteId(rng.between(NoteId::kMin, NoteId::kMax)));
  while (out.size() < length) {
    std::vector<NoteId> next;
    for (int n = NoteId::kMin; n <= NoteId::kMax; ++n)
      if (interval_allowed(h, out.back(), NoteId(n)))
        next.emplace_back(n);
    // Every bar has at least one neighbor at a second, and one at a third or
    // more, so next is never empty.
    out.push_back(next[rng.index(next.size())]);
  }
  return out;
}

// ---- turn taking -----------------------------------------------------------

const char *to_string(TurnTaking t) noexcept {
  switch (t) {
  case TurnTaking::WellDone:
    return "WellDone";
  case TurnTaking::LightInterrupt:
    return "LightInterrupt";
  case TurnTaking::HeavyInterrupt:
    return "HeavyInterrupt";
  case TurnTaking::Indifferent:
    return "Indifferent";
  }
  return "?";
}

std::vector<NoteId> Conversation::repeat_notes() const {
  std::vector<NoteId> out;
  for (const auto &s : strikes)
    if (s.t_s >= demo_end_s && s.t_s <= window_close_s)
      out.push_back(s.note);
  return out;
}

json Conversation::to_json() const {
  json strikes_j = json::array();
  for (const auto &s : strikes)
    strikes_j.push_back({{"note", std::string(1, s.note.to_hex())}, {"t_s", s.t_s}});
  json j{{"phase", to_string(phase)},
         {"index", index},
         {"interrupted", interrupted},
         {"strikes", strikes_j},
         {"movements",
          json::array({
              {{"name", "demonstrate"},
               {"actor", "robot"},
               {"start_s", demo_start_s},
               {"end_s", demo_end_s},
               {"melody", to_hex(target)}},
              {{"name", "repeat"},
               {"actor", "participant"},
               {"start_s", window_open_s},
               {"end_s", window_close_s},
               {"detected", to_hex(repeat_notes())}},
              {{"name", "result"},
               {"actor", "robot"},
               {"start_s", window_close_s},
               {"end_s", result_end_s}},
          })}};
  if (record) {
    j["movements"][1]["likelihood"] = record->likelihood;
    j["movements"][2]["verdict"] = to_string(record->verdict);
  }
  return j;
}

TurnTaking grade_turn_taking(const Conversation &conv) {
  if (!conv.closed)
    throw OpenConversation("conversation " + std::to_string(conv.index) + " is still open");
  bool in_demo = false, in_result = false;
  std::optional<double> first_repeat;
  for (const auto &s : conv.strikes) {
    if (s.t_s >= conv.demo_start_s && s.t_s < conv.demo_end_s)
      in_demo = true;
    else if (s.t_s >= conv.demo_end_s && s.t_s <= conv.window_close_s)
      first_repeat = first_repeat ? std::min(*first_repeat, s.t_s) : s.t_s;
    else if (s.t_s > conv.window_close_s && s.t_s <= conv.result_end_s)
      in_result = true;
  }
  if (in_demo)
    return first_repeat ? TurnTaking::HeavyInterrupt : TurnTaking::Indifferent;
  if (!first_repeat)
    return in_result ? TurnTaking::LightInterrupt : TurnTaking::Indifferent;
  if (*first_repeat < conv.window_open_s || in_result)
    return TurnTaking::LightInterrupt;
  return TurnTaking::WellDone;
}

double normalize_scores(const std::vector<TurnTaking> &grades) {
  if (grades.empty())
    throw NoGrades("no turn-taking grades to normalize");
  int sum = 0;
  for (TurnTaking g : grades)
    sum += points(g);
  return 100.0 * sum / (3.0 * static_cast<double>(grades.size()));
}

// ---- events and actions ----------------------------------------------------

namespace {

std::string hex1(NoteId n) { return std::string(1, n.to_hex()); }

NoteId note_from_json(const json &j) {
  const std::string s = j.get<std::string>();
  if (s.size() != 1)
    throw InvalidDigit(0);
  return NoteId::from_hex(s[0]);
}

} // namespace

std::string event_name(const EventBody &e) {
  return std::visit(overloaded{
                        [](const ev::PhaseStart &) { return "PhaseStart"; },
                        [](const ev::DemonstrationDone &) { return "DemonstrationDone"; },
                        [](const ev::CueIssued &) { return "CueIssued"; },
                        [](const ev::StrikeEvent &) { return "StrikeEvent"; },
                        [](const ev::WindowElapsed &) { return "WindowElapsed"; },
                        [](const ev::FeedbackDone &) { return "FeedbackDone"; },
                        [](const ev::ModeSelected &) { return "ModeSelected"; },
                        [](const ev::EndRequested &) { return "EndRequested"; },
                        [](const ev::EmotionAnswer &) { return "EmotionAnswer"; },
                        [](const ev::Rating &) { return "Rating"; },
                        [](const ev::ImitationDone &) { return "ImitationDone"; },
                        [](const ev::ParticipantLeft &) { return "ParticipantLeft"; },
                        [](const ev::ParticipantRejoined &) { return "ParticipantRejoined"; },
                    },
                    e);
}

json event_payload(const EventBody &e) {
  return std::visit(overloaded{
                        [](const ev::StrikeEvent &s) { return json{{"note", hex1(s.note)}}; },
                        [](const ev::ModeSelected &m) { return json{{"mode", m.mode}}; },
                        [](const ev::EmotionAnswer &a) { return json{{"text", a.text}}; },
                        [](const ev::Rating &r) { return json{{"value", r.value}}; },
                        [](const ev::ImitationDone &d) { return json{{"notes", to_hex(d.notes)}}; },
                        [](const auto &) { return json::object(); },
                    },
                    e);
}

EventBody event_from(const std::string &name, const json &p) {
  if (name == "PhaseStart")
    return ev::PhaseStart{};
  if (name == "DemonstrationDone")
    return ev::DemonstrationDone{};
  if (name == "CueIssued")
    return ev::CueIssued{};
  if (name == "StrikeEvent")
    return ev::StrikeEvent{note_from_json(p.at("note"))};
  if (name == "WindowElapsed")
    return ev::WindowElapsed{};
  if (name == "FeedbackDone")
    return ev::FeedbackDone{};
  if (name == "ModeSelected")
    return ev::ModeSelected{p.at("mode").get<int>()};
  if (name == "EndRequested")
    return ev::EndRequested{};
  if (name == "EmotionAnswer")
    return ev::EmotionAnswer{p.at("text").get<std::string>()};
  if (name == "Rating")
    return ev::Rating{p.at("value").get<int>()};
  if (name == "ImitationDone")
    return ev::ImitationDone{notes_from_hex(p.at("notes").get<std::string>())};
  if (name == "ParticipantLeft")
    return ev::ParticipantLeft{};
  if (name == "ParticipantRejoined")
    return ev::ParticipantRejoined{};
  throw std::invalid_argument("unknown event " + name);
}

std::string action_name(const Action &a) {
  return std::visit(overloaded{
                        [](const act::PhaseChanged &) { return "PhaseChanged"; },
                        [](const act::DemonstrateMelody &) { return "DemonstrateMelody"; },
                        [](const act::PlaySong &) { return "PlaySong"; },
                        [](const act::VerbalCue &) { return "VerbalCue"; },
                        [](const act::EyeFlash &) { return "EyeFlash"; },
                        [](const act::OpenResponseWindow &) { return "OpenResponseWindow"; },
                        [](const act::Feedback &) { return "Feedback"; },
                        [](const act::TurnTakingGraded &) { return "TurnTakingGraded"; },
                        [](const act::ExtraPractice &) { return "ExtraPractice"; },
                        [](const act::GamePrompt &) { return "GamePrompt"; },
                        [](const act::EmotionPrompt &) { return "EmotionPrompt"; },
                        [](const act::RatingPrompt &) { return "RatingPrompt"; },
                        [](const act::RobotImitate &) { return "RobotImitate"; },
                        [](const act::Done &) { return "Done"; },
                    },
                    a);
}

json action_payload(const Action &a) {
  return std::visit(
      overloaded{
          [](const act::PhaseChanged &p) { return json{{"phase", to_string(p.phase)}}; },
          [](const act::DemonstrateMelody &d) {
            return json{{"notes", to_hex(d.notes)},
                        {"tempo_bpm", d.tempo_bpm},
                        {"color_hint", d.color_hint},
                        {"phase", to_string(d.phase)}};
          },
          [](const act::PlaySong &s) {
            return json{{"name", s.name}, {"notes", to_hex(s.notes)}, {"tempo_bpm", s.tempo_bpm}};
          },
          [](const act::VerbalCue &c) { return json{{"text", c.text}}; },
          [](const act::EyeFlash &) { return json::object(); },
          [](const act::OpenResponseWindow &w) {
            return json{{"seconds", w.seconds}, {"free_play", w.free_play}};
          },
          [](const act::Feedback &f) {
            return json{{"text", f.text},
                        {"verdict", to_string(f.verdict)},
                        {"likelihood", f.likelihood},
                        {"target", to_hex(f.target)},
                        {"detected", to_hex(f.detected)},
                        {"graded", f.graded}};
          },
          [](const act::TurnTakingGraded &g) {
            return json{{"level", to_string(g.level)},
                        {"points", points(g.level)},
                        {"grader", "automated timing rules"}};
          },
          [](const act::ExtraPractice &x) { return json{{"trials", x.trials}}; },
          [](const act::GamePrompt &g) { return json{{"modes", {1, 2, 3}}, {"unplayed", g.unplayed}}; },
          [](const act::EmotionPrompt &e) {
            json j{{"question", e.question}};
            if (!e.style.empty())
              j["style"] = e.style;
            return j;
          },
          [](const act::RatingPrompt &) { return json{{"scale", {1, 5}}}; },
          [](const act::RobotImitate &r) {
            return json{{"notes", to_hex(r.notes)}, {"onsets_s", r.onsets_s}};
          },
          [](const act::Done &d) { return d.summary; },
      },
      a);
}

// ---- engine ----------------------------------------------------------------

namespace {

constexpr std::size_t kMaxGameModes = 12;

const char *stage_name(int s) {
  static constexpr const char *names[] = {
      "AwaitPhaseStart", "Demonstrating", "AwaitCue",  "Window",         "Result", "GameMenu",
      "SongPlaying",     "EmotionQuestion", "Imitating", "RatingQuestion", "Finished"};
  return names[s];
}

} // namespace

SessionEngine::SessionEngine(SessionPlan plan, std::uint64_t seed)
    : plan_(std::move(plan)), rng_(seed), warmup_(plan_.config.practice_threshold),
      practice_(plan_.config.practice_threshold) {
  if (plan_.phases.empty() || plan_.game_songs.empty())
    throw std::invalid_argument("plan needs phases and game songs");
  practice_units_ = split_units(plan_.song.melody.notes, plan_.practice_unit);
  warmup_units_ = split_units(plan_.song.melody.notes, plan_.warmup_unit);
}

Phase SessionEngine::phase() const noexcept {
  return stage_ == Stage::Finished ? Phase::Done : plan_.phases[phase_index_];
}

std::vector<int> SessionEngine::modes_played() const {
  std::vector<int> out;
  for (auto [m, n] : mode_counts_)
    if (n > 0)
      out.push_back(m);
  return out;
}

std::optional<double> SessionEngine::turn_taking_percent() const {
  if (grades_.empty())
    return std::nullopt;
  return normalize_scores(grades_);
}

json SessionEngine::snapshot() const {
  json j{{"phase", to_string(phase())},
         {"stage", stage_name(static_cast<int>(stage_))},
         {"window_open", window_open()},
         {"conversations", closed_.size()},
         {"practice_accuracy", practice_.accuracy()},
         {"modes_played", modes_played()}};
  const auto tt = turn_taking_percent();
  j["turn_taking_percent"] = tt ? json(*tt) : json(nullptr);
  return j;
}

void SessionEngine::illegal(const Event &e) const {
  throw IllegalEvent("event " + event_name(e.body) + " not allowed in stage " +
                     stage_name(static_cast<int>(stage_)) + " of phase " + to_string(phase()));
}

std::vector<Action> SessionEngine::advance(const Event &e) {
  if (stage_ == Stage::Finished)
    illegal(e);
  std::vector<Action> out;
  const double t = e.t_s;
  std::visit(
      overloaded{
          [&](const ev::PhaseStart &) {
            if (stage_ != Stage::AwaitPhaseStart)
              illegal(e);
            start_phase(t, out);
          },
          [&](const ev::DemonstrationDone &) {
            if (stage_ == Stage::SongPlaying) {
              out.push_back(act::EmotionPrompt{"How did that song make you feel?", ""});
              stage_ = Stage::EmotionQuestion;
              return;
            }
            if (stage_ != Stage::Demonstrating)
              illegal(e);
            open_->demo_end_s = t;
            if (activity_ == Activity::Mode2) {
              out.push_back(act::EmotionPrompt{"How does this melody make you feel?",
                                               game_log_.back().at("style").get<std::string>()});
              stage_ = Stage::EmotionQuestion;
              return;
            }
            cue(out, kCueText);
          },
          [&](const ev::CueIssued &) {
            if (stage_ != Stage::AwaitCue)
              illegal(e);
            if (activity_ == Activity::Mode3) {
              out.push_back(act::OpenResponseWindow{plan_.config.free_play_window_s, true});
            } else {
              open_->window_open_s = t;
              out.push_back(act::OpenResponseWindow{plan_.window_for(open_->target.size()), false});
            }
            stage_ = Stage::Window;
          },
          [&](const ev::StrikeEvent &s) {
            if (activity_ == Activity::Mode3 && stage_ == Stage::Window)
              free_play_.push_back({s.note, t});
            if (open_) {
              open_->strikes.push_back({s.note, t});
              if (stage_ == Stage::Demonstrating)
                open_->interrupted = true;
            }
          },
          [&](const ev::WindowElapsed &) {
            if (stage_ != Stage::Window)
              illegal(e);
            close_window(t, out);
          },
          [&](const ev::FeedbackDone &) {
            if (stage_ != Stage::Result)
              illegal(e);
            finish_result(t, out);
          },
          [&](const ev::ModeSelected &m) {
            if (stage_ != Stage::GameMenu)
              illegal(e);
            if (m.mode < 1 || m.mode > 3)
              throw IllegalEvent("game mode must be 1, 2 or 3");
            start_mode(m.mode, t, out);
          },
          [&](const ev::EndRequested &) {
            if (stage_ != Stage::GameMenu)
              illegal(e);
            end_requested_ = true;
            game_menu(t, out);
          },
          [&](const ev::EmotionAnswer &a) {
            if (stage_ != Stage::EmotionQuestion)
              illegal(e);
            game_log_.back()["answer"] = a.text;
            if (activity_ == Activity::Mode1)
              mode_finished(t, out);
            else
              cue(out, kCueText);
          },
          [&](const ev::ImitationDone &d) {
            if (stage_ != Stage::Imitating)
              illegal(e);
            game_log_.back()["imitation"] = to_hex(d.notes);
            out.push_back(act::RatingPrompt{});
            stage_ = Stage::RatingQuestion;
          },
          [&](const ev::Rating &r) {
            if (stage_ != Stage::RatingQuestion)
              illegal(e);
            if (r.value < 0 || r.value > 5)
              throw IllegalEvent("rating must be 1..5 (0 for none)");
            game_log_.back()["rating"] = r.value;
            mode_finished(t, out);
          },
          [&](const ev::ParticipantLeft &) {},
          [&](const ev::ParticipantRejoined &) {},
      },
      e.body);
  return out;
}

void SessionEngine::enter_phase(std::size_t index, std::vector<Action> &out) {
  if (index >= plan_.phases.size()) {
    finish(out);
    return;
  }
  phase_index_ = index;
  stage_ = Stage::AwaitPhaseStart;
  out.push_back(act::PhaseChanged{plan_.phases[index]});
}

void SessionEngine::start_phase(double t, std::vector<Action> &out) {
  trial_counter_ = 0;
  activity_ = Activity::Trial;
  switch (phase()) {
  case Phase::WarmUp:
    trials_left_ = plan_.config.warmup_trials;
    break;
  case Phase::SinglePractice:
  case Phase::MusicPractice:
    trials_left_ = plan_.config.practice_trials;
    practice_.reset();
    extra_rounds_ = 0;
    break;
  case Phase::Gameplay:
    game_menu(t, out);
    return;
  case Phase::Done:
    break;
  }
  next_trial(t, out);
}

void SessionEngine::next_trial(double t, std::vector<Action> &out) {
  const Phase p = phase();
  if (trials_left_ == 0) {
    if (p == Phase::WarmUp)
      enter_phase(phase_index_ + 1, out);
    else
      after_practice_block(out, t);
    return;
  }
  --trials_left_;
  std::vector<NoteId> target;
  if (p == Phase::WarmUp)
    target = warmup_units_[rng_.index(warmup_units_.size())];
  else
    target = practice_units_[trial_counter_ % practice_units_.size()];
  ++trial_counter_;
  activity_ = Activity::Trial;
  begin_conversation(t, std::move(target), p == Phase::SinglePractice, out);
}

void SessionEngine::after_practice_block(std::vector<Action> &out, double t) {
  const PracticeDecision d = practice_policy(practice_);
  if (const auto *extra = std::get_if<ExtraTrials>(&d);
      extra && extra_rounds_ < plan_.config.max_extra_rounds) {
    ++extra_rounds_;
    trials_left_ = extra->count;
    out.push_back(act::ExtraPractice{extra->count});
    next_trial(t, out);
    return;
  }
  enter_phase(phase_index_ + 1, out);
}

void SessionEngine::begin_conversation(double t, std::vector<NoteId> target, bool color_hint,
                                       std::vector<Action> &out) {
  Conversation c;
  c.phase = phase();
  c.index = closed_.size();
  c.target = std::move(target);
  c.demo_start_s = t;
  out.push_back(act::DemonstrateMelody{c.target, plan_.song.melody.tempo_bpm, color_hint, c.phase});
  open_ = std::move(c);
  stage_ = Stage::Demonstrating;
}

void SessionEngine::cue(std::vector<Action> &out, const char *text) {
  out.push_back(act::VerbalCue{text});
  out.push_back(act::EyeFlash{});
  stage_ = Stage::AwaitCue;
}

void SessionEngine::close_window(double t, std::vector<Action> &out) {
  if (activity_ == Activity::Mode3) {
    act::RobotImitate imitate;
    for (const auto &s : free_play_) {
      imitate.notes.push_back(s.note);
      imitate.onsets_s.push_back(s.t_s - free_play_.front().t_s);
    }
    game_log_.back()["played"] = to_hex(imitate.notes);
    out.push_back(std::move(imitate));
    stage_ = Stage::Imitating;
    return;
  }
  open_->window_close_s = t;
  const TrialRecord rec = TrialRecord::score(open_->target, open_->repeat_notes(), t);
  open_->record = rec;
  act::Feedback fb;
  fb.verdict = rec.verdict;
  fb.likelihood = rec.likelihood;
  fb.target = rec.target;
  fb.detected = rec.detected;
  fb.graded = open_->phase != Phase::WarmUp;
  if (!fb.graded)
    fb.text = "Nice playing!";
  else if (rec.verdict == Verdict::Pass)
    fb.text = "Great job! You played it right.";
  else
    fb.text = "Good try! Let's listen once more next time.";
  out.push_back(std::move(fb));
  stage_ = Stage::Result;
}

void SessionEngine::finish_result(double t, std::vector<Action> &out) {
  Conversation conv = std::move(*open_);
  open_.reset();
  conv.result_end_s = t;
  conv.closed = true;
  const Verdict v = conv.record->verdict;
  if (activity_ == Activity::Trial) {
    const TurnTaking g = grade_turn_taking(conv);
    grades_.push_back(g);
    out.push_back(act::TurnTakingGraded{g});
    (conv.phase == Phase::WarmUp ? warmup_ : practice_).record(v);
    closed_.push_back(std::move(conv));
    next_trial(t, out);
    return;
  }
  game_log_.back()["verdict"] = to_string(v);
  game_log_.back()["detected"] = to_hex(conv.record->detected);
  closed_.push_back(std::move(conv));
  mode_finished(t, out);
}

void SessionEngine::game_menu(double t, std::vector<Action> &out) {
  std::vector<int> unplayed;
  for (int m = 1; m <= 3; ++m)
    if (mode_counts_[m] == 0)
      unplayed.push_back(m);
  if (end_requested_ || modes_started_ >= kMaxGameModes) {
    if (unplayed.empty()) {
      enter_phase(phase_index_ + 1, out);
      return;
    }
    // Every mode must be played once; the robot starts the next missing one.
    start_mode(unplayed.front(), t, out);
    return;
  }
  out.push_back(act::GamePrompt{unplayed});
  stage_ = Stage::GameMenu;
}

void SessionEngine::start_mode(int mode, double t, std::vector<Action> &out) {
  ++mode_counts_[mode];
  ++modes_started_;
  json entry{{"mode", mode}};
  switch (mode) {
  case 1: {
    activity_ = Activity::Mode1;
    const Song &s = plan_.game_songs[rng_.index(plan_.game_songs.size())];
    entry["song"] = s.name;
    game_log_.push_back(std::move(entry));
    out.push_back(act::PlaySong{s.name, s.melody.notes, s.melody.tempo_bpm});
    stage_ = Stage::SongPlaying;
    break;
  }
  case 2: {
    activity_ = Activity::Mode2;
    const Harmony h = rng_.chance(0.5) ? Harmony::Consonant : Harmony::Dissonant;
    auto notes = generate_game_melody(h, plan_.config.game_melody_length, rng_);
    entry["style"] = to_string(h);
    entry["melody"] = to_hex(notes);
    game_log_.push_back(std::move(entry));
    begin_conversation(t, std::move(notes), false, out);
    break;
  }
  default:
    activity_ = Activity::Mode3;
    free_play_.clear();
    game_log_.push_back(std::move(entry));
    cue(out, kFreePlayCue);
    break;
  }
}

void SessionEngine::mode_finished(double t, std::vector<Action> &out) {
  game_menu(t, out);
}

void SessionEngine::finish(std::vector<Action> &out) {
  stage_ = Stage::Finished;
  json summary{{"kind", plan_.spec.to_string()},
               {"participant", plan_.participant_id},
               {"song", plan_.song.name},
               {"conversations", closed_.size()},
               {"warmup_accuracy", warmup_.total() ? json(warmup_.accuracy()) : json(nullptr)},
               {"practice_accuracy", practice_.total() ? json(practice_.accuracy()) : json(nullptr)},
               {"practice_trials", practice_.total()},
               {"modes_played", modes_played()},
               {"games", game_log_},
               {"turn_taking_grader", "automated timing rules (stand-in for human annotation)"}};
  std::array<int, 4> counts{};
  for (TurnTaking g : grades_)
    ++counts[static_cast<std::size_t>(points(g))];
  summary["turn_taking_counts"] = {{"WellDone", counts[3]},
                                   {"LightInterrupt", counts[2]},
                                   {"HeavyInterrupt", counts[1]},
                                   {"Indifferent", counts[0]}};
  const auto tt = turn_taking_percent();
  summary["turn_taking_percent"] = tt ? json(*tt) : json(nullptr);
  out.push_back(act::PhaseChanged{Phase::Done});
  out.push_back(act::Done{std::move(summary)});
}

} // namespace melodica
