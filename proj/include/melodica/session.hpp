#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "melodica/instrument.hpp"
#include "melodica/rng.hpp"
#include "melodica/scoring.hpp"

namespace melodica {

// ---- song bank -------------------------------------------------------------

struct Song {
  std::string name;
  Melody melody;
  /// Placeholder transcriptions stand in for titles whose arrangement is not
  /// published; they are flagged so nobody mistakes them for the real tune.
  bool placeholder = false;
};

inline constexpr const char *kEntrySong = "Twinkle, Twinkle, Little Star";

class SongBank {
public:
  SongBank() = default;
  explicit SongBank(std::vector<Song> songs);

  /// Twinkle plus placeholder tunes for the other titles.
  static SongBank builtin();
  /// {"songs": [{"name", "melody" (hex), "tempo_bpm", "placeholder"?}]}
  static SongBank from_json(const nlohmann::json &j);
  static SongBank load(const std::filesystem::path &path);
  nlohmann::json to_json() const;

  const std::vector<Song> &songs() const noexcept { return songs_; }
  bool empty() const noexcept { return songs_.empty(); }
  /// Throws UnknownSong.
  const Song &find(const std::string &name) const;

private:
  std::vector<Song> songs_;
};

// ---- plan ------------------------------------------------------------------

enum class SessionKind { Baseline, Intervention, Exit };

struct SessionSpec {
  SessionKind kind = SessionKind::Baseline;
  /// 1..4 for interventions, 0 otherwise.
  int intervention = 0;

  /// "baseline", "exit" or "intervention:N".
  static SessionSpec parse(const std::string &text);
  std::string to_string() const;
};

enum class Phase { WarmUp, SinglePractice, MusicPractice, Gameplay, Done };
const char *to_string(Phase p) noexcept;
Phase phase_from_string(const std::string &s);

struct ParticipantPrefs {
  std::string participant_id;
  /// Song chosen by the participant; used by exit and intervention sessions.
  std::optional<std::string> song;
};

struct SessionConfig {
  double response_window_s = 7.0;
  /// Long units get 1 s plus this much per note when that exceeds the
  /// configured window.
  double window_per_note_s = 0.6;
  double free_play_window_s = 5.0;
  std::size_t warmup_trials = 6;
  std::size_t practice_trials = 10;
  double practice_threshold = 0.6;
  std::size_t max_extra_rounds = 2;
  /// Unit length for baseline/exit music practice.
  std::size_t baseline_unit = 7;
  /// Notes in a mode 2 melody.
  std::size_t game_melody_length = 4;

  nlohmann::json to_json() const;
  static SessionConfig from_json(const nlohmann::json &j);
};

struct SessionPlan {
  SessionSpec spec;
  std::string participant_id;
  Song song;
  std::vector<Phase> phases;
  /// Notes per practice trial.
  std::size_t practice_unit = 1;
  /// Notes per warm-up trial (intervention sessions only).
  std::size_t warmup_unit = 1;
  SessionConfig config;
  /// Songs available to game mode 1.
  std::vector<Song> game_songs;

  /// Window for a unit of n notes.
  double window_for(std::size_t notes) const;

  nlohmann::json to_json() const;
  static SessionPlan from_json(const nlohmann::json &j);
};

/// Throws UnknownSong when a requested song is not in the bank and
/// std::invalid_argument when the bank is empty.
SessionPlan plan_session(const SessionSpec &spec, const ParticipantPrefs &prefs,
                         const SongBank &bank, const SessionConfig &config = {},
                         std::uint64_t seed = 0);

/// Practice unit length for intervention n of a song of len notes:
/// 1, min(3, len), ceil(len/2), len.
std::size_t intervention_unit(int n, std::size_t len);

/// Consecutive chunks of unit notes; the last chunk may be shorter.
std::vector<std::vector<NoteId>> split_units(const std::vector<NoteId> &notes, std::size_t unit);

// ---- game mode 2 melodies --------------------------------------------------

enum class Harmony { Consonant, Dissonant };
const char *to_string(Harmony h) noexcept;

/// Semitone steps allowed between adjacent notes: thirds, fourths, fifths,
/// sixths and the octave for consonant melodies; seconds, the major seventh
/// and the F-B tritone for dissonant ones.
bool interval_allowed(Harmony h, NoteId a, NoteId b);

/// Random walk over the bars using only allowed steps.
std::vector<NoteId> generate_game_melody(Harmony h, std::size_t length, Rng &rng);

// ---- turn taking -----------------------------------------------------------

enum class TurnTaking { Indifferent = 0, HeavyInterrupt = 1, LightInterrupt = 2, WellDone = 3 };
const char *to_string(TurnTaking t) noexcept;
inline int points(TurnTaking t) noexcept { return static_cast<int>(t); }

enum class Actor { Robot, Participant };

struct Strike {
  NoteId note{1};
  double t_s = 0;
};

/// Demonstrate, repeat and result movements of one exchange with their
/// time spans. Strikes are kept with their absolute session times.
struct Conversation {
  Phase phase = Phase::WarmUp;
  std::size_t index = 0;
  std::vector<NoteId> target;
  double demo_start_s = 0;
  double demo_end_s = 0;
  double window_open_s = 0;
  double window_close_s = 0;
  double result_end_s = 0;
  std::vector<Strike> strikes;
  std::optional<TrialRecord> record;
  bool interrupted = false;
  bool closed = false;

  /// Strikes that count as the participant's repeat: from the end of the
  /// demonstration to the end of the window.
  std::vector<NoteId> repeat_notes() const;
  nlohmann::json to_json() const;
};

/// Timing rules standing in for human annotation:
///  - no strikes at all, or strikes only during the demonstration: Indifferent
///  - strikes during the demonstration followed by a repeat: HeavyInterrupt
///  - first repeat strike before the window opened, or strikes during the
///    result: LightInterrupt
///  - otherwise: WellDone
/// Throws OpenConversation.
TurnTaking grade_turn_taking(const Conversation &conv);

/// 100 * sum(points) / (3 * count). Throws NoGrades.
double normalize_scores(const std::vector<TurnTaking> &grades);

// ---- engine events and actions ---------------------------------------------

namespace ev {
struct PhaseStart {};
struct DemonstrationDone {};
struct CueIssued {};
struct StrikeEvent {
  NoteId note{1};
};
struct WindowElapsed {};
struct FeedbackDone {};
struct ModeSelected {
  int mode = 1;
};
struct EndRequested {};
struct EmotionAnswer {
  std::string text;
};
struct Rating {
  /// 1..5, or 0 when the participant gave none.
  int value = 0;
};
struct ImitationDone {
  std::vector<NoteId> notes;
};
struct ParticipantLeft {};
struct ParticipantRejoined {};
} // namespace ev

using EventBody =
    std::variant<ev::PhaseStart, ev::DemonstrationDone, ev::CueIssued, ev::StrikeEvent,
                 ev::WindowElapsed, ev::FeedbackDone, ev::ModeSelected, ev::EndRequested,
                 ev::EmotionAnswer, ev::Rating, ev::ImitationDone, ev::ParticipantLeft,
                 ev::ParticipantRejoined>;

struct Event {
  double t_s = 0;
  EventBody body;
};

std::string event_name(const EventBody &e);
nlohmann::json event_payload(const EventBody &e);
EventBody event_from(const std::string &name, const nlohmann::json &payload);

namespace act {
struct PhaseChanged {
  Phase phase = Phase::WarmUp;
};
struct DemonstrateMelody {
  std::vector<NoteId> notes;
  double tempo_bpm = 120;
  bool color_hint = false;
  Phase phase = Phase::WarmUp;
};
struct PlaySong {
  std::string name;
  std::vector<NoteId> notes;
  double tempo_bpm = 120;
};
struct VerbalCue {
  std::string text;
};
struct EyeFlash {};
struct OpenResponseWindow {
  double seconds = 7;
  bool free_play = false;
};
struct Feedback {
  std::string text;
  Verdict verdict = Verdict::Fail;
  double likelihood = 0;
  std::vector<NoteId> target;
  std::vector<NoteId> detected;
  /// False during warm-up: the result is logged but not announced.
  bool graded = true;
};
struct TurnTakingGraded {
  TurnTaking level = TurnTaking::Indifferent;
};
struct ExtraPractice {
  std::size_t trials = 0;
};
struct GamePrompt {
  std::vector<int> unplayed;
};
struct EmotionPrompt {
  std::string question;
  std::string style;
};
struct RatingPrompt {};
struct RobotImitate {
  std::vector<NoteId> notes;
  /// Seconds from the first strike.
  std::vector<double> onsets_s;
};
struct Done {
  nlohmann::json summary;
};
} // namespace act

using Action = std::variant<act::PhaseChanged, act::DemonstrateMelody, act::PlaySong,
                            act::VerbalCue, act::EyeFlash, act::OpenResponseWindow, act::Feedback,
                            act::TurnTakingGraded, act::ExtraPractice, act::GamePrompt,
                            act::EmotionPrompt, act::RatingPrompt, act::RobotImitate, act::Done>;

std::string action_name(const Action &a);
nlohmann::json action_payload(const Action &a);

inline constexpr const char *kCueText = "Now, you shall play right after my eye flashes.";
inline constexpr const char *kFreePlayCue =
    "You have five seconds to play anything. Then I will copy you.";

// ---- engine ----------------------------------------------------------------

/// Deterministic session automaton. advance() consumes one event and returns
/// the actions it triggers; time only enters through event timestamps.
class SessionEngine {
public:
  SessionEngine(SessionPlan plan, std::uint64_t seed);

  /// Throws IllegalEvent when the event does not fit the current state.
  std::vector<Action> advance(const Event &event);

  const SessionPlan &plan() const noexcept { return plan_; }
  Phase phase() const noexcept;
  bool done() const noexcept { return stage_ == Stage::Finished; }
  bool window_open() const noexcept { return stage_ == Stage::Window; }
  const std::vector<Conversation> &conversations() const noexcept { return closed_; }
  const std::vector<TurnTaking> &grades() const noexcept { return grades_; }
  const AccuracyTracker &practice_tracker() const noexcept { return practice_; }
  const AccuracyTracker &warmup_tracker() const noexcept { return warmup_; }
  std::vector<int> modes_played() const;
  /// Turn-taking percentage so far, or nullopt before the first grade.
  std::optional<double> turn_taking_percent() const;
  nlohmann::json snapshot() const;

private:
  enum class Stage {
    AwaitPhaseStart,
    Demonstrating,
    AwaitCue,
    Window,
    Result,
    GameMenu,
    SongPlaying,
    EmotionQuestion,
    Imitating,
    RatingQuestion,
    Finished
  };
  enum class Activity { Trial, Mode1, Mode2, Mode3 };

  [[noreturn]] void illegal(const Event &e) const;
  void enter_phase(std::size_t index, std::vector<Action> &out);
  void start_phase(double t, std::vector<Action> &out);
  void next_trial(double t, std::vector<Action> &out);
  void begin_conversation(double t, std::vector<NoteId> target, bool color_hint,
                          std::vector<Action> &out);
  void close_window(double t, std::vector<Action> &out);
  void finish_result(double t, std::vector<Action> &out);
  void after_practice_block(std::vector<Action> &out, double t);
  void game_menu(double t, std::vector<Action> &out);
  void start_mode(int mode, double t, std::vector<Action> &out);
  void mode_finished(double t, std::vector<Action> &out);
  void cue(std::vector<Action> &out, const char *text);
  void finish(std::vector<Action> &out);

  SessionPlan plan_;
  Rng rng_;
  Stage stage_ = Stage::AwaitPhaseStart;
  std::size_t phase_index_ = 0;
  Activity activity_ = Activity::Trial;

  std::vector<std::vector<NoteId>> practice_units_;
  std::vector<std::vector<NoteId>> warmup_units_;
  std::size_t trials_left_ = 0;
  std::size_t trial_counter_ = 0;
  std::size_t extra_rounds_ = 0;

  std::optional<Conversation> open_;
  std::vector<Conversation> closed_;
  std::vector<TurnTaking> grades_;
  AccuracyTracker warmup_;
  AccuracyTracker practice_;

  std::map<int, int> mode_counts_;
  bool end_requested_ = false;
  std::vector<Strike> free_play_;
  std::vector<nlohmann::json> game_log_;
  std::size_t modes_started_ = 0;
};

} // namespace melodica
