#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "melodica/session.hpp"
#include "melodica/trajectory.hpp"

namespace melodica {

// ---- log -------------------------------------------------------------------

inline constexpr int kLogSchema = 1;

/// One JSONL line: {"seq", "t_s", "dir": "meta"|"in"|"out", "event", "payload"}.
/// "in" lines are events fed to the engine, "out" lines the actions it
/// emitted in response; line 0 is the header carrying plan and seed.
struct LogEntry {
  std::uint64_t seq = 0;
  double t_s = 0;
  std::string dir;
  std::string event;
  nlohmann::json payload;

  std::string to_line() const;
  static LogEntry from_line(const std::string &line);
};

/// Engine plus the log of everything it consumed and produced.
class SessionDriver {
public:
  SessionDriver(SessionPlan plan, std::uint64_t seed, nlohmann::json header_extra = {});

  /// Logs the event, advances the engine and logs the resulting actions.
  /// An IllegalEvent is logged as an "error" line and rethrown.
  std::vector<Action> dispatch(const Event &e);

  const SessionEngine &engine() const noexcept { return engine_; }
  const std::vector<LogEntry> &entries() const noexcept { return entries_; }
  std::string jsonl() const;
  void write(const std::filesystem::path &path) const;

private:
  void push(double t, std::string dir, std::string event, nlohmann::json payload);

  SessionEngine engine_;
  std::vector<LogEntry> entries_;
};

/// Re-runs the engine over the "in" lines of a log and returns the log it
/// produces. For an untampered log the result equals the input byte for byte.
std::string replay_log(const std::string &jsonl);

// ---- robot -----------------------------------------------------------------

struct RobotTiming {
  double cue_s = 2.5;
  double feedback_s = 2.0;
  double phase_gap_s = 1.0;
  /// Time for the arms to settle after the last strike.
  double settle_s = 0.5;
};

/// Kinematic stand-in for the robot: demonstration lengths come from the
/// generated joint trajectories, and imitation runs the full
/// audio -> detection -> trajectory -> simulation loop.
class RobotSimulator {
public:
  explicit RobotSimulator(XylophoneModel model = XylophoneModel::standard(), Rig rig = {},
                          RobotTiming timing = {});

  const RobotTiming &timing() const noexcept { return timing_; }

  /// Seconds needed to play the notes at the given tempo.
  double perform_duration(const std::vector<NoteId> &notes, double tempo_bpm) const;
  /// Trajectories for the notes, with onsets spaced at the tempo.
  std::array<JointTrajectory, 2> plan_performance(const Melody &melody) const;

  /// Copies a free-play take. The strikes are rendered to audio, detected,
  /// turned into trajectories and executed; returns the simulated strikes
  /// (times relative to the start of the imitation).
  std::vector<SimStrike> imitate(const std::vector<NoteId> &notes,
                                 const std::vector<double> &onsets_s) const;

private:
  XylophoneModel model_;
  Rig rig_;
  StrikeTable table_;
  RobotTiming timing_;
  TrajectoryOptions traj_opts_;
};

/// Robot-side events that follow an action: the end of a demonstration,
/// the cue, the window or the feedback, the next phase, the imitation.
std::vector<Event> robot_follow_ups(const Action &a, double t_s, const RobotSimulator &robot);

// ---- scripted participants ---------------------------------------------------

enum class PersonaKind { Perfect, Noisy, Silent, Cyclic };
const char *to_string(PersonaKind p) noexcept;
PersonaKind persona_from_string(const std::string &s);

/// Scripted participant. Reacts to the robot's actions with timed events.
///  - perfect: repeats every target inside the window, answers every prompt
///  - noisy: mostly on time with occasional wrong notes and interruptions
///  - silent: never plays and gives empty answers
///  - cyclic: walks the turn-taking levels 3, 2, 1, 0 over graded
///    conversations, always with the right notes
class Persona {
public:
  Persona(PersonaKind kind, std::uint64_t seed, RobotTiming timing = {});

  PersonaKind kind() const noexcept { return kind_; }
  std::vector<Event> react(const Action &a, double t_s);

private:
  std::vector<Event> play(const std::vector<NoteId> &notes, double start_s, double spacing_s);

  PersonaKind kind_;
  Rng rng_;
  RobotTiming timing_;
  Phase phase_ = Phase::WarmUp;
  std::size_t cycle_ = 0;
  int level_ = 3;
  std::vector<NoteId> target_;
  std::size_t prompts_ = 0;
};

// ---- runner ----------------------------------------------------------------

struct RunResult {
  std::string jsonl;
  nlohmann::json summary;
  std::vector<TurnTaking> grades;
  /// Every phase entered, the opening one included, ending with Done.
  std::vector<Phase> phase_order;
};

/// Drives the engine to Done against a persona on simulated time.
RunResult run_scripted_session(const SessionPlan &plan, std::uint64_t seed, PersonaKind persona,
                               const RobotSimulator &robot);

} // namespace melodica
