#pragma once

#include <array>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "melodica/instrument.hpp"
#include "melodica/kinematics.hpp"

namespace melodica {

/// Both arms and where the instrument stands.
struct Rig {
  KinematicChain left = KinematicChain::default_arm(Arm::Left);
  KinematicChain right = KinematicChain::default_arm(Arm::Right);
  Placement placement = Placement::canonical();

  const KinematicChain &chain(Arm arm) const { return arm == Arm::Left ? left : right; }

  nlohmann::json to_json() const;
  /// Missing keys fall back to the defaults above.
  static Rig from_json(const nlohmann::json &j);
};

struct StrikeConfig {
  NoteId note{1};
  Arm arm = Arm::Left;
  JointVector ready;
  JointVector strike;
};

struct StrikeOptions {
  /// Height of the ready pose above the strike pose.
  double ready_height_cm = 4.0;
  /// How far the head bottom is driven below the bar top at the strike.
  double press_depth_cm = 0.3;
  /// IK tolerance for strike and ready poses.
  double tolerance_cm = 0.01;
  /// Optional correction applied to every robot-frame target before IK,
  /// e.g. a pose correction from the vision module.
  std::function<Eigen::Vector3d(const Eigen::Vector3d &)> adjust_target;
};

/// Solved poses per (note, arm). Bars left of the reference bar belong to the
/// left arm, bars right of it to the right arm, and the reference bar has one
/// entry for each arm.
struct StrikeTable {
  std::vector<StrikeConfig> entries;
  NoteId reference{6};

  const StrikeConfig *find(NoteId note, Arm arm) const noexcept;
  std::vector<Arm> arms_for(NoteId note) const;
};

/// Throws Unreachable carrying the note number of the first bar that fails.
StrikeTable strike_configs(const XylophoneModel &model, const Rig &rig,
                           const StrikeOptions &opts = {});

struct TrajectoryPoint {
  double t_s = 0;
  JointVector q;
};

/// Piecewise cubic Bezier curve through timed joint-space knots. Segment i
/// has control points P_i + m_out_i*dt/3 and P_{i+1} - m_in_{i+1}*dt/3.
///
/// Ordinary knots get one tangent (m_in = m_out) that follows the
/// neighbouring chords but is limited per joint: zero at a local extremum and
/// at most three times either adjacent slope. That keeps every segment
/// monotone per joint and inside the range of its end knots, and the curve is
/// C1 there.
///
/// Impact knots model a mallet bouncing off a bar: the velocity reverses, so
/// m_in and m_out are the incoming and outgoing chord slopes scaled by
/// kImpactGain. With the gain at most 3 the inner control points stay between
/// the segment's end knots, so the range guarantee still holds. End tangents
/// are zero.
class BezierPath {
public:
  static constexpr double kImpactGain = 1.5;

  BezierPath() = default;
  /// Knot times must be strictly increasing. impacts is empty or has one
  /// flag per knot; the first and last flags are ignored.
  explicit BezierPath(std::vector<TrajectoryPoint> knots, std::vector<bool> impacts = {});

  const std::vector<TrajectoryPoint> &knots() const noexcept { return knots_; }
  const std::vector<JointVector> &tangents_in() const noexcept { return tangents_in_; }
  const std::vector<JointVector> &tangents_out() const noexcept { return tangents_out_; }
  bool empty() const noexcept { return knots_.empty(); }
  double start_s() const { return knots_.front().t_s; }
  double end_s() const { return knots_.back().t_s; }

  /// Clamps t to the knot span.
  JointVector evaluate(double t_s) const;
  /// The four control points of segment i (between knots i and i+1).
  std::array<JointVector, 4> segment(std::size_t i) const;

private:
  std::vector<TrajectoryPoint> knots_;
  std::vector<JointVector> tangents_in_;
  std::vector<JointVector> tangents_out_;
};

struct JointTrajectory {
  Arm arm = Arm::Left;
  BezierPath path;
  /// Samples on a regular grid from the first knot plus every knot time.
  std::vector<TrajectoryPoint> points;
  /// Requested strike times and notes, in order.
  std::vector<std::pair<NoteId, double>> strikes;
};

struct TrajectoryOptions {
  double strike_dur_s = 0.2;
  double sample_hz = 50.0;
  /// Added to every onset so the first ready pose starts at a nonnegative
  /// time; defaults to one strike duration.
  double lead_in_s = 0.2;
};

/// One trajectory per arm (left first); an arm that never plays has no
/// points. Throws MissingConfig or OnsetCollision.
std::array<JointTrajectory, 2> generate_trajectory(const Melody &melody, const StrikeTable &table,
                                                   const Rig &rig,
                                                   const TrajectoryOptions &opts = {});

struct SimStrike {
  NoteId note{1};
  double t_s = 0;
  Arm arm = Arm::Left;
};

/// Walks the sampled trajectories and reports a strike whenever the bottom
/// of the mallet head crosses the bar-top plane downward above a bar's
/// playable area. The crossing time is linearly interpolated between
/// samples. Events from both arms are merged by time.
std::vector<SimStrike> execute_sim(std::span<const JointTrajectory> trajectories,
                                   const XylophoneModel &model, const Rig &rig);

/// Melody with the simulated strike notes and times.
Melody strikes_to_melody(const std::vector<SimStrike> &strikes);

/// CSV with header t_s,q1,...,q5.
void write_trajectory_csv(std::ostream &out, const JointTrajectory &traj);

} // namespace melodica
