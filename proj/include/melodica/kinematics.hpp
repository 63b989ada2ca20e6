#pragma once

#include <array>
#include <string>

#include <Eigen/Dense>
#include <json.hpp>

#include "melodica/instrument.hpp"

namespace melodica {

enum class Arm { Left, Right };
const char *to_string(Arm arm) noexcept;

inline constexpr std::size_t kArmDof = 5;
using JointVector = Eigen::Matrix<double, kArmDof, 1>;

struct Joint {
  std::string name;
  /// Unit rotation axis in the joint's parent frame.
  Eigen::Vector3d axis;
  /// Translation from the previous joint (or the shoulder) to this joint.
  Eigen::Vector3d offset_cm;
  double min_rad;
  double max_rad;
};

/// A 5-DOF arm holding a mallet. Frames follow the robot convention: x
/// forward, y left, z up, lengths in cm. The default model is a simplified
/// humanoid arm (shoulder pitch/roll, elbow yaw/roll, wrist yaw) with a
/// 10.5 cm upper arm, 10.5 cm forearm, 10 cm hand and a 21 cm mallet gripped
/// at a downward tilt.
struct KinematicChain {
  Arm arm = Arm::Left;
  Eigen::Vector3d shoulder_cm = Eigen::Vector3d::Zero();
  std::array<Joint, kArmDof> joints;
  double hand_length_cm = 10.0;
  double mallet_length_cm = 21.0;
  double mallet_tilt_rad = 1.5707963267948966;
  double mallet_head_radius_cm = 0.8;

  static KinematicChain default_arm(Arm arm);

  /// Mallet-head center in the last joint's frame.
  Eigen::Vector3d tool_offset() const;
  /// Sum of link lengths; an upper bound on the shoulder-to-head distance.
  double reach_cm() const;
  bool within_limits(const JointVector &q, double slack = 1e-12) const;
  JointVector clamp(const JointVector &q) const;

  nlohmann::json to_json() const;
  static KinematicChain from_json(const nlohmann::json &j);
  /// Throws std::invalid_argument if limits are not ordered or axes are not
  /// unit length.
  void validate() const;
};

struct HeadPose {
  Eigen::Vector3d position_cm;
  /// Orientation of the last joint frame; the mallet points along
  /// rotation * tool_offset().
  Eigen::Matrix3d rotation;
};

/// Throws JointLimit(index) when an angle is outside its limits.
HeadPose forward_kinematics(const KinematicChain &chain, const JointVector &q);

/// Head position with angles clamped instead of checked; used inside solvers.
Eigen::Vector3d head_position_unchecked(const KinematicChain &chain, const JointVector &q);

struct IkOptions {
  double tolerance_cm = 0.1;
  int max_iterations = 200;
  double initial_damping = 1.0;
  double fd_step_rad = 1e-6;
  double max_step_rad = 0.35;
};

struct IkResult {
  JointVector q;
  int iterations = 0;
  double residual_cm = 0;
};

/// Damped least squares with a central-difference Jacobian and per-step
/// clamping to the joint limits. The damping adapts: accepted steps shrink
/// it, rejected ones grow it. Throws Unreachable when the residual is still
/// above tolerance at the iteration cap, or immediately when the target lies
/// beyond reach.
IkResult inverse_kinematics(const KinematicChain &chain, const Eigen::Vector3d &target_cm,
                            const JointVector &seed, const IkOptions &opts = {});

/// Where the instrument stands relative to the robot: the instrument frame
/// origin in robot coordinates and a yaw about the vertical. At zero yaw the
/// instrument's length axis (ascending pitch) runs along robot -y, so the
/// low bars sit on the robot's left.
struct Placement {
  Eigen::Vector3d position_cm{15.0, 0.0, -32.0};
  double yaw_rad = 0.0;

  Eigen::Matrix3d rotation() const;
  Eigen::Vector3d to_robot(const Eigen::Vector3d &instrument_point) const;
  Eigen::Vector3d to_instrument(const Eigen::Vector3d &robot_point) const;

  static Placement canonical() { return {}; }

  nlohmann::json to_json() const;
  static Placement from_json(const nlohmann::json &j);
};

inline Eigen::Vector3d to_eigen(const Point3 &p) { return {p.x, p.y, p.z}; }

} // namespace melodica
