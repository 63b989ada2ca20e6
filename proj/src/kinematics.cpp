#include "melodica/kinematics.hpp"

#include <cmath>
#include <stdexcept>

#include "melodica/errors.hpp"

namespace melodica {

namespace {

Eigen::Vector3d vec_from(const nlohmann::json &j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}
nlohmann::json vec_json(const Eigen::Vector3d &v) { return {v.x(), v.y(), v.z()}; }

template <typename Angles>
Eigen::Vector3d chain_head(const KinematicChain &chain, const Angles &q, Eigen::Matrix3d *rot_out) {
  Eigen::Matrix3d rot = Eigen::Matrix3d::Identity();
  Eigen::Vector3d pos = chain.shoulder_cm;
  for (std::size_t i = 0; i < kArmDof; ++i) {
    const Joint &j = chain.joints[i];
    pos += rot * j.offset_cm;
    rot = rot * Eigen::AngleAxisd(q[static_cast<Eigen::Index>(i)], j.axis).toRotationMatrix();
  }
  if (rot_out)
    *rot_out = rot;
  return pos + rot * chain.tool_offset();
}

} // namespace

const char *to_string(Arm arm) noexcept { return arm == Arm::Left ? "left" : "right"; }

KinematicChain KinematicChain::default_arm(Arm arm) {
  const double side = arm == Arm::Left ? 1.0 : -1.0;
  KinematicChain c;
  c.arm = arm;
  c.shoulder_cm = {0.0, side * 9.8, 0.0};
  const Eigen::Vector3d x = Eigen::Vector3d::UnitX();
  const Eigen::Vector3d y = Eigen::Vector3d::UnitY();
  const Eigen::Vector3d z = Eigen::Vector3d::UnitZ();
  c.joints = {{{"shoulder_pitch", y, Eigen::Vector3d::Zero(), -2.0857, 2.0857},
               {"shoulder_roll", z, Eigen::Vector3d::Zero(), -1.3265, 1.3265},
               {"elbow_yaw", x, {10.5, 0.0, 0.0}, -2.0857, 2.0857},
               {"elbow_roll", z, Eigen::Vector3d::Zero(), -1.5446, 1.5446},
               {"wrist_yaw", x, {10.5, 0.0, 0.0}, -1.8238, 1.8238}}};
  c.hand_length_cm = 10.0;
  c.mallet_length_cm = 21.0;
  c.mallet_tilt_rad = M_PI / 2.0;
  c.mallet_head_radius_cm = 0.8;
  return c;
}

Eigen::Vector3d KinematicChain::tool_offset() const {
  return {hand_length_cm + mallet_length_cm * std::cos(mallet_tilt_rad), 0.0,
          -mallet_length_cm * std::sin(mallet_tilt_rad)};
}

double KinematicChain::reach_cm() const {
  double r = hand_length_cm + mallet_length_cm;
  for (const Joint &j : joints)
    r += j.offset_cm.norm();
  return r;
}

bool KinematicChain::within_limits(const JointVector &q, double slack) const {
  for (std::size_t i = 0; i < kArmDof; ++i) {
    const double v = q[static_cast<Eigen::Index>(i)];
    if (!(v >= joints[i].min_rad - slack && v <= joints[i].max_rad + slack))
      return false;
  }
  return true;
}

JointVector KinematicChain::clamp(const JointVector &q) const {
  JointVector out = q;
  for (std::size_t i = 0; i < kArmDof; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    out[k] = std::clamp(out[k], joints[i].min_rad, joints[i].max_rad);
  }
  return out;
}

void KinematicChain::validate() const {
  for (const Joint &j : joints) {
    if (!(j.min_rad < j.max_rad))
      throw std::invalid_argument("joint " + j.name + " has unordered limits");
    if (std::abs(j.axis.norm() - 1.0) > 1e-9)
      throw std::invalid_argument("joint " + j.name + " axis is not unit length");
  }
  if (!(mallet_length_cm > 0 && mallet_head_radius_cm > 0))
    throw std::invalid_argument("mallet dimensions must be positive");
}

nlohmann::json KinematicChain::to_json() const {
  nlohmann::json js = nlohmann::json::array();
  for (const Joint &j : joints)
    js.push_back({{"name", j.name},
                  {"axis", vec_json(j.axis)},
                  {"offset_cm", vec_json(j.offset_cm)},
                  {"limits_rad", {j.min_rad, j.max_rad}}});
  return {{"arm", to_string(arm)},
          {"shoulder_cm", vec_json(shoulder_cm)},
          {"joints", js},
          {"hand_length_cm", hand_length_cm},
          {"mallet_length_cm", mallet_length_cm},
          {"mallet_tilt_rad", mallet_tilt_rad},
          {"mallet_head_radius_cm", mallet_head_radius_cm}};
}

KinematicChain KinematicChain::from_json(const nlohmann::json &j) {
  KinematicChain c;
  const auto arm = j.at("arm").get<std::string>();
  if (arm != "left" && arm != "right")
    throw std::invalid_argument("arm must be left or right");
  c.arm = arm == "left" ? Arm::Left : Arm::Right;
  c.shoulder_cm = vec_from(j.at("shoulder_cm"));
  const auto &js = j.at("joints");
  if (js.size() != kArmDof)
    throw std::invalid_argument("chain needs exactly 5 joints");
  for (std::size_t i = 0; i < kArmDof; ++i) {
    const auto &jj = js.at(i);
    c.joints[i] = {jj.value("name", "joint" + std::to_string(i)), vec_from(jj.at("axis")).normalized(),
                   vec_from(jj.at("offset_cm")), jj.at("limits_rad").at(0).get<double>(),
                   jj.at("limits_rad").at(1).get<double>()};
  }
  c.hand_length_cm = j.value("hand_length_cm", 10.0);
  c.mallet_length_cm = j.value("mallet_length_cm", 21.0);
  c.mallet_tilt_rad = j.value("mallet_tilt_rad", M_PI / 2.0);
  c.mallet_head_radius_cm = j.value("mallet_head_radius_cm", 0.8);
  c.validate();
  return c;
}

HeadPose forward_kinematics(const KinematicChain &chain, const JointVector &q) {
  for (std::size_t i = 0; i < kArmDof; ++i) {
    const double v = q[static_cast<Eigen::Index>(i)];
    if (!std::isfinite(v) || v < chain.joints[i].min_rad - 1e-12 ||
        v > chain.joints[i].max_rad + 1e-12)
      throw JointLimit(i);
  }
  HeadPose pose;
  pose.position_cm = chain_head(chain, q, &pose.rotation);
  return pose;
}

Eigen::Vector3d head_position_unchecked(const KinematicChain &chain, const JointVector &q) {
  return chain_head(chain, chain.clamp(q), nullptr);
}

namespace {

// One damped least-squares step. Joints pinned at a limit whose unconstrained
// step would push further out are removed from the Jacobian so the remaining
// joints take up the motion.
JointVector dls_step(const KinematicChain &chain, const JointVector &q,
                     const Eigen::Matrix<double, 3, kArmDof> &jac, const Eigen::Vector3d &err,
                     double lambda, double max_step) {
  Eigen::Matrix<double, 3, kArmDof> active = jac;
  JointVector step;
  for (int pass = 0; pass < 2; ++pass) {
    const Eigen::Matrix3d jjt =
        active * active.transpose() + lambda * lambda * Eigen::Matrix3d::Identity();
    step = active.transpose() * jjt.ldlt().solve(err);
    bool changed = false;
    for (std::size_t i = 0; i < kArmDof; ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      const bool at_min = q[k] <= chain.joints[i].min_rad + 1e-9 && step[k] < 0;
      const bool at_max = q[k] >= chain.joints[i].max_rad - 1e-9 && step[k] > 0;
      if ((at_min || at_max) && !active.col(k).isZero()) {
        active.col(k).setZero();
        changed = true;
      }
    }
    if (!changed)
      break;
  }
  const double biggest = step.cwiseAbs().maxCoeff();
  if (biggest > max_step)
    step *= max_step / biggest;
  return step;
}

} // namespace

IkResult inverse_kinematics(const KinematicChain &chain, const Eigen::Vector3d &target_cm,
                            const JointVector &seed, const IkOptions &opts) {
  if (!chain.within_limits(seed))
    throw std::invalid_argument("IK seed outside joint limits");
  const double reach = chain.reach_cm();
  if ((target_cm - chain.shoulder_cm).norm() > reach + opts.tolerance_cm)
    throw Unreachable("target beyond arm reach", (target_cm - chain.shoulder_cm).norm() - reach);

  IkResult best;
  best.q = seed;
  best.residual_cm = (target_cm - chain_head(chain, seed, nullptr)).norm();

  JointVector q = seed;
  Eigen::Vector3d err = target_cm - chain_head(chain, q, nullptr);
  double err_norm = err.norm();
  double lambda = opts.initial_damping;
  int iterations = 0;
  int restarts = 0;
  int stalled = 0;

  while (best.residual_cm > opts.tolerance_cm && iterations < opts.max_iterations) {
    ++iterations;
    Eigen::Matrix<double, 3, kArmDof> jac;
    for (std::size_t i = 0; i < kArmDof; ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      JointVector hi = q, lo = q;
      hi[k] += opts.fd_step_rad;
      lo[k] -= opts.fd_step_rad;
      jac.col(k) = (chain_head(chain, hi, nullptr) - chain_head(chain, lo, nullptr)) /
                   (2.0 * opts.fd_step_rad);
    }
    // Retry with heavier damping until the step lowers the error.
    bool accepted = false;
    double gain = 0;
    for (int attempt = 0; attempt < 8 && !accepted; ++attempt) {
      const JointVector candidate =
          chain.clamp(q + dls_step(chain, q, jac, err, lambda, opts.max_step_rad));
      const Eigen::Vector3d cand_err = target_cm - chain_head(chain, candidate, nullptr);
      if (cand_err.norm() < err_norm) {
        gain = err_norm - cand_err.norm();
        q = candidate;
        err = cand_err;
        err_norm = cand_err.norm();
        lambda = std::max(lambda * 0.5, 1e-3);
        accepted = true;
      } else {
        lambda *= 4.0;
      }
    }
    if (err_norm < best.residual_cm) {
      best.q = q;
      best.residual_cm = err_norm;
    }
    stalled = (accepted && gain > 1e-3 * std::max(err_norm, opts.tolerance_cm)) ? 0 : stalled + 1;
    if (stalled >= 6) {
      // Trapped against the limits: restart from the best point with every
      // joint pulled halfway toward the middle of its range, alternating the
      // direction of the redundant elbow and wrist joints between restarts.
      ++restarts;
      for (std::size_t i = 0; i < kArmDof; ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        const double mid = 0.5 * (chain.joints[i].min_rad + chain.joints[i].max_rad);
        const double span = chain.joints[i].max_rad - chain.joints[i].min_rad;
        const double flip = (i >= 2 && (restarts + static_cast<int>(i)) % 2 == 0) ? 0.25 : -0.25;
        q[k] = 0.5 * (best.q[k] + mid) + flip * span * ((restarts % 3) == 0 ? 0.0 : 1.0) * 0.5;
      }
      q = chain.clamp(q);
      err = target_cm - chain_head(chain, q, nullptr);
      err_norm = err.norm();
      lambda = opts.initial_damping;
      stalled = 0;
    }
  }
  best.iterations = iterations;
  if (best.residual_cm > opts.tolerance_cm)
    throw Unreachable("IK did not converge (residual " + std::to_string(best.residual_cm) + " cm)",
                      best.residual_cm);
  return best;
}

Eigen::Matrix3d Placement::rotation() const {
  // Instrument axes in robot coordinates at zero yaw: x -> -y, y -> +x, z -> z.
  Eigen::Matrix3d base;
  base << 0, 1, 0, -1, 0, 0, 0, 0, 1;
  return Eigen::AngleAxisd(yaw_rad, Eigen::Vector3d::UnitZ()).toRotationMatrix() * base;
}

Eigen::Vector3d Placement::to_robot(const Eigen::Vector3d &p) const {
  return position_cm + rotation() * p;
}

Eigen::Vector3d Placement::to_instrument(const Eigen::Vector3d &p) const {
  return rotation().transpose() * (p - position_cm);
}

nlohmann::json Placement::to_json() const {
  return {{"position_cm", vec_json(position_cm)}, {"yaw_rad", yaw_rad}};
}

Placement Placement::from_json(const nlohmann::json &j) {
  Placement p;
  p.position_cm = vec_from(j.at("position_cm"));
  p.yaw_rad = j.value("yaw_rad", 0.0);
  return p;
}

} // namespace melodica
