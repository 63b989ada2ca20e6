#include "melodica/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "melodica/errors.hpp"

namespace melodica {

nlohmann::json Rig::to_json() const {
  return {{"left_arm", left.to_json()},
          {"right_arm", right.to_json()},
          {"placement", placement.to_json()}};
}

Rig Rig::from_json(const nlohmann::json &j) {
  Rig rig;
  if (j.contains("left_arm"))
    rig.left = KinematicChain::from_json(j["left_arm"]);
  if (j.contains("right_arm"))
    rig.right = KinematicChain::from_json(j["right_arm"]);
  if (j.contains("placement"))
    rig.placement = Placement::from_json(j["placement"]);
  return rig;
}

const StrikeConfig *StrikeTable::find(NoteId note, Arm arm) const noexcept {
  for (const StrikeConfig &c : entries)
    if (c.note == note && c.arm == arm)
      return &c;
  return nullptr;
}

std::vector<Arm> StrikeTable::arms_for(NoteId note) const {
  std::vector<Arm> out;
  for (Arm a : {Arm::Left, Arm::Right})
    if (find(note, a))
      out.push_back(a);
  return out;
}

namespace {

// Deterministic IK seeds for the left arm; the right arm mirrors them (angles
// about the x and z axes change sign).
std::vector<JointVector> ik_seeds(Arm arm) {
  std::vector<JointVector> seeds(4, JointVector::Zero());
  seeds[1] << 1.0, 0.0, 0.0, 0.0, 0.0;
  seeds[2] << 0.8, 0.0, 0.0, -1.0, 0.0;
  seeds[3] << 0.5, 0.6, 0.0, -1.2, 0.0;
  if (arm == Arm::Right)
    for (JointVector &s : seeds)
      s.tail<4>() *= -1.0;
  return seeds;
}

StrikeConfig solve_bar(const Bar &bar, double bar_top, Arm arm, const Rig &rig,
                       const StrikeOptions &opts) {
  const KinematicChain &chain = rig.chain(arm);
  const double head_z = bar_top + chain.mallet_head_radius_cm - opts.press_depth_cm;
  Eigen::Vector3d strike_t = rig.placement.to_robot({bar.center.x, bar.center.y, head_z});
  Eigen::Vector3d ready_t =
      rig.placement.to_robot({bar.center.x, bar.center.y, head_z + opts.ready_height_cm});
  if (opts.adjust_target) {
    strike_t = opts.adjust_target(strike_t);
    ready_t = opts.adjust_target(ready_t);
  }
  IkOptions ik;
  ik.tolerance_cm = opts.tolerance_cm;
  double best_residual = std::numeric_limits<double>::infinity();
  for (const JointVector &seed : ik_seeds(arm)) {
    try {
      const IkResult ready = inverse_kinematics(chain, ready_t, seed, ik);
      const IkResult strike = inverse_kinematics(chain, strike_t, ready.q, ik);
      return {bar.note, arm, ready.q, strike.q};
    } catch (const Unreachable &e) {
      best_residual = std::min(best_residual, e.residual_cm());
    }
  }
  throw Unreachable("bar " + std::to_string(bar.note.value()) + " unreachable for the " +
                        to_string(arm) + " arm",
                    best_residual, bar.note.value());
}

} // namespace

StrikeTable strike_configs(const XylophoneModel &model, const Rig &rig, const StrikeOptions &opts) {
  StrikeTable table;
  table.reference = model.reference_bar().note;
  for (const Bar &bar : model.bars()) {
    if (bar.note <= table.reference)
      table.entries.push_back(solve_bar(bar, model.bar_top_cm(), Arm::Left, rig, opts));
    if (bar.note >= table.reference)
      table.entries.push_back(solve_bar(bar, model.bar_top_cm(), Arm::Right, rig, opts));
  }
  return table;
}

BezierPath::BezierPath(std::vector<TrajectoryPoint> knots, std::vector<bool> impacts)
    : knots_(std::move(knots)) {
  for (std::size_t i = 1; i < knots_.size(); ++i)
    if (!(knots_[i].t_s > knots_[i - 1].t_s))
      throw std::invalid_argument("knot times must be strictly increasing");
  const std::size_t n = knots_.size();
  if (impacts.empty())
    impacts.assign(n, false);
  if (impacts.size() != n)
    throw std::invalid_argument("one impact flag per knot");
  tangents_in_.assign(n, JointVector::Zero());
  tangents_out_.assign(n, JointVector::Zero());
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double dt0 = knots_[i].t_s - knots_[i - 1].t_s;
    const double dt1 = knots_[i + 1].t_s - knots_[i].t_s;
    if (impacts[i]) {
      tangents_in_[i] = kImpactGain * (knots_[i].q - knots_[i - 1].q) / dt0;
      tangents_out_[i] = kImpactGain * (knots_[i + 1].q - knots_[i].q) / dt1;
      continue;
    }
    for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(kArmDof); ++k) {
      const double s0 = (knots_[i].q[k] - knots_[i - 1].q[k]) / dt0;
      const double s1 = (knots_[i + 1].q[k] - knots_[i].q[k]) / dt1;
      if (s0 * s1 <= 0)
        continue;
      const double m = (knots_[i + 1].q[k] - knots_[i - 1].q[k]) / (dt0 + dt1);
      const double cap = 3.0 * std::min(std::abs(s0), std::abs(s1));
      tangents_in_[i][k] = std::copysign(std::min(std::abs(m), cap), m);
    }
    tangents_out_[i] = tangents_in_[i];
  }
}

std::array<JointVector, 4> BezierPath::segment(std::size_t i) const {
  const TrajectoryPoint &a = knots_.at(i);
  const TrajectoryPoint &b = knots_.at(i + 1);
  const double dt = b.t_s - a.t_s;
  return {a.q, a.q + tangents_out_[i] * (dt / 3.0), b.q - tangents_in_[i + 1] * (dt / 3.0), b.q};
}

JointVector BezierPath::evaluate(double t_s) const {
  if (knots_.empty())
    throw std::logic_error("empty path");
  if (t_s <= knots_.front().t_s)
    return knots_.front().q;
  if (t_s >= knots_.back().t_s)
    return knots_.back().q;
  const auto it = std::upper_bound(knots_.begin(), knots_.end(), t_s,
                                   [](double t, const TrajectoryPoint &p) { return t < p.t_s; });
  const auto i = static_cast<std::size_t>(it - knots_.begin()) - 1;
  const auto p = segment(i);
  const double s = (t_s - knots_[i].t_s) / (knots_[i + 1].t_s - knots_[i].t_s);
  const double u = 1.0 - s;
  return u * u * u * p[0] + 3.0 * u * u * s * p[1] + 3.0 * u * s * s * p[2] + s * s * s * p[3];
}

namespace {

struct ArmPlan {
  std::vector<std::pair<NoteId, double>> strikes;
  int last_bar;
};

JointTrajectory build_arm(Arm arm, const ArmPlan &plan, const StrikeTable &table,
                          const KinematicChain &chain, const TrajectoryOptions &opts) {
  JointTrajectory traj;
  traj.arm = arm;
  traj.strikes = plan.strikes;
  if (plan.strikes.empty())
    return traj;
  const double half = opts.strike_dur_s / 2.0;
  std::vector<TrajectoryPoint> knots;
  std::vector<bool> impacts;
  for (const auto &[note, onset] : plan.strikes) {
    const StrikeConfig *cfg = table.find(note, arm);
    const double t_ready = onset - half;
    if (!knots.empty() && std::abs(knots.back().t_s - t_ready) < 1e-9) {
      // Back-to-back strikes share the ready instant; pass between the two
      // ready poses.
      knots.back().q = 0.5 * (knots.back().q + cfg->ready);
    } else {
      knots.push_back({t_ready, cfg->ready});
      impacts.push_back(false);
    }
    knots.push_back({onset, cfg->strike});
    impacts.push_back(true);
    knots.push_back({onset + half, cfg->ready});
    impacts.push_back(false);
  }
  traj.path = BezierPath(knots, impacts);

  const double step = 1.0 / opts.sample_hz;
  const double t0 = traj.path.start_s();
  const double t1 = traj.path.end_s();
  std::vector<double> times;
  for (std::size_t k = 0;; ++k) {
    const double t = t0 + static_cast<double>(k) * step;
    if (t > t1)
      break;
    times.push_back(t);
  }
  for (const TrajectoryPoint &kp : knots)
    times.push_back(kp.t_s);
  std::sort(times.begin(), times.end());
  // Knot times win over grid times that land within a nanosecond of them.
  std::vector<double> unique;
  for (double t : times) {
    if (!unique.empty() && t - unique.back() < 1e-9) {
      const bool is_knot = std::any_of(knots.begin(), knots.end(),
                                       [&](const TrajectoryPoint &p) { return p.t_s == t; });
      if (is_knot)
        unique.back() = t;
      continue;
    }
    unique.push_back(t);
  }
  traj.points.reserve(unique.size());
  for (double t : unique)
    traj.points.push_back({t, chain.clamp(traj.path.evaluate(t))});
  return traj;
}

} // namespace

std::array<JointTrajectory, 2> generate_trajectory(const Melody &melody, const StrikeTable &table,
                                                   const Rig &rig, const TrajectoryOptions &opts) {
  melody.validate();
  if (!(opts.strike_dur_s > 0 && opts.sample_hz > 0))
    throw std::invalid_argument("strike duration and sample rate must be positive");
  const std::vector<double> onsets = melody.resolved_onsets(0.0);
  const int ref = table.reference.value();
  // Idle arms count as resting over the middle of their half.
  std::array<ArmPlan, 2> plans{ArmPlan{{}, (1 + ref) / 2}, ArmPlan{{}, (ref + 11 + 1) / 2}};

  auto collides = [&](const ArmPlan &p, double onset) {
    return !p.strikes.empty() && onset - p.strikes.back().second < opts.strike_dur_s - 1e-9;
  };

  for (std::size_t i = 0; i < melody.notes.size(); ++i) {
    const NoteId note = melody.notes[i];
    const double onset = onsets[i] + opts.lead_in_s;
    std::vector<Arm> arms = table.arms_for(note);
    if (arms.empty())
      throw MissingConfig("no strike configuration for note " + std::to_string(note.value()));
    if (arms.size() == 2) {
      const auto travel = [&](Arm a) {
        return std::abs(plans[static_cast<std::size_t>(a)].last_bar - note.value());
      };
      std::stable_sort(arms.begin(), arms.end(),
                       [&](Arm a, Arm b) { return travel(a) < travel(b); });
      // Fall back to the other arm when the nearer one is still busy.
      if (collides(plans[static_cast<std::size_t>(arms[0])], onset) &&
          !collides(plans[static_cast<std::size_t>(arms[1])], onset))
        std::swap(arms[0], arms[1]);
    }
    ArmPlan &plan = plans[static_cast<std::size_t>(arms[0])];
    if (collides(plan, onset))
      throw OnsetCollision("strikes at " + std::to_string(plan.strikes.back().second) + " s and " +
                           std::to_string(onset) + " s on the " + to_string(arms[0]) +
                           " arm are closer than the strike duration");
    plan.strikes.emplace_back(note, onset);
    plan.last_bar = note.value();
  }

  return {build_arm(Arm::Left, plans[0], table, rig.left, opts),
          build_arm(Arm::Right, plans[1], table, rig.right, opts)};
}

std::vector<SimStrike> execute_sim(std::span<const JointTrajectory> trajectories,
                                   const XylophoneModel &model, const Rig &rig) {
  std::vector<SimStrike> events;
  const double top = model.bar_top_cm();
  for (const JointTrajectory &traj : trajectories) {
    const KinematicChain &chain = rig.chain(traj.arm);
    bool have_prev = false;
    Eigen::Vector3d prev;
    double prev_t = 0;
    for (const TrajectoryPoint &p : traj.points) {
      const Eigen::Vector3d center =
          rig.placement.to_instrument(forward_kinematics(chain, p.q).position_cm);
      const Eigen::Vector3d bottom = center - Eigen::Vector3d(0, 0, chain.mallet_head_radius_cm);
      if (have_prev) {
        const double h0 = prev.z() - top;
        const double h1 = bottom.z() - top;
        if (h0 > 0 && h1 <= 0) {
          const double f = h0 / (h0 - h1);
          const Eigen::Vector3d hit = prev + f * (bottom - prev);
          for (const Bar &bar : model.bars()) {
            if (bar.contains(hit.x(), hit.y())) {
              events.push_back({bar.note, prev_t + f * (p.t_s - prev_t), traj.arm});
              break;
            }
          }
        }
      }
      prev = bottom;
      prev_t = p.t_s;
      have_prev = true;
    }
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const SimStrike &a, const SimStrike &b) { return a.t_s < b.t_s; });
  return events;
}

Melody strikes_to_melody(const std::vector<SimStrike> &strikes) {
  Melody m;
  std::vector<double> onsets;
  for (const SimStrike &s : strikes) {
    m.notes.push_back(s.note);
    onsets.push_back(s.t_s);
  }
  m.onsets_s = std::move(onsets);
  return m;
}

void write_trajectory_csv(std::ostream &out, const JointTrajectory &traj) {
  out << "t_s,q1,q2,q3,q4,q5\n";
  char buf[64];
  for (const TrajectoryPoint &p : traj.points) {
    std::snprintf(buf, sizeof buf, "%.6f", p.t_s);
    out << buf;
    for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(kArmDof); ++k) {
      std::snprintf(buf, sizeof buf, ",%.9g", p.q[k]);
      out << buf;
    }
    out << '\n';
  }
}

} // namespace melodica
