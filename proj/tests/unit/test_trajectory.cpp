#include <doctest.h>

#include <cmath>
#include <sstream>

#include "melodica/audio.hpp"
#include "melodica/errors.hpp"
#include "melodica/rng.hpp"
#include "melodica/trajectory.hpp"

using namespace melodica;

namespace {

const XylophoneModel &model() {
  static const XylophoneModel m = XylophoneModel::standard();
  return m;
}

const StrikeTable &table() {
  static const StrikeTable t = strike_configs(model(), Rig{});
  return t;
}

// de Casteljau on four control points, as an independent evaluator.
JointVector casteljau(std::array<JointVector, 4> p, double u) {
  for (int level = 3; level > 0; --level)
    for (int i = 0; i < level; ++i)
      p[static_cast<std::size_t>(i)] =
          (1 - u) * p[static_cast<std::size_t>(i)] + u * p[static_cast<std::size_t>(i + 1)];
  return p[0];
}

} // namespace

TEST_SUITE("trajectory") {
  TEST_CASE("canonical placement solves every bar; a far instrument solves none") {
    const StrikeTable &t = table();
    for (int n = 1; n <= 11; ++n)
      CHECK_FALSE(t.arms_for(NoteId(n)).empty());
    CHECK(t.arms_for(NoteId(6)).size() == 2);
    CHECK(t.arms_for(NoteId(1)) == std::vector<Arm>{Arm::Left});
    CHECK(t.arms_for(NoteId(11)) == std::vector<Arm>{Arm::Right});

    Rig far;
    far.placement.position_cm = {115.0, 0.0, -32.0};
    try {
      strike_configs(model(), far);
      FAIL("expected Unreachable");
    } catch (const Unreachable &e) {
      CHECK(e.note() == 1);
    }
  }

  TEST_CASE("Bezier path interpolates knots and matches de Casteljau") {
    Rng rng(2);
    std::vector<TrajectoryPoint> knots;
    std::vector<bool> impacts;
    double t = 0;
    for (int i = 0; i < 7; ++i) {
      JointVector q;
      for (Eigen::Index j = 0; j < 5; ++j)
        q[j] = rng.uniform(-1, 1);
      knots.push_back({t, q});
      impacts.push_back(i % 3 == 1);
      t += rng.uniform(0.05, 0.4);
    }
    const BezierPath path(knots, impacts);
    for (const auto &k : knots)
      CHECK((path.evaluate(k.t_s) - k.q).norm() < 1e-9);
    for (std::size_t s = 0; s + 1 < knots.size(); ++s) {
      const auto cp = path.segment(s);
      const double t0 = knots[s].t_s, t1 = knots[s + 1].t_s;
      for (double u : {0.1, 0.37, 0.5, 0.81}) {
        CHECK((path.evaluate(t0 + u * (t1 - t0)) - casteljau(cp, u)).norm() < 1e-9);
        // The range guarantee: every joint between its end knots.
        const JointVector q = casteljau(cp, u);
        for (Eigen::Index j = 0; j < 5; ++j) {
          const double lo = std::min(knots[s].q[j], knots[s + 1].q[j]);
          const double hi = std::max(knots[s].q[j], knots[s + 1].q[j]);
          CHECK(q[j] >= lo - 1e-12);
          CHECK(q[j] <= hi + 1e-12);
        }
      }
    }
  }

  TEST_CASE("single note starts and ends at ready and strikes at the onset") {
    Melody m = parse_hex_melody("3");
    m.onsets_s = std::vector<double>{0.0};
    const auto trajs = generate_trajectory(m, table(), Rig{});
    const JointTrajectory &left = trajs[0];
    CHECK(trajs[1].points.empty());
    const StrikeConfig *cfg = table().find(NoteId(3), Arm::Left);
    REQUIRE(cfg != nullptr);
    CHECK((left.path.evaluate(left.path.start_s()) - cfg->ready).norm() < 1e-9);
    CHECK((left.path.evaluate(left.path.end_s()) - cfg->ready).norm() < 1e-9);
    REQUIRE(left.strikes.size() == 1);
    CHECK((left.path.evaluate(left.strikes[0].second) - cfg->strike).norm() < 1e-9);
  }

  TEST_CASE("assignment: bars left of the blue bar go to the left arm") {
    const auto trajs = generate_trajectory(parse_hex_melody("121"), table(), Rig{});
    CHECK(trajs[0].strikes.size() == 3);
    CHECK(trajs[1].strikes.empty());
  }

  TEST_CASE("1155665 at 120 bpm strikes seven times 0.5 s apart") {
    const Melody m = parse_hex_melody("1155665", 120.0);
    const auto trajs = generate_trajectory(m, table(), Rig{});
    const auto sim = execute_sim(trajs, model(), Rig{});
    REQUIRE(sim.size() == 7);
    for (std::size_t i = 0; i < 7; ++i) {
      CHECK(sim[i].note == m.notes[i]);
      if (i > 0)
        CHECK(std::abs(sim[i].t_s - sim[i - 1].t_s - 0.5) <= 0.02);
    }
    // And the full stack: strikes -> audio -> detection.
    const Melody heard = strikes_to_melody(sim);
    CHECK(notes_of(detect_notes(synthesize_melody(heard))) == m.notes);
  }

  TEST_CASE("all-ready trajectory strikes nothing") {
    JointTrajectory idle;
    const JointVector ready = table().find(NoteId(2), Arm::Left)->ready;
    idle.path = BezierPath({{0.0, ready}, {1.0, ready}});
    for (double t = 0; t <= 1.0; t += 0.02)
      idle.points.push_back({t, ready});
    CHECK(execute_sim(std::span<const JointTrajectory>(&idle, 1), model(), Rig{}).empty());
  }

  TEST_CASE("same-arm onsets closer than a strike collide") {
    Melody m = parse_hex_melody("12");
    m.onsets_s = std::vector<double>{0.0, 0.05};
    CHECK_THROWS_AS(generate_trajectory(m, table(), Rig{}), OnsetCollision);
  }

  TEST_CASE("csv export") {
    const auto trajs = generate_trajectory(parse_hex_melody("1"), table(), Rig{});
    std::ostringstream out;
    write_trajectory_csv(out, trajs[0]);
    CHECK(out.str().rfind("t_s,q1,q2,q3,q4,q5\n", 0) == 0);
  }
}
