#include <doctest.h>

#include <cmath>

#include "melodica/errors.hpp"
#include "melodica/trajectory.hpp"
#include "melodica/vision.hpp"

using namespace melodica;

namespace {

const XylophoneModel &model() {
  static const XylophoneModel m = XylophoneModel::standard();
  return m;
}

double deg(double d) { return d * M_PI / 180.0; }

// Half the 800 px diagonal over tan(half the diagonal field of view).
double oracle_focal() { return 400.0 / std::tan(deg(36.5)); }

PoseHypothesis at(double x, double y, double z, double yaw_deg = 0) {
  PoseHypothesis p;
  p.position_cm = {x, y, z};
  p.yaw_rad = deg(yaw_deg);
  return p;
}

} // namespace

TEST_SUITE("vision") {
  TEST_CASE("camera") {
    const CameraModel cam;
    CHECK(cam.focal_px() == doctest::Approx(oracle_focal()));
    const Eigen::Vector2d c = cam.project({0.0, 0.0, 40.0});
    CHECK(c.x() == doctest::Approx(320.0));
    CHECK(c.y() == doctest::Approx(240.0));
  }

  TEST_CASE("ppm round trip") {
    Image img(5, 3, {1, 2, 3});
    img.set(4, 2, {200, 100, 50});
    const Image back = decode_ppm(encode_ppm(img));
    CHECK(back.width == 5);
    CHECK(back.rgb == img.rgb);
  }

  TEST_CASE("render geometry") {
    const CameraModel cam;
    const BlueBlob center = detect_blue_mask(render_synthetic(model(), cam, at(0, 0, 40)));
    const Eigen::Vector3d bar6 = to_eigen(model().bar(NoteId(6)).center);
    const Eigen::Vector2d want = cam.project(at(0, 0, 40).to_camera(bar6));
    CHECK((center.centroid - want).norm() <= 2.0);
    CHECK(std::abs(center.centroid.x() - 320.0) <= 1.0);

    // Translating the instrument by dx moves the centroid by f dx / z.
    const BlueBlob shifted = detect_blue_mask(render_synthetic(model(), cam, at(2.0, 0, 40)));
    const double z = 40.0 - model().bar_top_cm();
    CHECK(shifted.centroid.x() - center.centroid.x() ==
          doctest::Approx(oracle_focal() * 2.0 / z).epsilon(0).scale(1).epsilon(1.0));

    // Doubling the depth halves the bar width.
    auto width = [](const BlueBlob &b) {
      int lo = b.mask.width, hi = -1;
      for (int y = 0; y < b.mask.height; ++y)
        for (int x = 0; x < b.mask.width; ++x)
          if (b.mask.at(x, y)) {
            lo = std::min(lo, x);
            hi = std::max(hi, x);
          }
      return hi - lo + 1;
    };
    const BlueBlob far = detect_blue_mask(render_synthetic(model(), cam, at(0, 0, 80)));
    CHECK(std::abs(width(far) * 2.0 - width(center)) <= 2.0);
  }

  TEST_CASE("blue detection") {
    CHECK_THROWS_AS(detect_blue_mask(Image(64, 48, kDefaultBackground)), NoInstrument);
    Image img(64, 48, kDefaultBackground);
    for (int y = 5; y < 10; ++y)
      for (int x = 5; x < 10; ++x)
        img.set(x, y, {0, 0, 255});
    for (int y = 20; y < 30; ++y)
      for (int x = 30; x < 40; ++x)
        img.set(x, y, {0, 0, 255});
    const BlueBlob b = detect_blue_mask(img, {}, 10);
    CHECK(b.pixel_count == 100);
    CHECK(b.centroid.x() == doctest::Approx(35.0));
    CHECK(b.centroid.y() == doctest::Approx(25.0));
  }

  TEST_CASE("contours") {
    Mask full(20, 10);
    for (auto &v : full.data)
      v = 1;
    const Polygon border = extract_contour(full);
    REQUIRE(border.size() == 4);
    CHECK(std::abs(polygon_area(border)) == doctest::Approx(19.0 * 9.0));
    CHECK_THROWS_AS(extract_contour(Mask(4, 4)), EmptyMask);

    const CameraModel cam;
    const PoseHypothesis truth = at(1.0, -0.5, 45, 4);
    const Image img = render_synthetic(model(), cam, truth);
    const Polygon observed = boundary_edge_points(largest_component(instrument_mask(img, model())));
    const Polygon projected = densify(project_contour(model(), cam, truth), 1.0);
    CHECK(mean_contour_distance(observed, projected) <= 2.0);

    const double a1 = std::abs(polygon_area(project_contour(model(), cam, truth)));
    const double a2 = std::abs(polygon_area(project_contour(model(), cam, at(1.0, -0.5, 90, 4))));
    // Depth counts from the body's top face: one bar thickness under the bar tops.
    const double face = model().bar_top_cm() - model().bar_thickness_cm();
    const double r = (90.0 - face) / (45.0 - face);
    CHECK(a2 * r * r == doctest::Approx(a1).epsilon(0.01));
  }

  TEST_CASE("hypothesis likelihood") {
    Polygon sq{{0, 0}, {10, 0}, {10, 10}, {0, 10}};
    sq = densify(sq, 1.0);
    CHECK(hypothesis_likelihood(sq, sq) == 1.0);
    Polygon moved = sq;
    for (auto &p : moved)
      p.x() += 10.0;
    // A horizontal shift by exactly one side: every point of each set has a
    // partner 10 px away, and none is nearer.
    Polygon line, line_moved;
    for (int i = 0; i <= 20; ++i) {
      line.push_back({double(i), 0.0});
      line_moved.push_back({double(i), 10.0});
    }
    CHECK(hypothesis_likelihood(line, line_moved) == doctest::Approx(1.0 / 11.0));
    CHECK_THROWS_AS(hypothesis_likelihood({}, sq), std::invalid_argument);
  }

  TEST_CASE("pose estimation") {
    const CameraModel cam;
    const PoseHypothesis truth = at(2.0, -1.0, 42, 6);
    const Image img = render_synthetic(model(), cam, truth);
    const PoseHypothesis prior = at(5.0, 1.0, 42, 11);
    const PoseEstimate est = estimate_pose(img, model(), cam, prior);
    CHECK((est.pose.position_cm - truth.position_cm).norm() <= 0.5);
    CHECK(std::abs(est.pose.yaw_rad - truth.yaw_rad) <= deg(1.0));

    const PoseEstimate exact = estimate_pose(img, model(), cam, truth);
    CHECK((exact.pose.position_cm - truth.position_cm).norm() <= 0.15);

    CHECK_THROWS_AS(estimate_pose(Image(640, 480, kDefaultBackground), model(), cam, truth),
                    NoInstrument);
  }

  TEST_CASE("micro adjust") {
    const Eigen::Vector3d target{20.0, 3.0, -28.0};
    CHECK((micro_adjust(target, PoseDelta{}) - target).norm() == 0.0);
    PoseDelta shift;
    shift.translation_cm = {2.0, 0.0, 0.0};
    CHECK((micro_adjust(target, shift) - (target + Eigen::Vector3d(2.0, 0.0, 0.0))).norm() <
          1e-12);

    Placement nominal = Placement::canonical();
    Placement actual = nominal;
    actual.position_cm.x() += 1.0;
    actual.yaw_rad = deg(3.0);
    const PoseDelta d = pose_delta(nominal, actual);
    const Eigen::Vector3d p{2.0, 1.0, 4.0};
    CHECK((micro_adjust(nominal.to_robot(p), d) - actual.to_robot(p)).norm() < 1e-9);
  }

  TEST_CASE("camera mount maps placements and hypotheses both ways") {
    const CameraMount mount;
    Placement p = Placement::canonical();
    p.yaw_rad = deg(5.0);
    p.position_cm.y() += 1.5;
    const Placement back = mount.to_placement(mount.to_hypothesis(p));
    CHECK((back.position_cm - p.position_cm).norm() < 1e-9);
    CHECK(back.yaw_rad == doctest::Approx(p.yaw_rad));
  }
}
