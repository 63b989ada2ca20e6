#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "melodica/instrument.hpp"
#include "melodica/kinematics.hpp"

namespace melodica {

/// 8-bit RGB raster, row-major, origin top-left.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h, Rgb fill = {});

  Rgb at(int x, int y) const;
  void set(int x, int y, Rgb c);
};

/// Binary P6 PPM with maxval 255.
std::vector<std::uint8_t> encode_ppm(const Image &img);
Image decode_ppm(std::span<const std::uint8_t> bytes);
void write_ppm(const std::filesystem::path &path, const Image &img);
Image read_ppm(const std::filesystem::path &path);

/// Pinhole camera: x right, y down, z along the optical axis. Pixel (i, j)
/// covers [i, i+1) x [j, j+1); the principal point is the image center.
struct CameraModel {
  int width = 640;
  int height = 480;
  double diagonal_fov_deg = 73.0;

  double focal_px() const;
  Eigen::Vector2d principal_point() const { return {width / 2.0, height / 2.0}; }
  Eigen::Vector2d project(const Eigen::Vector3d &p_cam) const;
};

/// Instrument pose seen from the camera: the instrument origin in camera
/// coordinates and a rotation about the optical axis. At zero yaw the
/// instrument faces the camera from above: its x axis runs along image x,
/// its y axis along -y and its up axis toward the camera.
struct PoseHypothesis {
  Eigen::Vector3d position_cm{0.0, 0.0, 50.0};
  double yaw_rad = 0.0;

  Eigen::Matrix3d rotation() const;
  Eigen::Vector3d to_camera(const Eigen::Vector3d &p_instrument) const;
};

inline constexpr Rgb kDefaultBackground{96, 96, 96};

/// Flat-shaded view of the body's top face with the bars drawn over it.
/// A pixel takes a surface's color when its center falls inside that
/// surface's projection.
Image render_synthetic(const XylophoneModel &model, const CameraModel &camera,
                       const PoseHypothesis &pose, Rgb background = kDefaultBackground);

struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h, 0) {}
  bool at(int x, int y) const {
    return x >= 0 && y >= 0 && x < width && y < height &&
           data[static_cast<std::size_t>(y) * width + x] != 0;
  }
  void set(int x, int y, bool v = true) {
    data[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0;
  }
  std::size_t count() const;
};

/// Keeps only the largest 8-connected component; ties go to the component
/// found first in raster order.
Mask largest_component(const Mask &mask);

struct HsvRange {
  double hue_min_deg = 200.0;
  double hue_max_deg = 260.0;
  double sat_min = 0.5;
  double val_min = 0.3;
};

struct BlueBlob {
  Mask mask;
  /// Mean of the pixel centers.
  Eigen::Vector2d centroid;
  std::size_t pixel_count = 0;
};

/// Thresholds in HSV and keeps the largest blob. Throws NoInstrument when it
/// has fewer than min_pixels pixels.
BlueBlob detect_blue_mask(const Image &image, const HsvRange &range = {},
                          std::size_t min_pixels = 25);

/// Pixels painted in the body color or any bar color.
Mask instrument_mask(const Image &image, const XylophoneModel &model);

using Polygon = std::vector<Eigen::Vector2d>;

enum class ContourDetail { Dense, Simple };

/// Outer border of the largest component traced clockwise through pixel
/// centers. Simple drops the interior points of straight runs. Throws
/// EmptyMask.
Polygon extract_contour(const Mask &mask, ContourDetail detail = ContourDetail::Simple);

/// Midpoints of every pixel edge that separates the largest component from
/// the background. Unlike pixel centers these straddle the true outline
/// without a systematic inward offset. Throws EmptyMask.
Polygon boundary_edge_points(const Mask &mask);

/// Outline of the body's top face under the hypothesis, in pixels.
Polygon project_contour(const XylophoneModel &model, const CameraModel &camera,
                        const PoseHypothesis &pose);

/// Closed polygon resampled so consecutive points are at most spacing_px
/// apart; original vertices are kept.
Polygon densify(const Polygon &poly, double spacing_px);

double polygon_area(const Polygon &poly);

/// Symmetric mean nearest-vertex distance between two point sets.
double mean_contour_distance(const Polygon &a, const Polygon &b);

/// 1 / (1 + mean_contour_distance). Throws std::invalid_argument on an
/// empty polygon.
double hypothesis_likelihood(const Polygon &observed, const Polygon &projected);

/// Fast approximation of hypothesis_likelihood against a fixed observed
/// contour: a distance transform of the observed contour scores points
/// sampled along the projected outline, and a subset of observed points is
/// measured against the projected polygon's edges.
class ContourScorer {
public:
  ContourScorer(const Polygon &observed_dense, int width, int height);

  /// spacing_px: sampling step along the projected outline. max_observed:
  /// cap on the number of observed points measured (evenly strided).
  /// interpolate: bilinear distance lookups instead of nearest pixel.
  double score(const Polygon &projected, double spacing_px = 1.0, std::size_t max_observed = 0,
               bool interpolate = true) const;
  double mean_distance(const Polygon &projected, double spacing_px = 1.0,
                       std::size_t max_observed = 0, bool interpolate = true) const;

private:
  double dt_at(double u, double v) const;
  double dt_nearest(double u, double v) const;

  Polygon observed_;
  int width_;
  int height_;
  int gw_ = 0;
  int gh_ = 0;
  std::vector<float> dt_;
};

struct EstimateOptions {
  double search_cm = 10.0;
  double grid_step_cm = 1.0;
  double search_yaw_deg = 15.0;
  double grid_step_yaw_deg = 3.0;
  double final_step_cm = 0.1;
  double final_step_yaw_deg = 0.5;
  /// Best grid cells that are refined; the highest refined score wins.
  std::size_t refine_starts = 4;
  /// 0 picks the hardware concurrency.
  unsigned threads = 0;
};

struct PoseEstimate {
  PoseHypothesis pose;
  double likelihood = 0;
};

/// Grid search around the prior followed by coordinate descent. Throws
/// NoInstrument when the blue bar or the instrument is not visible.
PoseEstimate estimate_pose(const Image &image, const XylophoneModel &model,
                           const CameraModel &camera, const PoseHypothesis &prior,
                           const EstimateOptions &opts = {});

/// Rigid correction in the robot frame: rotate about the vertical through
/// pivot_cm, then translate.
struct PoseDelta {
  Eigen::Vector3d translation_cm = Eigen::Vector3d::Zero();
  double yaw_rad = 0.0;
  Eigen::Vector3d pivot_cm = Eigen::Vector3d::Zero();
};

Eigen::Vector3d micro_adjust(const Eigen::Vector3d &strike_target_cm, const PoseDelta &delta);

/// Correction that carries points placed for `nominal` onto `actual`.
PoseDelta pose_delta(const Placement &nominal, const Placement &actual);

/// Where the camera sits on the robot. The image axes map to robot axes as
/// x -> -y, y -> -x and the optical axis points straight down.
struct CameraMount {
  Eigen::Vector3d position_cm{15.0, 0.0, 15.0};

  Eigen::Matrix3d rotation() const;
  Placement to_placement(const PoseHypothesis &pose) const;
  PoseHypothesis to_hypothesis(const Placement &placement) const;
};

} // namespace melodica
