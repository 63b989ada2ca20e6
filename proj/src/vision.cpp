#include "melodica/vision.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>

#include "melodica/errors.hpp"

namespace melodica {

Image::Image(int w, int h, Rgb fill) : width(w), height(h) {
  if (w <= 0 || h <= 0)
    throw std::invalid_argument("image dimensions must be positive");
  rgb.resize(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t i = 0; i < rgb.size(); i += 3) {
    rgb[i] = fill.r;
    rgb[i + 1] = fill.g;
    rgb[i + 2] = fill.b;
  }
}

Rgb Image::at(int x, int y) const {
  const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
  return {rgb[i], rgb[i + 1], rgb[i + 2]};
}

void Image::set(int x, int y, Rgb c) {
  const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
  rgb[i] = c.r;
  rgb[i + 1] = c.g;
  rgb[i + 2] = c.b;
}

std::vector<std::uint8_t> encode_ppm(const Image &img) {
  const std::string header =
      "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.rgb.begin(), img.rgb.end());
  return out;
}

Image decode_ppm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  // Header tokens are separated by whitespace; '#' starts a comment line.
  auto token = [&]() {
    std::string t;
    while (pos < bytes.size()) {
      const char c = static_cast<char>(bytes[pos]);
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n')
          ++pos;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos;
      } else {
        break;
      }
    }
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos])))
      t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  if (token() != "P6")
    throw std::invalid_argument("not a binary PPM");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception &) {
    throw std::invalid_argument("bad PPM header");
  }
  if (w <= 0 || h <= 0 || maxval != 255)
    throw std::invalid_argument("unsupported PPM dimensions or depth");
  ++pos; // single whitespace byte before the raster
  const std::size_t need = static_cast<std::size_t>(w) * h * 3;
  if (bytes.size() < pos + need)
    throw std::invalid_argument("truncated PPM raster");
  Image img;
  img.width = w;
  img.height = h;
  img.rgb.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                 bytes.begin() + static_cast<std::ptrdiff_t>(pos + need));
  return img;
}

void write_ppm(const std::filesystem::path &path, const Image &img) {
  const auto bytes = encode_ppm(img);
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Image read_ppm(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_ppm(bytes);
}

double CameraModel::focal_px() const {
  const double diag = std::hypot(static_cast<double>(width), static_cast<double>(height));
  return diag / (2.0 * std::tan(diagonal_fov_deg * M_PI / 360.0));
}

Eigen::Vector2d CameraModel::project(const Eigen::Vector3d &p) const {
  const double f = focal_px();
  return principal_point() + Eigen::Vector2d(f * p.x() / p.z(), f * p.y() / p.z());
}

Eigen::Matrix3d PoseHypothesis::rotation() const {
  return Eigen::AngleAxisd(yaw_rad, Eigen::Vector3d::UnitZ()).toRotationMatrix() *
         Eigen::Vector3d(1.0, -1.0, -1.0).asDiagonal();
}

Eigen::Vector3d PoseHypothesis::to_camera(const Eigen::Vector3d &p) const {
  return position_cm + rotation() * p;
}

namespace {

using Quad = std::array<Eigen::Vector3d, 4>;

Quad rect_at(double cx, double cy, double half_x, double half_y, double z) {
  return {Eigen::Vector3d(cx - half_x, cy - half_y, z), Eigen::Vector3d(cx + half_x, cy - half_y, z),
          Eigen::Vector3d(cx + half_x, cy + half_y, z), Eigen::Vector3d(cx - half_x, cy + half_y, z)};
}

Quad body_top(const XylophoneModel &model) {
  const Box &b = model.body();
  return rect_at(0.0, 0.0, b.length_cm / 2, b.depth_cm / 2, b.height_cm - model.bar_thickness_cm());
}

bool inside_convex(const Polygon &poly, const Eigen::Vector2d &p) {
  bool pos = false, neg = false;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Eigen::Vector2d &a = poly[i];
    const Eigen::Vector2d &b = poly[(i + 1) % poly.size()];
    const double cross = (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
    pos |= cross > 0;
    neg |= cross < 0;
    if (pos && neg)
      return false;
  }
  return true;
}

void fill_quad(Image &img, const CameraModel &cam, const PoseHypothesis &pose, const Quad &q,
               Rgb color) {
  Polygon poly;
  for (const auto &p : q) {
    const Eigen::Vector3d c = pose.to_camera(p);
    if (c.z() <= 1e-6)
      return;
    poly.push_back(cam.project(c));
  }
  double x0 = poly[0].x(), x1 = x0, y0 = poly[0].y(), y1 = y0;
  for (const auto &p : poly) {
    x0 = std::min(x0, p.x());
    x1 = std::max(x1, p.x());
    y0 = std::min(y0, p.y());
    y1 = std::max(y1, p.y());
  }
  const int ix0 = std::max(0, static_cast<int>(std::floor(x0)));
  const int ix1 = std::min(img.width - 1, static_cast<int>(std::ceil(x1)));
  const int iy0 = std::max(0, static_cast<int>(std::floor(y0)));
  const int iy1 = std::min(img.height - 1, static_cast<int>(std::ceil(y1)));
  for (int y = iy0; y <= iy1; ++y)
    for (int x = ix0; x <= ix1; ++x)
      if (inside_convex(poly, {x + 0.5, y + 0.5}))
        img.set(x, y, color);
}

} // namespace

Image render_synthetic(const XylophoneModel &model, const CameraModel &camera,
                       const PoseHypothesis &pose, Rgb background) {
  Image img(camera.width, camera.height, background);
  fill_quad(img, camera, pose, body_top(model), model.body_color());
  for (const Bar &bar : model.bars())
    fill_quad(img, camera, pose,
              rect_at(bar.center.x, bar.center.y, bar.width_cm / 2, bar.length_cm / 2,
                      bar.center.z),
              bar.color);
  return img;
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

Mask largest_component(const Mask &mask) {
  std::vector<int> label(mask.data.size(), -1);
  std::vector<std::size_t> sizes;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < mask.data.size(); ++start) {
    if (!mask.data[start] || label[start] >= 0)
      continue;
    const int id = static_cast<int>(sizes.size());
    std::size_t n = 0;
    label[start] = id;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      ++n;
      const int x = static_cast<int>(i % static_cast<std::size_t>(mask.width));
      const int y = static_cast<int>(i / static_cast<std::size_t>(mask.width));
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (!mask.at(x + dx, y + dy))
            continue;
          const std::size_t j = static_cast<std::size_t>(y + dy) * mask.width + (x + dx);
          if (label[j] < 0) {
            label[j] = id;
            stack.push_back(j);
          }
        }
    }
    sizes.push_back(n);
  }
  Mask out(mask.width, mask.height);
  if (sizes.empty())
    return out;
  const int best = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  for (std::size_t i = 0; i < label.size(); ++i)
    out.data[i] = label[i] == best ? 1 : 0;
  return out;
}

namespace {

// Hue in degrees, saturation and value in [0, 1].
std::array<double, 3> to_hsv(Rgb c) {
  const double r = c.r / 255.0, g = c.g / 255.0, b = c.b / 255.0;
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double d = mx - mn;
  double h = 0;
  if (d > 0) {
    if (mx == r)
      h = 60.0 * std::fmod((g - b) / d, 6.0);
    else if (mx == g)
      h = 60.0 * ((b - r) / d + 2.0);
    else
      h = 60.0 * ((r - g) / d + 4.0);
  }
  if (h < 0)
    h += 360.0;
  return {h, mx > 0 ? d / mx : 0.0, mx};
}

} // namespace

BlueBlob detect_blue_mask(const Image &image, const HsvRange &range, std::size_t min_pixels) {
  Mask raw(image.width, image.height);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      const auto [h, s, v] = to_hsv(image.at(x, y));
      if (h >= range.hue_min_deg && h <= range.hue_max_deg && s >= range.sat_min &&
          v >= range.val_min)
        raw.set(x, y);
    }
  BlueBlob blob;
  blob.mask = largest_component(raw);
  Eigen::Vector2d sum = Eigen::Vector2d::Zero();
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      if (blob.mask.at(x, y)) {
        sum += Eigen::Vector2d(x + 0.5, y + 0.5);
        ++blob.pixel_count;
      }
  if (blob.pixel_count < min_pixels)
    throw NoInstrument("blue bar not found (" + std::to_string(blob.pixel_count) + " pixels)");
  blob.centroid = sum / static_cast<double>(blob.pixel_count);
  return blob;
}

Mask instrument_mask(const Image &image, const XylophoneModel &model) {
  std::vector<Rgb> colors{model.body_color()};
  for (const Bar &b : model.bars())
    colors.push_back(b.color);
  Mask m(image.width, image.height);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      if (std::find(colors.begin(), colors.end(), image.at(x, y)) != colors.end())
        m.set(x, y);
  return m;
}

Polygon extract_contour(const Mask &mask, ContourDetail detail) {
  const Mask blob = largest_component(mask);
  int sx = -1, sy = -1;
  for (int y = 0; y < blob.height && sx < 0; ++y)
    for (int x = 0; x < blob.width; ++x)
      if (blob.at(x, y)) {
        sx = x;
        sy = y;
        break;
      }
  if (sx < 0)
    throw EmptyMask("mask has no pixels");

  // Moore-neighbour tracing, clockwise on screen, with Jacob's stopping rule.
  static constexpr int kDx[8] = {1, 1, 0, -1, -1, -1, 0, 1};
  static constexpr int kDy[8] = {0, 1, 1, 1, 0, -1, -1, -1};
  auto dir_of = [](int dx, int dy) {
    for (int i = 0; i < 8; ++i)
      if (kDx[i] == dx && kDy[i] == dy)
        return i;
    return -1;
  };

  std::vector<std::pair<int, int>> pts{{sx, sy}};
  int px = sx, py = sy;
  int back = 4; // the pixel to the west of the start is background
  const int start_back = back;
  const std::size_t limit = 4 * blob.data.size() + 8;
  for (std::size_t steps = 0; steps < limit; ++steps) {
    int found = -1;
    for (int k = 1; k <= 8; ++k) {
      const int i = (back + k) % 8;
      if (blob.at(px + kDx[i], py + kDy[i])) {
        found = i;
        break;
      }
    }
    if (found < 0)
      break; // isolated pixel
    const int prev = (found + 7) % 8;
    const int bx = px + kDx[prev], by = py + kDy[prev];
    px += kDx[found];
    py += kDy[found];
    back = dir_of(bx - px, by - py);
    if (px == sx && py == sy && back == start_back)
      break;
    pts.emplace_back(px, py);
  }
  if (pts.size() > 1 && pts.back() == pts.front())
    pts.pop_back();

  Polygon out;
  const std::size_t n = pts.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (detail == ContourDetail::Simple && n > 2) {
      const auto &a = pts[(i + n - 1) % n];
      const auto &b = pts[i];
      const auto &c = pts[(i + 1) % n];
      if (b.first - a.first == c.first - b.first && b.second - a.second == c.second - b.second)
        continue;
    }
    out.emplace_back(pts[i].first + 0.5, pts[i].second + 0.5);
  }
  return out;
}

Polygon boundary_edge_points(const Mask &mask) {
  const Mask blob = largest_component(mask);
  Polygon out;
  for (int y = 0; y < blob.height; ++y)
    for (int x = 0; x < blob.width; ++x) {
      if (!blob.at(x, y))
        continue;
      const double cx = x + 0.5, cy = y + 0.5;
      if (!blob.at(x - 1, y))
        out.emplace_back(cx - 0.5, cy);
      if (!blob.at(x + 1, y))
        out.emplace_back(cx + 0.5, cy);
      if (!blob.at(x, y - 1))
        out.emplace_back(cx, cy - 0.5);
      if (!blob.at(x, y + 1))
        out.emplace_back(cx, cy + 0.5);
    }
  if (out.empty())
    throw EmptyMask("mask has no pixels");
  return out;
}

Polygon project_contour(const XylophoneModel &model, const CameraModel &camera,
                        const PoseHypothesis &pose) {
  Polygon out;
  for (const auto &p : body_top(model)) {
    const Eigen::Vector3d c = pose.to_camera(p);
    if (c.z() <= 1e-6)
      throw std::invalid_argument("hypothesis puts the instrument behind the camera");
    out.push_back(camera.project(c));
  }
  return out;
}

Polygon densify(const Polygon &poly, double spacing_px) {
  if (!(spacing_px > 0))
    throw std::invalid_argument("spacing must be positive");
  Polygon out;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Eigen::Vector2d &a = poly[i];
    const Eigen::Vector2d &b = poly[(i + 1) % poly.size()];
    const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil((b - a).norm() / spacing_px)));
    for (std::size_t k = 0; k < n; ++k)
      out.push_back(a + (b - a) * (static_cast<double>(k) / static_cast<double>(n)));
  }
  return out;
}

double polygon_area(const Polygon &poly) {
  double s = 0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Eigen::Vector2d &a = poly[i];
    const Eigen::Vector2d &b = poly[(i + 1) % poly.size()];
    s += a.x() * b.y() - b.x() * a.y();
  }
  return std::abs(s) / 2.0;
}

namespace {

// Mean over a of the distance to the nearest point of b. b is sorted by x so
// each query only scans points whose x offset can still beat the best.
double mean_nearest(const Polygon &a, Polygon b) {
  std::sort(b.begin(), b.end(),
            [](const Eigen::Vector2d &p, const Eigen::Vector2d &q) { return p.x() < q.x(); });
  double total = 0;
  for (const Eigen::Vector2d &p : a) {
    const auto mid = std::lower_bound(
        b.begin(), b.end(), p.x(), [](const Eigen::Vector2d &q, double x) { return q.x() < x; });
    double best = std::numeric_limits<double>::infinity();
    for (auto it = mid; it != b.end() && it->x() - p.x() < best; ++it)
      best = std::min(best, (*it - p).norm());
    for (auto it = mid; it != b.begin();) {
      --it;
      if (p.x() - it->x() >= best)
        break;
      best = std::min(best, (*it - p).norm());
    }
    total += best;
  }
  return total / static_cast<double>(a.size());
}

double segment_distance(const Eigen::Vector2d &p, const Eigen::Vector2d &a,
                        const Eigen::Vector2d &b) {
  const Eigen::Vector2d ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (a + t * ab - p).norm();
}

// Squared Euclidean distance transform of a sampled 1D function (lower
// envelope of parabolas).
void edt_1d(const float *f, float *d, int n, std::vector<int> &v, std::vector<double> &z) {
  const double inf = std::numeric_limits<double>::infinity();
  auto g = [&](int q) { return static_cast<double>(f[q]) + static_cast<double>(q) * q; };
  int k = 0;
  v[0] = 0;
  z[0] = -inf;
  z[1] = inf;
  for (int q = 1; q < n; ++q) {
    double s = (g(q) - g(v[k])) / (2.0 * (q - v[k]));
    while (s <= z[k]) {
      --k;
      s = (g(q) - g(v[k])) / (2.0 * (q - v[k]));
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q)
      ++k;
    const double dq = q - v[k];
    d[q] = static_cast<float>(dq * dq + f[v[k]]);
  }
}

} // namespace

double mean_contour_distance(const Polygon &a, const Polygon &b) {
  if (a.empty() || b.empty())
    throw std::invalid_argument("contours must be nonempty");
  return 0.5 * (mean_nearest(a, b) + mean_nearest(b, a));
}

double hypothesis_likelihood(const Polygon &observed, const Polygon &projected) {
  return 1.0 / (1.0 + mean_contour_distance(observed, projected));
}

ContourScorer::ContourScorer(const Polygon &observed, int width, int height)
    : observed_(observed), width_(width), height_(height) {
  if (observed.empty())
    throw std::invalid_argument("observed contour is empty");
  // Nodes sit every half pixel so both pixel centers and pixel-edge
  // midpoints land exactly on the grid.
  gw_ = 2 * width + 1;
  gh_ = 2 * height + 1;
  const float inf = 1e20f;
  const auto w = static_cast<std::size_t>(gw_), h = static_cast<std::size_t>(gh_);
  std::vector<float> grid(w * h, inf);
  for (const Eigen::Vector2d &p : observed) {
    const int x = std::clamp(static_cast<int>(std::lround(2.0 * p.x())), 0, gw_ - 1);
    const int y = std::clamp(static_cast<int>(std::lround(2.0 * p.y())), 0, gh_ - 1);
    grid[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] = 0.0f;
  }
  const std::size_t n = std::max(w, h);
  std::vector<float> f(n), d(n);
  std::vector<double> z(n + 1);
  std::vector<int> v(n);
  for (std::size_t x = 0; x < w; ++x) {
    for (std::size_t y = 0; y < h; ++y)
      f[y] = grid[y * w + x];
    edt_1d(f.data(), d.data(), gh_, v, z);
    for (std::size_t y = 0; y < h; ++y)
      grid[y * w + x] = d[y];
  }
  for (std::size_t y = 0; y < h; ++y) {
    edt_1d(grid.data() + y * w, d.data(), gw_, v, z);
    for (std::size_t x = 0; x < w; ++x)
      grid[y * w + x] = 0.5f * std::sqrt(d[x]);
  }
  dt_ = std::move(grid);
}

double ContourScorer::dt_at(double u, double v) const {
  const double x = 2.0 * u, y = 2.0 * v;
  const double cx = std::clamp(x, 0.0, gw_ - 1.0);
  const double cy = std::clamp(y, 0.0, gh_ - 1.0);
  const double outside = 0.5 * std::hypot(x - cx, y - cy);
  const int x0 = std::min(static_cast<int>(cx), gw_ - 2);
  const int y0 = std::min(static_cast<int>(cy), gh_ - 2);
  const double fx = cx - x0, fy = cy - y0;
  const auto at = [&](int xx, int yy) {
    return static_cast<double>(dt_[static_cast<std::size_t>(yy) * gw_ + xx]);
  };
  const double top = at(x0, y0) * (1 - fx) + at(x0 + 1, y0) * fx;
  const double bot = at(x0, y0 + 1) * (1 - fx) + at(x0 + 1, y0 + 1) * fx;
  return top * (1 - fy) + bot * fy + outside;
}

double ContourScorer::dt_nearest(double u, double v) const {
  const int x = static_cast<int>(std::lround(2.0 * u)), y = static_cast<int>(std::lround(2.0 * v));
  if (x >= 0 && y >= 0 && x < gw_ && y < gh_)
    return dt_[static_cast<std::size_t>(y) * gw_ + x];
  return dt_at(u, v);
}

double ContourScorer::mean_distance(const Polygon &projected, double spacing_px,
                                    std::size_t max_observed, bool interpolate) const {
  if (projected.empty())
    throw std::invalid_argument("projected contour is empty");
  if (!(spacing_px > 0))
    throw std::invalid_argument("spacing must be positive");
  // Same points as densify(projected, spacing_px), without the allocation.
  double forward = 0;
  std::size_t samples = 0;
  for (std::size_t i = 0; i < projected.size(); ++i) {
    const Eigen::Vector2d &a = projected[i];
    const Eigen::Vector2d d = projected[(i + 1) % projected.size()] - a;
    const auto n =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(d.norm() / spacing_px)));
    for (std::size_t k = 0; k < n; ++k) {
      const double t = static_cast<double>(k) / static_cast<double>(n);
      const double u = a.x() + t * d.x(), v = a.y() + t * d.y();
      forward += interpolate ? dt_at(u, v) : dt_nearest(u, v);
    }
    samples += n;
  }
  forward /= static_cast<double>(samples);

  const std::size_t stride =
      max_observed == 0 ? 1 : std::max<std::size_t>(1, observed_.size() / max_observed);
  double backward = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < observed_.size(); i += stride) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < projected.size(); ++k)
      best = std::min(best, segment_distance(observed_[i], projected[k],
                                             projected[(k + 1) % projected.size()]));
    backward += best;
    ++count;
  }
  backward /= static_cast<double>(count);
  return 0.5 * (forward + backward);
}

double ContourScorer::score(const Polygon &projected, double spacing_px,
                            std::size_t max_observed, bool interpolate) const {
  return 1.0 / (1.0 + mean_distance(projected, spacing_px, max_observed, interpolate));
}

namespace {

// Grid cells are scored on a sparser outline; refinement uses every point.
constexpr double kCoarseSpacingPx = 4.0;
constexpr std::size_t kCoarseObserved = 32;

} // namespace

PoseEstimate estimate_pose(const Image &image, const XylophoneModel &model,
                           const CameraModel &camera, const PoseHypothesis &prior,
                           const EstimateOptions &opts) {
  if (image.width != camera.width || image.height != camera.height)
    throw std::invalid_argument("image size does not match the camera");
  detect_blue_mask(image);
  const Mask mask = instrument_mask(image, model);
  if (mask.count() < 25)
    throw NoInstrument("instrument not visible");
  const ContourScorer scorer(boundary_edge_points(mask), image.width, image.height);

  auto evaluate = [&](const PoseHypothesis &h, bool coarse) {
    if (h.position_cm.z() <= 1.0)
      return 0.0;
    const Polygon outline = project_contour(model, camera, h);
    return coarse ? scorer.score(outline, kCoarseSpacingPx, kCoarseObserved, false)
                  : scorer.score(outline);
  };

  const int nxy = static_cast<int>(std::lround(opts.search_cm / opts.grid_step_cm));
  const int nyaw = static_cast<int>(std::lround(opts.search_yaw_deg / opts.grid_step_yaw_deg));
  const int sxy = 2 * nxy + 1, syaw = 2 * nyaw + 1;
  const std::size_t total = static_cast<std::size_t>(sxy) * sxy * sxy * syaw;
  auto hypothesis = [&](std::size_t idx) {
    const int iyaw = static_cast<int>(idx % syaw);
    const int ix = static_cast<int>(idx / syaw % sxy);
    const int iy = static_cast<int>(idx / syaw / sxy % sxy);
    const int iz = static_cast<int>(idx / syaw / sxy / sxy);
    PoseHypothesis h = prior;
    h.position_cm += opts.grid_step_cm * Eigen::Vector3d(ix - nxy, iy - nxy, iz - nxy);
    h.yaw_rad += (iyaw - nyaw) * opts.grid_step_yaw_deg * M_PI / 180.0;
    return h;
  };

  std::vector<double> scores(total, 0.0);
  unsigned threads = opts.threads ? opts.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, 16);
  {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < total; i += threads)
          scores[i] = evaluate(hypothesis(i), true);
      });
    for (auto &th : pool)
      th.join();
  }
  // Lowest index wins ties, so the result does not depend on thread timing.
  // Lowest index wins ties, so the result does not depend on thread timing.
  std::vector<std::size_t> order(total);
  for (std::size_t i = 0; i < total; ++i)
    order[i] = i;
  const std::size_t starts = std::clamp<std::size_t>(opts.refine_starts, 1, total);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(starts), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
                    });

  const double deg = M_PI / 180.0;
  PoseEstimate result{hypothesis(order[0]), -1.0};
  for (std::size_t s = 0; s < starts; ++s) {
    PoseHypothesis best = hypothesis(order[s]);
    double best_score = evaluate(best, false);
    double step_cm = opts.grid_step_cm / 2.0;
    double step_yaw = opts.grid_step_yaw_deg / 2.0 * deg;
    while (true) {
      for (int round = 0; round < 200; ++round) {
        bool improved = false;
        for (int param = 0; param < 4; ++param)
          for (double sign : {1.0, -1.0}) {
            PoseHypothesis cand = best;
            if (param < 3)
              cand.position_cm[param] += sign * step_cm;
            else
              cand.yaw_rad += sign * step_yaw;
            const double sc = evaluate(cand, false);
            if (sc > best_score + 1e-12) {
              best = cand;
              best_score = sc;
              improved = true;
            }
          }
        if (!improved)
          break;
      }
      if (step_cm <= opts.final_step_cm + 1e-12 &&
          step_yaw <= opts.final_step_yaw_deg * deg + 1e-12)
        break;
      step_cm = std::max(opts.final_step_cm, step_cm / 2.0);
      step_yaw = std::max(opts.final_step_yaw_deg * deg, step_yaw / 2.0);
    }
    if (best_score > result.likelihood)
      result = {best, best_score};
  }
  return result;
}

Eigen::Vector3d micro_adjust(const Eigen::Vector3d &target, const PoseDelta &delta) {
  const Eigen::Matrix3d r =
      Eigen::AngleAxisd(delta.yaw_rad, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  return delta.pivot_cm + r * (target - delta.pivot_cm) + delta.translation_cm;
}

PoseDelta pose_delta(const Placement &nominal, const Placement &actual) {
  return {actual.position_cm - nominal.position_cm, actual.yaw_rad - nominal.yaw_rad,
          nominal.position_cm};
}

Eigen::Matrix3d CameraMount::rotation() const {
  Eigen::Matrix3d c;
  c << 0, -1, 0, -1, 0, 0, 0, 0, -1;
  return c;
}

namespace {

double yaw_of(const Eigen::Matrix3d &r) { return std::atan2(r(1, 0), r(0, 0)); }

} // namespace

Placement CameraMount::to_placement(const PoseHypothesis &pose) const {
  Placement pl;
  pl.position_cm = position_cm + rotation() * pose.position_cm;
  pl.yaw_rad = 0.0;
  const Eigen::Matrix3d base = pl.rotation();
  pl.yaw_rad = yaw_of(rotation() * pose.rotation() * base.transpose());
  return pl;
}

PoseHypothesis CameraMount::to_hypothesis(const Placement &placement) const {
  PoseHypothesis h;
  h.position_cm = rotation().transpose() * (placement.position_cm - position_cm);
  h.yaw_rad = 0.0;
  const Eigen::Matrix3d flip = h.rotation();
  h.yaw_rad = yaw_of(rotation().transpose() * placement.rotation() * flip.transpose());
  return h;
}

} // namespace melodica
