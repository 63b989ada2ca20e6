#include "melodica/affect.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "melodica/errors.hpp"
#include "melodica/fft.hpp"
#include "melodica/rng.hpp"

namespace melodica {

// ---- recordings ------------------------------------------------------------

const char *to_string(SubSegmentKind k) noexcept {
  switch (k) {
  case SubSegmentKind::Learn:
    return "Learn";
  case SubSegmentKind::Play:
    return "Play";
  case SubSegmentKind::Feedback:
    return "Feedback";
  }
  return "?";
}

namespace {

std::vector<std::string> split_csv(const std::string &line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ','))
    out.push_back(cell);
  if (!line.empty() && line.back() == ',')
    out.emplace_back();
  for (auto &c : out) {
    const auto b = c.find_first_not_of(" \t\r");
    const auto e = c.find_last_not_of(" \t\r");
    c = b == std::string::npos ? std::string() : c.substr(b, e - b + 1);
  }
  return out;
}

double parse_real(const std::string &s, const std::string &what) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception &) {
    used = 0;
  }
  if (used != s.size() || s.empty() || !std::isfinite(v))
    throw std::invalid_argument("bad number '" + s + "' in " + what);
  return v;
}

std::ifstream open_in(const std::filesystem::path &p) {
  std::ifstream in(p);
  if (!in)
    throw std::runtime_error("cannot open " + p.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path &p) {
  std::ofstream out(p);
  if (!out)
    throw std::runtime_error("cannot write " + p.string());
  return out;
}

} // namespace

EdaRecording read_eda_csv(const std::filesystem::path &path) {
  auto in = open_in(path);
  std::string line;
  std::getline(in, line); // header
  EdaRecording rec;
  std::vector<double> times;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos)
      continue;
    const auto cells = split_csv(line);
    if (cells.size() < 2)
      throw std::invalid_argument("EDA row needs t_s and microsiemens: " + line);
    times.push_back(parse_real(cells[0], path.string()));
    rec.samples.push_back(parse_real(cells[1], path.string()));
  }
  if (times.empty())
    throw SignalTooShort("no EDA samples in " + path.string());
  rec.t0_s = times.front();
  for (std::size_t i = 0; i < times.size(); ++i)
    if (std::abs(times[i] - rec.t0_s - static_cast<double>(i) / kEdaRateHz) > 1e-3)
      throw std::invalid_argument("EDA samples in " + path.string() + " are not evenly spaced at 32 Hz");
  return rec;
}

std::vector<Annotation> read_annotations_csv(const std::filesystem::path &path) {
  auto in = open_in(path);
  std::string line;
  std::getline(in, line); // header
  std::vector<Annotation> out;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos)
      continue;
    auto cells = split_csv(line);
    if (cells.size() < 3)
      throw std::invalid_argument("annotation row needs start_s, end_s, section: " + line);
    cells.resize(5);
    Annotation a;
    a.start_s = parse_real(cells[0], path.string());
    a.end_s = parse_real(cells[1], path.string());
    a.section = cells[2];
    if (cells[3] == "Learn")
      a.subsegment = SubSegmentKind::Learn;
    else if (cells[3] == "Play")
      a.subsegment = SubSegmentKind::Play;
    else if (cells[3] == "Feedback")
      a.subsegment = SubSegmentKind::Feedback;
    else if (!cells[3].empty() && cells[3] != "Conversation")
      throw std::invalid_argument("unknown subsegment '" + cells[3] + "'");
    a.label = cells[4];
    out.push_back(std::move(a));
  }
  return out;
}

void write_eda_csv(const std::filesystem::path &path, const EdaRecording &rec) {
  auto out = open_out(path);
  out << "t_s,microsiemens\n" << std::setprecision(17);
  for (std::size_t i = 0; i < rec.samples.size(); ++i)
    out << rec.t0_s + static_cast<double>(i) / rec.sample_rate << ',' << rec.samples[i] << '\n';
}

void write_annotations_csv(const std::filesystem::path &path,
                           const std::vector<Annotation> &annotations) {
  auto out = open_out(path);
  out << "start_s,end_s,section,subsegment,label\n" << std::setprecision(17);
  for (const auto &a : annotations)
    out << a.start_s << ',' << a.end_s << ',' << a.section << ','
        << (a.subsegment ? to_string(*a.subsegment) : "Conversation") << ',' << a.label << '\n';
}

std::vector<Segment> segment_conversations(const EdaRecording &rec, const std::string &id_prefix) {
  const double fs = rec.sample_rate;
  const double dur = rec.duration_s();
  const double slack = 0.5 / fs;
  std::vector<const Annotation *> convs, subs;
  for (const auto &a : rec.annotations) {
    const double s = a.start_s - rec.t0_s, e = a.end_s - rec.t0_s;
    if (!(s >= -slack && e > s && e <= dur + slack))
      throw MissingAnnotations("annotation [" + std::to_string(a.start_s) + ", " +
                               std::to_string(a.end_s) + "] lies outside the recording");
    (a.subsegment ? subs : convs).push_back(&a);
  }
  if (convs.empty())
    throw MissingAnnotations("recording has no conversation annotations");
  const auto by_start = [](const Annotation *a, const Annotation *b) {
    return a->start_s < b->start_s;
  };
  std::stable_sort(convs.begin(), convs.end(), by_start);
  std::stable_sort(subs.begin(), subs.end(), by_start);
  for (const auto *layer : {&convs, &subs})
    for (std::size_t i = 1; i < layer->size(); ++i)
      if ((*layer)[i]->start_s < (*layer)[i - 1]->end_s - 1e-9)
        throw MissingAnnotations("overlapping annotations at " +
                                 std::to_string((*layer)[i]->start_s) + " s");

  const auto index_of = [&](double t) {
    const double i = std::round((t - rec.t0_s) * fs);
    return static_cast<std::size_t>(std::clamp(i, 0.0, static_cast<double>(rec.samples.size())));
  };
  std::vector<Segment> out;
  for (std::size_t c = 0; c < convs.size(); ++c) {
    const Annotation &a = *convs[c];
    Segment seg;
    seg.id = id_prefix + std::to_string(c);
    seg.section = a.section;
    seg.label = a.label;
    seg.begin = index_of(a.start_s);
    seg.end = index_of(a.end_s);
    seg.samples.assign(rec.samples.begin() + static_cast<std::ptrdiff_t>(seg.begin),
                       rec.samples.begin() + static_cast<std::ptrdiff_t>(seg.end));
    out.push_back(std::move(seg));
  }
  for (const Annotation *s : subs) {
    bool placed = false;
    for (std::size_t c = 0; c < convs.size() && !placed; ++c) {
      if (s->start_s >= convs[c]->start_s - 1e-9 && s->end_s <= convs[c]->end_s + 1e-9) {
        out[c].subsegments.push_back({*s->subsegment, index_of(s->start_s), index_of(s->end_s)});
        placed = true;
      }
    }
    if (!placed)
      throw MissingAnnotations("sub-segment at " + std::to_string(s->start_s) +
                               " s lies outside every conversation");
  }
  return out;
}

// ---- wavelet transform -----------------------------------------------------

std::complex<double> cmorlet(double t, double fc, double fb) {
  const double env = std::exp(-t * t / fb) / std::sqrt(M_PI * fb);
  return std::polar(env, 2.0 * M_PI * fc * t);
}

std::vector<double> log_scales(double f_low_hz, double f_high_hz, std::size_t n, double fc,
                               double sample_rate) {
  if (!(f_low_hz > 0 && f_high_hz > f_low_hz && n >= 2 && fc > 0))
    throw std::invalid_argument("log_scales needs 0 < f_low < f_high and n >= 2");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double f =
        f_high_hz * std::pow(f_low_hz / f_high_hz, static_cast<double>(i) / static_cast<double>(n - 1));
    out[i] = fc * sample_rate / f;
  }
  return out;
}

Scalogram cwt(const std::vector<double> &signal, double fc, double fb,
              const std::vector<double> &scales, double sample_rate) {
  if (signal.size() < 64)
    throw SignalTooShort("CWT needs at least 64 samples, got " + std::to_string(signal.size()));
  if (!(fc > 0 && fb > 0) || scales.empty())
    throw std::invalid_argument("CWT needs positive fc, fb and at least one scale");
  for (double a : scales)
    if (!(a > 0))
      throw std::invalid_argument("CWT scales must be positive");

  const std::size_t n = signal.size();
  // The envelope is below 1e-10 beyond 5 sqrt(fb) wavelet units.
  const double support = 5.0 * std::sqrt(fb);
  const double amax = *std::max_element(scales.begin(), scales.end());
  const std::size_t mmax = static_cast<std::size_t>(std::ceil(support * amax));
  const std::size_t p = n + mmax + 1;

  ComplexFft fft(p);
  std::vector<std::complex<double>> x(p);
  for (std::size_t i = 0; i < n; ++i)
    x[i] = signal[i];
  fft.forward(x);

  Scalogram out;
  out.length = n;
  out.scales = scales;
  out.values.resize(scales.size() * n);
  std::vector<std::complex<double>> h(p);
  for (std::size_t s = 0; s < scales.size(); ++s) {
    const double a = scales[s];
    out.pseudo_frequencies_hz.push_back(fc * sample_rate / a);
    std::fill(h.begin(), h.end(), std::complex<double>{});
    const auto m = static_cast<std::ptrdiff_t>(std::ceil(support * a));
    const double norm = 1.0 / std::sqrt(a);
    // h[k] = conj(psi(-k / a)) / sqrt(a), so (x * h)[b] is the correlation.
    for (std::ptrdiff_t k = -m; k <= m; ++k) {
      const std::size_t idx = static_cast<std::size_t>((k % static_cast<std::ptrdiff_t>(p) +
                                                        static_cast<std::ptrdiff_t>(p)) %
                                                       static_cast<std::ptrdiff_t>(p));
      h[idx] = std::conj(cmorlet(-static_cast<double>(k) / a, fc, fb)) * norm;
    }
    fft.forward(h);
    for (std::size_t k = 0; k < p; ++k)
      h[k] *= x[k];
    fft.inverse(h);
    const double inv_p = 1.0 / static_cast<double>(p);
    for (std::size_t b = 0; b < n; ++b)
      out.values[s * n + b] = h[b] * inv_p;
  }
  return out;
}

// ---- features --------------------------------------------------------------

double FeatureConfig::effective_high_hz() const {
  return std::min(f_high_hz, sample_rate / 2.0 - 0.1);
}

std::vector<double> extract_features(const std::vector<double> &samples, const FeatureConfig &cfg) {
  if (samples.size() < 64)
    throw SignalTooShort("feature extraction needs at least 64 samples, got " +
                         std::to_string(samples.size()));
  if (cfg.bands == 0 || cfg.time_cells == 0 || cfg.scales % cfg.bands != 0 ||
      samples.size() < cfg.time_cells)
    throw std::invalid_argument("scales must split evenly into bands");

  const std::size_t n = samples.size();
  const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(n);
  std::vector<double> centered(n);
  double var = 0;
  for (std::size_t i = 0; i < n; ++i) {
    centered[i] = samples[i] - mean;
    var += centered[i] * centered[i];
  }
  const double phasic_std = std::sqrt(var / static_cast<double>(n));

  const auto scales = log_scales(cfg.f_low_hz, cfg.effective_high_hz(), cfg.scales, cfg.fc,
                                 cfg.sample_rate);
  const Scalogram w = cwt(centered, cfg.fc, cfg.fb, scales, cfg.sample_rate);

  std::vector<double> mag(w.values.size());
  double energy = 0;
  for (std::size_t i = 0; i < mag.size(); ++i) {
    mag[i] = std::abs(w.values[i]);
    energy += mag[i] * mag[i];
  }
  energy /= static_cast<double>(mag.size());

  std::vector<double> f;
  f.reserve(cfg.length());
  const std::size_t per_band = cfg.scales / cfg.bands;
  std::vector<double> band_mean(cfg.bands, 0.0);
  for (std::size_t band = 0; band < cfg.bands; ++band) {
    for (std::size_t cell = 0; cell < cfg.time_cells; ++cell) {
      const std::size_t t0 = cell * n / cfg.time_cells;
      const std::size_t t1 = (cell + 1) * n / cfg.time_cells;
      double sum = 0, sq = 0, mx = 0;
      std::size_t count = 0;
      for (std::size_t s = band * per_band; s < (band + 1) * per_band; ++s) {
        for (std::size_t t = t0; t < t1; ++t) {
          const double v = mag[s * n + t];
          sum += v;
          sq += v * v;
          mx = std::max(mx, v);
          ++count;
        }
      }
      const double m = sum / static_cast<double>(count);
      band_mean[band] += sum;
      f.push_back(m);
      f.push_back(std::sqrt(std::max(0.0, sq / static_cast<double>(count) - m * m)));
      f.push_back(mx);
    }
  }
  // Whole-segment band means track the SCR count more closely than any
  // single cell does.
  for (double b : band_mean)
    f.push_back(b / static_cast<double>(per_band * n));
  f.push_back(energy);
  f.push_back(mean);
  f.push_back(phasic_std);
  return f;
}

FeatureVector extract_features(const Segment &seg, const FeatureConfig &cfg) {
  return {extract_features(seg.samples, cfg), seg.id, seg.section};
}

// ---- kernels ---------------------------------------------------------------

const char *to_string(KernelKind k) noexcept {
  switch (k) {
  case KernelKind::Linear:
    return "linear";
  case KernelKind::Poly:
    return "poly";
  case KernelKind::Rbf:
    return "rbf";
  }
  return "?";
}

KernelKind kernel_from_string(const std::string &s) {
  if (s == "linear")
    return KernelKind::Linear;
  if (s == "poly" || s == "polynomial")
    return KernelKind::Poly;
  if (s == "rbf")
    return KernelKind::Rbf;
  throw std::invalid_argument("unknown kernel " + s);
}

double Kernel::operator()(const std::vector<double> &a, const std::vector<double> &b) const {
  switch (kind) {
  case KernelKind::Linear:
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
  case KernelKind::Poly:
    return std::pow(gamma * std::inner_product(a.begin(), a.end(), b.begin(), 0.0) + coef0,
                    degree);
  case KernelKind::Rbf: {
    double d = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
      d += (a[i] - b[i]) * (a[i] - b[i]);
    return std::exp(-gamma * d);
  }
  }
  return 0;
}

namespace {

Kernel resolved(Kernel k, std::size_t features) {
  if (k.gamma <= 0)
    k.gamma = 1.0 / static_cast<double>(std::max<std::size_t>(features, 1));
  return k;
}

// Q[i][j] = y_i y_j K(x_i, x_j).
std::vector<double> q_matrix(const Matrix &x, const std::vector<int> &y, const Kernel &k) {
  const std::size_t n = x.size();
  std::vector<double> q(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j)
      q[i * n + j] = q[j * n + i] = y[i] * y[j] * k(x[i], x[j]);
  return q;
}

struct Violators {
  std::ptrdiff_t i = -1, j = -1;
  double gmax = -std::numeric_limits<double>::infinity();
  double gmin = std::numeric_limits<double>::infinity();
};

// Maximal violating pair: i maximizes -y G over the "up" set, j minimizes it
// over the "low" set. First index wins ties.
Violators select_pair(const std::vector<int> &y, const std::vector<double> &alpha,
                      const std::vector<double> &g, double c) {
  Violators v;
  for (std::size_t t = 0; t < y.size(); ++t) {
    const double val = -y[t] * g[t];
    const bool up = (y[t] > 0 && alpha[t] < c) || (y[t] < 0 && alpha[t] > 0);
    const bool low = (y[t] < 0 && alpha[t] < c) || (y[t] > 0 && alpha[t] > 0);
    if (up && val > v.gmax) {
      v.gmax = val;
      v.i = static_cast<std::ptrdiff_t>(t);
    }
    if (low && val < v.gmin) {
      v.gmin = val;
      v.j = static_cast<std::ptrdiff_t>(t);
    }
  }
  return v;
}

void check_labels(const std::vector<int> &y, std::size_t n) {
  if (y.size() != n || n == 0)
    throw std::invalid_argument("SMO needs one label per row");
  bool pos = false, neg = false;
  for (int v : y) {
    if (v != 1 && v != -1)
      throw std::invalid_argument("SMO labels must be +1 or -1");
    (v > 0 ? pos : neg) = true;
  }
  if (!pos || !neg)
    throw DegenerateData("SVM training needs both classes");
}

} // namespace

SmoResult smo_solve(const Matrix &x, const std::vector<int> &y, const SvmParams &params,
                    bool trace) {
  check_labels(y, x.size());
  if (!(params.C > 0))
    throw std::invalid_argument("C must be positive");
  const std::size_t n = x.size();
  const Kernel k = resolved(params.kernel, x.front().size());
  const std::vector<double> q = q_matrix(x, y, k);
  const double c = params.C;
  constexpr double kTau = 1e-12;

  SmoResult r;
  std::vector<double> &alpha = r.alpha;
  alpha.assign(n, 0.0);
  std::vector<double> g(n, -1.0);
  auto dual = [&] {
    double d = 0;
    for (std::size_t t = 0; t < n; ++t)
      d -= 0.5 * alpha[t] * (g[t] - 1.0);
    return d;
  };

  for (;;) {
    const Violators v = select_pair(y, alpha, g, c);
    r.kkt_gap = v.i < 0 || v.j < 0 ? 0.0 : v.gmax - v.gmin;
    if (v.i < 0 || v.j < 0 || r.kkt_gap < params.tolerance || r.iterations >= params.max_iterations)
      break;
    ++r.iterations;
    const std::size_t i = static_cast<std::size_t>(v.i), j = static_cast<std::size_t>(v.j);
    const double *qi = &q[i * n], *qj = &q[j * n];
    const double ai = alpha[i], aj = alpha[j];

    if (y[i] != y[j]) {
      double quad = qi[i] + qj[j] + 2.0 * qi[j];
      if (quad <= 0)
        quad = kTau;
      const double delta = (-g[i] - g[j]) / quad;
      const double diff = alpha[i] - alpha[j];
      alpha[i] += delta;
      alpha[j] += delta;
      if (diff > 0) {
        if (alpha[j] < 0) {
          alpha[j] = 0;
          alpha[i] = diff;
        }
      } else if (alpha[i] < 0) {
        alpha[i] = 0;
        alpha[j] = -diff;
      }
      if (diff > 0) {
        if (alpha[i] > c) {
          alpha[i] = c;
          alpha[j] = c - diff;
        }
      } else if (alpha[j] > c) {
        alpha[j] = c;
        alpha[i] = c + diff;
      }
    } else {
      double quad = qi[i] + qj[j] - 2.0 * qi[j];
      if (quad <= 0)
        quad = kTau;
      const double delta = (g[i] - g[j]) / quad;
      const double sum = alpha[i] + alpha[j];
      alpha[i] -= delta;
      alpha[j] += delta;
      if (sum > c) {
        if (alpha[i] > c) {
          alpha[i] = c;
          alpha[j] = sum - c;
        }
      } else if (alpha[j] < 0) {
        alpha[j] = 0;
        alpha[i] = sum;
      }
      if (sum > c) {
        if (alpha[j] > c) {
          alpha[j] = c;
          alpha[i] = sum - c;
        }
      } else if (alpha[i] < 0) {
        alpha[i] = 0;
        alpha[j] = sum;
      }
    }

    const double di = alpha[i] - ai, dj = alpha[j] - aj;
    for (std::size_t t = 0; t < n; ++t)
      g[t] += q[t * n + i] * di + q[t * n + j] * dj;
    if (trace)
      r.dual_trace.push_back(dual());
  }

  // rho: mean of y G over free vectors, else the middle of the feasible range.
  double ub = std::numeric_limits<double>::infinity(), lb = -ub, sum = 0;
  std::size_t free = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const double yg = y[t] * g[t];
    if (alpha[t] >= c) {
      if (y[t] < 0)
        ub = std::min(ub, yg);
      else
        lb = std::max(lb, yg);
    } else if (alpha[t] <= 0) {
      if (y[t] > 0)
        ub = std::min(ub, yg);
      else
        lb = std::max(lb, yg);
    } else {
      ++free;
      sum += yg;
    }
  }
  r.rho = free > 0 ? sum / static_cast<double>(free) : (ub + lb) / 2.0;
  return r;
}

double kkt_gap(const Matrix &x, const std::vector<int> &y, const std::vector<double> &alpha,
               const SvmParams &params) {
  check_labels(y, x.size());
  const std::size_t n = x.size();
  const Kernel k = resolved(params.kernel, x.front().size());
  const std::vector<double> q = q_matrix(x, y, k);
  std::vector<double> g(n, -1.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      g[i] += q[i * n + j] * alpha[j];
  const Violators v = select_pair(y, alpha, g, params.C);
  return v.i < 0 || v.j < 0 ? 0.0 : std::max(0.0, v.gmax - v.gmin);
}

double BinarySvm::decision(const Kernel &k, const std::vector<double> &x) const {
  double f = -rho;
  for (std::size_t i = 0; i < coef.size(); ++i)
    f += coef[i] * k(support_vectors[i], x);
  return f;
}

// ---- normalization and models ----------------------------------------------

Normalizer Normalizer::fit(const Matrix &x) {
  if (x.empty())
    throw EmptyTrainingSet("cannot fit normalization on no rows");
  const std::size_t d = x.front().size();
  Normalizer nz;
  nz.mean.assign(d, 0.0);
  nz.scale.assign(d, 0.0);
  for (const auto &row : x) {
    if (row.size() != d)
      throw std::invalid_argument("feature rows differ in length");
    for (std::size_t j = 0; j < d; ++j)
      nz.mean[j] += row[j];
  }
  for (double &m : nz.mean)
    m /= static_cast<double>(x.size());
  for (const auto &row : x)
    for (std::size_t j = 0; j < d; ++j)
      nz.scale[j] += (row[j] - nz.mean[j]) * (row[j] - nz.mean[j]);
  for (double &s : nz.scale) {
    s = std::sqrt(s / static_cast<double>(x.size()));
    if (!(s > 1e-12))
      s = 1.0;
  }
  return nz;
}

std::vector<double> Normalizer::apply(const std::vector<double> &v) const {
  if (v.size() != mean.size())
    throw std::invalid_argument("feature vector has " + std::to_string(v.size()) +
                                " entries, model expects " + std::to_string(mean.size()));
  std::vector<double> out(v.size());
  for (std::size_t j = 0; j < v.size(); ++j)
    out[j] = (v[j] - mean[j]) / scale[j];
  return out;
}

Matrix Normalizer::apply(const Matrix &x) const {
  Matrix out;
  out.reserve(x.size());
  for (const auto &row : x)
    out.push_back(apply(row));
  return out;
}

namespace {

std::vector<std::size_t> label_indices(const std::vector<std::string> &y,
                                       const std::vector<std::string> &labels) {
  std::vector<std::size_t> out;
  out.reserve(y.size());
  for (const auto &v : y) {
    const auto it = std::find(labels.begin(), labels.end(), v);
    if (it == labels.end())
      throw std::invalid_argument("label '" + v + "' not in the label list");
    out.push_back(static_cast<std::size_t>(it - labels.begin()));
  }
  return out;
}

void check_training(const Matrix &x, const std::vector<std::string> &y,
                    const std::vector<std::string> &labels) {
  if (x.empty())
    throw EmptyTrainingSet("no training rows");
  if (x.size() != y.size())
    throw std::invalid_argument("one label per row required");
  if (labels.size() < 2)
    throw DegenerateData("classification needs at least two labels");
}

} // namespace

TrainedModel svm_train(const Matrix &x, const std::vector<std::string> &y,
                       const std::vector<std::string> &labels, const SvmParams &params) {
  check_training(x, y, labels);
  const auto idx = label_indices(y, labels);
  for (std::size_t c = 0; c < labels.size(); ++c)
    if (std::find(idx.begin(), idx.end(), c) == idx.end())
      throw DegenerateData("label '" + labels[c] + "' has no training rows");

  TrainedModel m;
  m.kind = TrainedModel::Kind::Svm;
  m.labels = labels;
  m.norm = Normalizer::fit(x);
  m.kernel = resolved(params.kernel, x.front().size());
  m.C = params.C;
  const Matrix xn = m.norm.apply(x);
  SvmParams p = params;
  p.kernel = m.kernel;

  for (std::size_t a = 0; a < labels.size(); ++a) {
    for (std::size_t b = a + 1; b < labels.size(); ++b) {
      Matrix sub;
      std::vector<int> sy;
      for (std::size_t i = 0; i < xn.size(); ++i) {
        if (idx[i] == a || idx[i] == b) {
          sub.push_back(xn[i]);
          sy.push_back(idx[i] == a ? 1 : -1);
        }
      }
      const SmoResult r = smo_solve(sub, sy, p);
      BinarySvm machine;
      machine.positive = a;
      machine.negative = b;
      machine.rho = r.rho;
      machine.kkt_gap = r.kkt_gap;
      machine.iterations = r.iterations;
      for (std::size_t i = 0; i < sub.size(); ++i) {
        if (r.alpha[i] > 0) {
          machine.support_vectors.push_back(sub[i]);
          machine.coef.push_back(r.alpha[i] * sy[i]);
        }
      }
      m.machines.push_back(std::move(machine));
    }
  }
  return m;
}

TrainedModel knn_train(const Matrix &x, const std::vector<std::string> &y,
                       const std::vector<std::string> &labels, int k) {
  check_training(x, y, labels);
  if (k != 1 && k != 3 && k != 5)
    throw std::invalid_argument("K must be 1, 3 or 5");
  if (static_cast<std::size_t>(k) > x.size())
    throw std::invalid_argument("K exceeds the training set");
  TrainedModel m;
  m.kind = TrainedModel::Kind::Knn;
  m.labels = labels;
  m.k = k;
  m.norm = Normalizer::fit(x);
  m.train_x = m.norm.apply(x);
  m.train_y = label_indices(y, labels);
  return m;
}

namespace {

struct Neighbors {
  std::vector<std::size_t> votes;
  std::size_t winner = 0;
};

Neighbors knn_votes(const Matrix &train, const std::vector<std::size_t> &labels,
                    const std::vector<double> &x, int k) {
  if (train.empty())
    throw EmptyTrainingSet("KNN has no training rows");
  if (k < 1 || static_cast<std::size_t>(k) > train.size())
    throw std::invalid_argument("K must lie in [1, training rows]");
  std::vector<std::pair<double, std::size_t>> d(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    double s = 0;
    for (std::size_t j = 0; j < x.size(); ++j)
      s += (train[i][j] - x[j]) * (train[i][j] - x[j]);
    d[i] = {s, i};
  }
  std::stable_sort(d.begin(), d.end(),
                   [](const auto &a, const auto &b) { return a.first < b.first; });
  const std::size_t classes = *std::max_element(labels.begin(), labels.end()) + 1;
  Neighbors nb;
  nb.votes.assign(classes, 0);
  std::vector<std::size_t> first_seen(classes, train.size());
  for (std::size_t r = 0; r < static_cast<std::size_t>(k); ++r) {
    const std::size_t lab = labels[d[r].second];
    ++nb.votes[lab];
    first_seen[lab] = std::min(first_seen[lab], r);
  }
  for (std::size_t c = 0; c < classes; ++c) {
    if (nb.votes[c] > nb.votes[nb.winner] ||
        (nb.votes[c] == nb.votes[nb.winner] && first_seen[c] < first_seen[nb.winner]))
      nb.winner = c;
  }
  return nb;
}

} // namespace

std::size_t knn_classify(const Matrix &train, const std::vector<std::size_t> &labels,
                         const std::vector<double> &x, int k) {
  return knn_votes(train, labels, x, k).winner;
}

std::size_t TrainedModel::predict_index(const std::vector<double> &raw) const {
  const std::vector<double> x = norm.apply(raw);
  if (kind == Kind::Knn)
    return knn_classify(train_x, train_y, x, k);
  std::vector<int> votes(labels.size(), 0);
  std::vector<double> sums(labels.size(), 0.0);
  for (const auto &m : machines) {
    const double f = m.decision(kernel, x);
    ++votes[f > 0 ? m.positive : m.negative];
    sums[m.positive] += f;
    sums[m.negative] -= f;
  }
  std::size_t best = 0;
  for (std::size_t c = 1; c < labels.size(); ++c)
    if (votes[c] > votes[best] || (votes[c] == votes[best] && sums[c] > sums[best]))
      best = c;
  return best;
}

std::string TrainedModel::predict(const std::vector<double> &x) const {
  return labels[predict_index(x)];
}

double TrainedModel::score(const std::vector<double> &raw) const {
  if (labels.size() != 2)
    throw std::logic_error("binary score needs exactly two labels");
  const std::vector<double> x = norm.apply(raw);
  if (kind == Kind::Knn) {
    const Neighbors nb = knn_votes(train_x, train_y, x, k);
    return (static_cast<double>(nb.votes[0]) - static_cast<double>(nb.votes[1])) / k;
  }
  return machines.front().decision(kernel, x);
}

// ---- serialization ---------------------------------------------------------

namespace {

void put_reals(std::ostream &out, const std::vector<double> &v) {
  for (std::size_t i = 0; i < v.size(); ++i)
    out << (i ? " " : "") << std::hexfloat << v[i] << std::defaultfloat;
}

std::string next_line(std::istream &in) {
  std::string line;
  if (!std::getline(in, line))
    throw std::invalid_argument("model file ends early");
  if (!line.empty() && line.back() == '\r')
    line.pop_back();
  return line;
}

double to_real(const std::string &tok) {
  char *end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0')
    throw std::invalid_argument("bad real '" + tok + "' in model file");
  return v;
}

std::vector<std::string> tokens(const std::string &line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  for (std::string t; in >> t;)
    out.push_back(t);
  return out;
}

std::vector<std::string> expect(std::istream &in, const std::string &key, std::size_t args) {
  auto t = tokens(next_line(in));
  if (t.empty() || t[0] != key || t.size() != args + 1)
    throw std::invalid_argument("model file: expected '" + key + "'");
  return t;
}

std::vector<double> reals(const std::vector<std::string> &t, std::size_t from) {
  std::vector<double> out;
  for (std::size_t i = from; i < t.size(); ++i)
    out.push_back(to_real(t[i]));
  return out;
}

std::size_t to_count(const std::string &s) {
  std::size_t used = 0;
  const unsigned long long v = std::stoull(s, &used);
  if (used != s.size())
    throw std::invalid_argument("bad count '" + s + "' in model file");
  return static_cast<std::size_t>(v);
}

} // namespace

void save_model(std::ostream &out, const TrainedModel &m) {
  out << "melodica-model 1\n";
  out << "kind " << (m.kind == TrainedModel::Kind::Svm ? "svm" : "knn") << '\n';
  out << "labels " << m.labels.size() << '\n';
  for (const auto &l : m.labels)
    out << l << '\n';
  out << "features " << m.feature_count() << '\n';
  out << "mean ";
  put_reals(out, m.norm.mean);
  out << "\nscale ";
  put_reals(out, m.norm.scale);
  out << '\n';
  if (m.kind == TrainedModel::Kind::Svm) {
    out << "kernel " << to_string(m.kernel.kind) << ' ';
    put_reals(out, {m.kernel.gamma, m.kernel.coef0});
    out << ' ' << m.kernel.degree << '\n';
    out << "C ";
    put_reals(out, {m.C});
    out << "\nmachines " << m.machines.size() << '\n';
    for (const auto &b : m.machines) {
      out << "machine " << b.positive << ' ' << b.negative << ' ';
      put_reals(out, {b.rho});
      out << ' ' << b.coef.size() << '\n';
      for (std::size_t i = 0; i < b.coef.size(); ++i) {
        put_reals(out, {b.coef[i]});
        out << ' ';
        put_reals(out, b.support_vectors[i]);
        out << '\n';
      }
    }
  } else {
    out << "k " << m.k << '\n';
    out << "rows " << m.train_x.size() << '\n';
    for (std::size_t i = 0; i < m.train_x.size(); ++i) {
      out << m.train_y[i] << ' ';
      put_reals(out, m.train_x[i]);
      out << '\n';
    }
  }
  out << "end\n";
}

TrainedModel load_model(std::istream &in) {
  if (next_line(in) != "melodica-model 1")
    throw std::invalid_argument("not a version 1 model file");
  TrainedModel m;
  const auto kind = expect(in, "kind", 1)[1];
  if (kind == "svm")
    m.kind = TrainedModel::Kind::Svm;
  else if (kind == "knn")
    m.kind = TrainedModel::Kind::Knn;
  else
    throw std::invalid_argument("unknown model kind " + kind);
  const std::size_t nl = to_count(expect(in, "labels", 1)[1]);
  for (std::size_t i = 0; i < nl; ++i)
    m.labels.push_back(next_line(in));
  const std::size_t d = to_count(expect(in, "features", 1)[1]);
  m.norm.mean = reals(expect(in, "mean", d), 1);
  m.norm.scale = reals(expect(in, "scale", d), 1);
  const auto row = [&](std::size_t lead) {
    auto t = tokens(next_line(in));
    if (t.size() != lead + d)
      throw std::invalid_argument("model file: row has the wrong length");
    return t;
  };
  if (m.kind == TrainedModel::Kind::Svm) {
    const auto k = expect(in, "kernel", 4);
    m.kernel.kind = kernel_from_string(k[1]);
    m.kernel.gamma = to_real(k[2]);
    m.kernel.coef0 = to_real(k[3]);
    m.kernel.degree = static_cast<int>(to_count(k[4]));
    m.C = to_real(expect(in, "C", 1)[1]);
    const std::size_t nm = to_count(expect(in, "machines", 1)[1]);
    for (std::size_t i = 0; i < nm; ++i) {
      const auto h = expect(in, "machine", 4);
      BinarySvm b;
      b.positive = to_count(h[1]);
      b.negative = to_count(h[2]);
      b.rho = to_real(h[3]);
      const std::size_t nsv = to_count(h[4]);
      if (b.positive >= nl || b.negative >= nl)
        throw std::invalid_argument("model file: machine label out of range");
      for (std::size_t s = 0; s < nsv; ++s) {
        const auto t = row(1);
        b.coef.push_back(to_real(t[0]));
        b.support_vectors.push_back(reals(t, 1));
      }
      m.machines.push_back(std::move(b));
    }
  } else {
    m.k = static_cast<int>(to_count(expect(in, "k", 1)[1]));
    const std::size_t n = to_count(expect(in, "rows", 1)[1]);
    for (std::size_t r = 0; r < n; ++r) {
      const auto t = row(1);
      const std::size_t lab = to_count(t[0]);
      if (lab >= nl)
        throw std::invalid_argument("model file: row label out of range");
      m.train_y.push_back(lab);
      m.train_x.push_back(reals(t, 1));
    }
  }
  if (next_line(in) != "end")
    throw std::invalid_argument("model file: missing end marker");
  return m;
}

// ---- evaluation ------------------------------------------------------------

std::string ClassifierSpec::describe() const {
  if (kind == TrainedModel::Kind::Knn)
    return "knn k=" + std::to_string(k);
  return std::string("svm ") + to_string(svm.kernel.kind);
}

Dataset Dataset::subset(const std::vector<std::string> &keep) const {
  Dataset out;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::find(keep.begin(), keep.end(), y[i]) != keep.end()) {
      out.x.push_back(x[i]);
      out.y.push_back(y[i]);
      out.ids.push_back(i < ids.size() ? ids[i] : std::string());
    }
  }
  return out;
}

double roc_auc(const std::vector<double> &scores, const std::vector<bool> &positive) {
  if (scores.size() != positive.size())
    throw std::invalid_argument("one label per score required");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const auto p = static_cast<double>(std::count(positive.begin(), positive.end(), true));
  const double n = static_cast<double>(positive.size()) - p;
  if (p == 0 || n == 0)
    throw std::invalid_argument("AUC needs both classes");
  double area = 0, tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    double dtp = 0, dfp = 0;
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i)
      (positive[order[i]] ? dtp : dfp) += 1;
    area += dfp * (tp + dtp / 2.0);
    tp += dtp;
    fp += dfp;
  }
  return area / (p * n);
}

Metrics evaluate(const ClassifierSpec &spec, const Dataset &all,
                 const std::vector<std::string> &labels, std::size_t folds, std::uint64_t seed) {
  if (folds < 2)
    throw std::invalid_argument("cross-validation needs at least two folds");
  const Dataset data = all.subset(labels);
  const auto idx = label_indices(data.y, labels);
  const std::size_t n = data.x.size();

  // Canonical row order so fold assignment ignores input order.
  std::vector<std::size_t> canon(n);
  std::iota(canon.begin(), canon.end(), 0);
  std::stable_sort(canon.begin(), canon.end(), [&](std::size_t a, std::size_t b) {
    if (data.x[a] != data.x[b])
      return data.x[a] < data.x[b];
    if (data.ids[a] != data.ids[b])
      return data.ids[a] < data.ids[b];
    return idx[a] < idx[b];
  });

  Rng rng(seed);
  std::vector<std::size_t> fold_of(n);
  for (std::size_t c = 0; c < labels.size(); ++c) {
    std::vector<std::size_t> members;
    for (std::size_t r : canon)
      if (idx[r] == c)
        members.push_back(r);
    if (members.size() < folds)
      throw InsufficientClassMembers("class '" + labels[c] + "' has " +
                                     std::to_string(members.size()) + " rows, fewer than " +
                                     std::to_string(folds) + " folds");
    for (std::size_t i = members.size(); i > 1; --i)
      std::swap(members[i - 1], members[rng.index(i)]);
    for (std::size_t i = 0; i < members.size(); ++i)
      fold_of[members[i]] = i % folds;
  }

  Metrics m;
  m.labels = labels;
  m.confusion.assign(labels.size(), std::vector<std::size_t>(labels.size(), 0));
  const bool binary = labels.size() == 2;
  std::vector<double> scores;
  std::vector<bool> pos;
  std::size_t correct = 0;
  for (std::size_t f = 0; f < folds; ++f) {
    Matrix tx;
    std::vector<std::string> ty;
    for (std::size_t r : canon) {
      if (fold_of[r] != f) {
        tx.push_back(data.x[r]);
        ty.push_back(data.y[r]);
      }
    }
    const TrainedModel model = spec.kind == TrainedModel::Kind::Svm
                                   ? svm_train(tx, ty, labels, spec.svm)
                                   : knn_train(tx, ty, labels, spec.k);
    for (std::size_t r : canon) {
      if (fold_of[r] != f)
        continue;
      const std::size_t pred = model.predict_index(data.x[r]);
      ++m.confusion[idx[r]][pred];
      correct += pred == idx[r];
      if (binary) {
        scores.push_back(model.score(data.x[r]));
        pos.push_back(idx[r] == 0);
      }
    }
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  if (binary) {
    m.auc = roc_auc(scores, pos);
    const double tp = static_cast<double>(m.confusion[0][0]);
    const double fp = static_cast<double>(m.confusion[1][0]);
    const double fn = static_cast<double>(m.confusion[0][1]);
    m.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    m.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  }
  return m;
}

// ---- synthetic data ----------------------------------------------------------

std::vector<double> scr_onsets(const SynthParams &p, double duration_s) {
  std::vector<double> out;
  if (p.scr_rate_per_min <= 0)
    return out;
  Rng rng(p.seed);
  const double rate = p.scr_rate_per_min / 60.0;
  for (double t = rng.exponential(rate); t < duration_s; t += rng.exponential(rate))
    out.push_back(t);
  return out;
}

EdaRecording synth_eda(const SynthParams &p, double duration_s) {
  if (!(p.tonic_level > 0 && p.scr_rate_per_min >= 0 && p.scr_amp >= 0 && p.noise >= 0 &&
        duration_s > 0 && p.conversation_s > 0))
    throw std::invalid_argument("synth_eda parameters must be positive");
  EdaRecording rec;
  rec.session_kind = "synthetic";
  const std::size_t n = static_cast<std::size_t>(std::llround(duration_s * kEdaRateHz));
  rec.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    rec.samples[i] = p.tonic_level + p.drift * static_cast<double>(i) / kEdaRateHz;

  // A pulse has decayed below 1e-8 of its amplitude after 40 s.
  constexpr double kPulseSpan = 40.0;
  for (double t0 : scr_onsets(p, duration_s)) {
    const auto first = static_cast<std::size_t>(std::ceil(t0 * kEdaRateHz));
    const auto last = std::min(n, static_cast<std::size_t>((t0 + kPulseSpan) * kEdaRateHz));
    for (std::size_t i = first; i < last; ++i) {
      const double dt = static_cast<double>(i) / kEdaRateHz - t0;
      rec.samples[i] += p.scr_amp * (std::exp(-dt / kScrTau1) - std::exp(-dt / kScrTau2));
    }
  }
  if (p.noise > 0) {
    Rng rng(p.seed ^ 0x6e6f697365ull);
    for (double &s : rec.samples)
      s += p.noise * rng.normal();
  }

  const auto convs = static_cast<std::size_t>(std::floor(duration_s / p.conversation_s + 1e-9));
  for (std::size_t c = 0; c < convs; ++c) {
    const double s = static_cast<double>(c) * p.conversation_s;
    const double third = p.conversation_s / 3.0;
    rec.annotations.push_back({s, s + p.conversation_s, p.section, std::nullopt, ""});
    rec.annotations.push_back({s, s + third, p.section, SubSegmentKind::Learn, ""});
    rec.annotations.push_back({s + third, s + 2 * third, p.section, SubSegmentKind::Play, ""});
    rec.annotations.push_back({s + 2 * third, s + p.conversation_s, p.section,
                               SubSegmentKind::Feedback, ""});
  }
  return rec;
}

Dataset build_dataset(const std::vector<EdaRecording> &recordings, const FeatureConfig &cfg) {
  Dataset d;
  for (std::size_t r = 0; r < recordings.size(); ++r) {
    for (const Segment &seg : segment_conversations(recordings[r], "rec" + std::to_string(r) + "-")) {
      const FeatureVector fv = extract_features(seg, cfg);
      d.x.push_back(fv.values);
      d.y.push_back(fv.label);
      d.ids.push_back(fv.segment_id);
    }
  }
  return d;
}

std::vector<EdaRecording> load_recordings(const std::filesystem::path &dir) {
  const std::string sidecar = ".annotations.csv";
  std::vector<std::filesystem::path> files;
  for (const auto &e : std::filesystem::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (e.is_regular_file() && e.path().extension() == ".csv" &&
        !(name.size() > sidecar.size() &&
          name.compare(name.size() - sidecar.size(), sidecar.size(), sidecar) == 0))
      files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<EdaRecording> out;
  for (const auto &f : files) {
    auto ann = f;
    ann.replace_filename(f.stem().string() + sidecar);
    if (!std::filesystem::exists(ann))
      continue;
    EdaRecording rec = read_eda_csv(f);
    rec.annotations = read_annotations_csv(ann);
    out.push_back(std::move(rec));
  }
  return out;
}

} // namespace melodica
