#include "melodica/audio.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "melodica/errors.hpp"
#include "melodica/fft.hpp"
#include "melodica/rng.hpp"

namespace melodica {

void AudioClip::validate() const {
  if (!(sample_rate > 0))
    throw std::invalid_argument("sample rate must be positive");
  for (double s : samples)
    if (!std::isfinite(s))
      throw std::invalid_argument("audio samples must be finite");
}

std::vector<double> make_window(WindowKind kind, std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (kind == WindowKind::Hann)
    for (std::size_t i = 0; i < n; ++i)
      w[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * static_cast<double>(i) / static_cast<double>(n)));
  return w;
}

Stft stft(const AudioClip &clip, std::size_t window_len, std::size_t hop, WindowKind kind) {
  if (clip.samples.empty())
    throw EmptySignal("stft of an empty clip");
  if (window_len == 0 || window_len > clip.samples.size())
    throw WindowTooLong("window of " + std::to_string(window_len) + " samples exceeds clip of " +
                        std::to_string(clip.samples.size()));
  if (hop == 0)
    throw std::invalid_argument("hop must be at least 1");

  const auto window = make_window(kind, window_len);
  const std::size_t frames = 1 + (clip.samples.size() - window_len) / hop;
  RealFft fft(window_len);
  const std::size_t bins = fft.bins();

  Stft out;
  out.values.resize(frames * bins);
  Spectrogram &s = out.spectrogram;
  s.frames = frames;
  s.bins = bins;
  s.magnitudes_sq.resize(frames * bins);
  s.window_len = window_len;
  s.hop = hop;
  s.window_kind = kind;
  s.sample_rate = clip.sample_rate;
  s.bin_hz = clip.sample_rate / static_cast<double>(window_len);

  // twiddle[m] = exp(-j 2 pi m / N)
  std::vector<std::complex<double>> twiddle(window_len);
  for (std::size_t m = 0; m < window_len; ++m) {
    const double ang = -2.0 * M_PI * static_cast<double>(m) / static_cast<double>(window_len);
    twiddle[m] = {std::cos(ang), std::sin(ang)};
  }
  std::vector<double> buf(window_len);
  for (std::size_t t = 0; t < frames; ++t) {
    const std::size_t start = t * hop;
    for (std::size_t i = 0; i < window_len; ++i)
      buf[i] = clip.samples[start + i] * window[i];
    std::span<std::complex<double>> row(out.values.data() + t * bins, bins);
    fft.forward(buf, row);
    // The FFT indexes from the frame start; shift the phase so that bin k
    // carries exp(-j 2 pi k n / N) for absolute n.
    const std::size_t shift = start % window_len;
    for (std::size_t k = 0; k < bins; ++k) {
      if (shift != 0)
        row[k] *= twiddle[(k * shift) % window_len];
      s.magnitudes_sq[t * bins + k] = std::norm(row[k]);
    }
  }
  return out;
}

double window_overlap_power(WindowKind kind, std::size_t window_len, std::size_t hop) {
  const auto w = make_window(kind, window_len);
  double sum = 0;
  for (double v : w)
    sum += v * v;
  return sum / static_cast<double>(hop);
}

double spectrogram_energy(const Spectrogram &s) {
  const std::size_t n = s.window_len;
  double total = 0;
  for (std::size_t t = 0; t < s.frames; ++t) {
    double frame = 0;
    for (std::size_t k = 0; k < s.bins; ++k) {
      const bool unpaired = (k == 0) || (n % 2 == 0 && k == n / 2);
      frame += (unpaired ? 1.0 : 2.0) * s.at(t, k);
    }
    total += frame / static_cast<double>(n);
  }
  return total;
}

void DetectionConfig::validate() const {
  if (!(band_low_hz > 0 && band_low_hz < band_high_hz))
    throw std::invalid_argument("detection band must satisfy 0 < low < high");
  if (!(energy_floor > 0 && min_note_s >= 0 && tol_ratio > 0 && min_peak_share >= 0))
    throw std::invalid_argument("detection thresholds must be positive");
  if (window_len == 0 || hop == 0 || onset_window == 0 || onset_hop == 0)
    throw std::invalid_argument("window and hop sizes must be positive");
}

namespace {

struct FrameAnalysis {
  std::vector<double> band_energy;
  std::vector<std::optional<NoteId>> note;
};

FrameAnalysis analyze_frames(const Spectrogram &s, const DetectionConfig &cfg) {
  const auto k_lo =
      std::max<std::size_t>(2, static_cast<std::size_t>(std::ceil(cfg.band_low_hz / s.bin_hz)));
  const auto k_hi = std::min(s.bins - 3,
                             static_cast<std::size_t>(std::floor(cfg.band_high_hz / s.bin_hz)));
  if (s.bins < 6 || k_lo > k_hi)
    throw std::invalid_argument("detection band does not fit the spectrum");
  FrameAnalysis fa;
  fa.band_energy.assign(s.frames, 0.0);
  fa.note.assign(s.frames, std::nullopt);
  for (std::size_t t = 0; t < s.frames; ++t) {
    double e = 0;
    std::size_t peak = k_lo;
    for (std::size_t k = k_lo; k <= k_hi; ++k) {
      e += s.at(t, k);
      if (s.at(t, k) > s.at(t, peak))
        peak = k;
    }
    fa.band_energy[t] = e;
    if (!(e > 0))
      continue;
    double near = 0;
    for (std::size_t k = peak - 2; k <= peak + 2; ++k)
      near += s.at(t, k);
    if (near / e < cfg.min_peak_share)
      continue;
    // Parabolic refinement on log power.
    const double a = std::log(s.at(t, peak - 1) + 1e-300);
    const double b = std::log(s.at(t, peak) + 1e-300);
    const double c = std::log(s.at(t, peak + 1) + 1e-300);
    const double denom = a - 2 * b + c;
    const double delta = denom < 0 ? std::clamp(0.5 * (a - c) / denom, -0.5, 0.5) : 0.0;
    fa.note[t] = nearest_note((static_cast<double>(peak) + delta) * s.bin_hz, cfg.tol_ratio);
  }
  return fa;
}

// Onset inside [begin, end) at the largest rise of short-window in-band
// energy. A rise peaks when the attack crosses the window center.
double refine_onset(const std::vector<double> &x, double fs, std::size_t begin, std::size_t end,
                    const DetectionConfig &cfg, RealFft &fft, const std::vector<double> &window) {
  const std::size_t w = cfg.onset_window;
  const std::size_t h = cfg.onset_hop;
  const double bin_hz = fs / static_cast<double>(w);
  const auto k_lo = static_cast<std::size_t>(std::ceil(cfg.band_low_hz / bin_hz));
  const auto k_hi = std::min(w / 2, static_cast<std::size_t>(std::floor(cfg.band_high_hz / bin_hz)));

  std::vector<double> buf(w);
  std::vector<std::complex<double>> spec(fft.bins());
  auto energy_at = [&](long long start) {
    for (std::size_t i = 0; i < w; ++i) {
      const long long n = start + static_cast<long long>(i);
      buf[i] = (n >= 0 && n < static_cast<long long>(x.size()))
                   ? x[static_cast<std::size_t>(n)] * window[i]
                   : 0.0;
    }
    fft.forward(buf, spec);
    double e = 0;
    for (std::size_t k = k_lo; k <= k_hi; ++k)
      e += std::norm(spec[k]);
    return e;
  };

  const long long first = static_cast<long long>(begin) - static_cast<long long>(w);
  const long long last = static_cast<long long>(end);
  double prev = energy_at(first);
  double best_rise = -1;
  long long best_start = first + static_cast<long long>(h);
  for (long long s = first + static_cast<long long>(h); s <= last; s += static_cast<long long>(h)) {
    const double e = energy_at(s);
    if (e - prev > best_rise) {
      best_rise = e - prev;
      best_start = s;
    }
    prev = e;
  }
  const double onset = static_cast<double>(best_start) + static_cast<double>(w) / 2.0 -
                       static_cast<double>(h) / 2.0;
  return std::max(0.0, onset) / fs;
}

} // namespace

std::vector<NoteEvent> detect_notes(const AudioClip &clip, const DetectionConfig &cfg) {
  cfg.validate();
  clip.validate();
  if (clip.samples.empty())
    throw EmptySignal("detect_notes on an empty clip");

  // Trailing silence lets the last note's frames run to completion.
  AudioClip padded{clip.samples, clip.sample_rate};
  padded.samples.resize(clip.samples.size() + cfg.window_len, 0.0);
  const Stft tf = stft(padded, cfg.window_len, cfg.hop, WindowKind::Hann);
  const Spectrogram &s = tf.spectrogram;
  const FrameAnalysis fa = analyze_frames(s, cfg);

  const double peak_energy = *std::max_element(fa.band_energy.begin(), fa.band_energy.end());
  if (!(peak_energy > 1e-18 * static_cast<double>(cfg.window_len)))
    return {};
  const double floor = cfg.energy_floor * peak_energy;

  struct Segment {
    NoteId note;
    std::size_t start, end;
    bool after_dip;
  };
  std::vector<Segment> segments;
  bool open = false;
  bool dipped = true;
  for (std::size_t t = 0; t < s.frames; ++t) {
    if (fa.band_energy[t] < floor) {
      if (open)
        segments.back().end = t;
      open = false;
      dipped = true;
      continue;
    }
    const auto &note = fa.note[t];
    if (!note)
      continue;
    if (open && segments.back().note == *note)
      continue;
    if (open)
      segments.back().end = t;
    segments.push_back({*note, t, s.frames, dipped});
    open = true;
    dipped = false;
  }

  // Drop short segments, then rejoin same-note neighbors that were only
  // split by a dropped one.
  const double hop_s = static_cast<double>(cfg.hop) / clip.sample_rate;
  std::vector<Segment> kept;
  bool dip_since_kept = true;
  for (const Segment &seg : segments) {
    dip_since_kept = dip_since_kept || seg.after_dip;
    if (static_cast<double>(seg.end - seg.start) * hop_s < cfg.min_note_s)
      continue;
    if (!kept.empty() && !dip_since_kept && kept.back().note == seg.note) {
      kept.back().end = seg.end;
    } else {
      kept.push_back(seg);
    }
    dip_since_kept = false;
  }

  RealFft onset_fft(cfg.onset_window);
  const auto onset_window = make_window(WindowKind::Hann, cfg.onset_window);
  std::vector<NoteEvent> events;
  events.reserve(kept.size());
  for (const Segment &seg : kept) {
    const std::size_t begin = seg.start > 0 ? (seg.start - 1) * cfg.hop : 0;
    const std::size_t end = seg.start * cfg.hop + cfg.window_len;
    double onset = refine_onset(padded.samples, clip.sample_rate, begin, end, cfg, onset_fft,
                                onset_window);
    if (!events.empty() && onset <= events.back().onset_s)
      onset = events.back().onset_s + 1.0 / clip.sample_rate;
    events.push_back({seg.note, onset});
  }
  return events;
}

std::vector<NoteId> notes_of(const std::vector<NoteEvent> &events) {
  std::vector<NoteId> out;
  out.reserve(events.size());
  for (const auto &e : events)
    out.push_back(e.note);
  return out;
}

AudioClip synthesize_melody(const Melody &melody, const Timbre &timbre) {
  melody.validate();
  if (melody.notes.empty())
    throw std::invalid_argument("cannot synthesize an empty melody");
  if (!(timbre.sample_rate > 0 && timbre.decay_tau_s > 0))
    throw std::invalid_argument("timbre needs positive sample rate and decay");
  const auto onsets = melody.resolved_onsets(timbre.lead_in_s);
  const double fs = timbre.sample_rate;
  const double end_s = std::max(0.0, onsets.back()) + timbre.tail_s;
  AudioClip clip;
  clip.sample_rate = fs;
  clip.samples.assign(static_cast<std::size_t>(std::ceil(end_s * fs)), 0.0);

  // Tones are cut once they have decayed by 20 time constants (below 1e-8).
  // Each tone is Im(A z^n) advanced by complex multiplication and re-anchored
  // from the closed form every block to bound rounding drift.
  const double span_s = 20.0 * timbre.decay_tau_s;
  constexpr std::size_t kAnchor = 1024;
  for (std::size_t i = 0; i < melody.notes.size(); ++i) {
    const double f = note_frequency(melody.notes[i]);
    const double onset = onsets[i];
    const auto first = static_cast<std::size_t>(std::max(0.0, std::ceil(onset * fs)));
    const auto last = std::min(clip.samples.size(),
                               static_cast<std::size_t>(std::ceil((onset + span_s) * fs)));
    const std::complex<double> step =
        std::exp(std::complex<double>(-1.0 / (timbre.decay_tau_s * fs), 2.0 * M_PI * f / fs));
    std::complex<double> z;
    for (std::size_t n = first; n < last; ++n) {
      if ((n - first) % kAnchor == 0) {
        const double t = static_cast<double>(n) / fs - onset;
        z = timbre.amplitude * std::exp(std::complex<double>(-t / timbre.decay_tau_s, 2.0 * M_PI * f * t));
      }
      clip.samples[n] += z.imag();
      z *= step;
    }
  }
  if (timbre.noise_rms > 0) {
    Rng rng(timbre.seed);
    for (double &v : clip.samples)
      v += timbre.noise_rms * rng.normal();
  }
  double peak = 0;
  for (double v : clip.samples)
    peak = std::max(peak, std::abs(v));
  if (peak > 1.0)
    for (double &v : clip.samples)
      v /= peak;
  return clip;
}

} // namespace melodica
