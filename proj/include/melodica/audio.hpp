#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "melodica/instrument.hpp"

namespace melodica {

/// Mono audio. Samples are expected in [-1, 1].
struct AudioClip {
  std::vector<double> samples;
  double sample_rate = 48000.0;

  double duration_s() const noexcept {
    return static_cast<double>(samples.size()) / sample_rate;
  }
  /// Throws std::invalid_argument on a non-positive rate or non-finite samples.
  void validate() const;
};

enum class WindowKind { Hann, Rectangular };

/// Periodic window of length n.
std::vector<double> make_window(WindowKind kind, std::size_t n);

/// Squared STFT magnitudes, frames x bins, row-major.
struct Spectrogram {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<double> magnitudes_sq;
  std::size_t window_len = 0;
  std::size_t hop = 0;
  WindowKind window_kind = WindowKind::Hann;
  double sample_rate = 0;
  double bin_hz = 0;

  double at(std::size_t frame, std::size_t bin) const { return magnitudes_sq[frame * bins + bin]; }
  double frame_time_s(std::size_t frame) const {
    return static_cast<double>(frame * hop) / sample_rate;
  }
};

struct Stft {
  /// frames x bins, row-major. Phase is referenced to absolute sample index.
  std::vector<std::complex<double>> values;
  Spectrogram spectrogram;
};

/// Frame t covers samples [t*hop, t*hop + window_len); only whole frames are
/// produced. The FFT length equals the window length.
Stft stft(const AudioClip &clip, std::size_t window_len, std::size_t hop,
          WindowKind kind = WindowKind::Hann);

/// Sum over t of w[n - t*hop]^2 for an interior sample. For Hann at 75%
/// overlap this is 1.5 for every n.
double window_overlap_power(WindowKind kind, std::size_t window_len, std::size_t hop);

/// Time-domain energy recovered from a one-sided spectrogram (Parseval per
/// frame, summed over frames). Divide by window_overlap_power to compare
/// against the energy of a signal fully covered by frames.
double spectrogram_energy(const Spectrogram &s);

struct DetectionConfig {
  double band_low_hz = 900.0;
  double band_high_hz = 3100.0;
  /// Frames whose in-band energy is below this fraction of the loudest
  /// frame are treated as silence.
  double energy_floor = 0.01;
  double min_note_s = 0.08;
  double tol_ratio = 0.03;
  std::size_t window_len = 4096;
  std::size_t hop = 1024;
  /// Share of in-band energy that the peak bin and its two neighbors on
  /// either side must hold for the frame to count as a pitched note.
  double min_peak_share = 0.3;
  std::size_t onset_window = 512;
  std::size_t onset_hop = 128;

  void validate() const;
};

struct NoteEvent {
  NoteId note;
  double onset_s;
  friend bool operator==(const NoteEvent &, const NoteEvent &) = default;
};

std::vector<NoteEvent> detect_notes(const AudioClip &clip, const DetectionConfig &cfg = {});

std::vector<NoteId> notes_of(const std::vector<NoteEvent> &events);

struct Timbre {
  double decay_tau_s = 0.1;
  double amplitude = 0.8;
  double noise_rms = 0.0;
  std::uint64_t seed = 0;
  /// Silence kept after the last onset.
  double tail_s = 0.6;
  /// Offset applied when the melody has no explicit onsets.
  double lead_in_s = 0.0;
  double sample_rate = 48000.0;
};

/// Struck-bar model: each note adds amplitude * exp(-t/tau) * sin(2 pi f t)
/// from its onset, white noise is added, then the clip is scaled down if its
/// peak exceeds 1.
AudioClip synthesize_melody(const Melody &melody, const Timbre &timbre = {});

/// Reads RIFF/WAVE PCM16 with 1..4 channels and returns one channel scaled
/// by 1/32768.
AudioClip read_wav(const std::filesystem::path &path, std::size_t channel = 0);
AudioClip decode_wav(std::span<const std::uint8_t> bytes, std::size_t channel = 0);

/// Writes mono PCM16; samples are rounded and clamped to the 16-bit range.
void write_wav(const std::filesystem::path &path, const AudioClip &clip);
std::vector<std::uint8_t> encode_wav(const AudioClip &clip);

/// Multi-channel PCM16 encoder; channels must be equal length.
std::vector<std::uint8_t> encode_wav_channels(const std::vector<std::vector<double>> &channels,
                                              double sample_rate);

} // namespace melodica
