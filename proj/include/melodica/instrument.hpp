#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace melodica {

/// One bar of the glockenspiel, numbered 1..11 and written as a single
/// hexadecimal digit '1'..'b'.
class NoteId {
public:
  static constexpr int kMin = 1;
  static constexpr int kMax = 11;

  /// Throws std::out_of_range outside [1, 11].
  explicit NoteId(int value);

  /// Throws InvalidDigit(0) for anything outside '1'..'9', 'a', 'b'
  /// (upper case accepted).
  static NoteId from_hex(char digit);

  int value() const noexcept { return value_; }
  char to_hex() const noexcept;
  std::size_t index() const noexcept { return static_cast<std::size_t>(value_ - 1); }

  friend bool operator==(NoteId a, NoteId b) noexcept = default;
  friend auto operator<=>(NoteId a, NoteId b) noexcept = default;

private:
  int value_;
};

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb &, const Rgb &) = default;
};

struct Point3 {
  double x = 0, y = 0, z = 0;
};

struct Bar {
  NoteId note{1};
  std::string pitch_name;
  int midi = 0;
  double frequency_hz = 0;
  Rgb color;
  /// Extent along the instrument's length axis (cm).
  double width_cm = 2.0;
  /// Extent along the depth axis; this is the bar's playable length (cm).
  double length_cm = 0;
  /// Top-surface center in the instrument frame (cm). The frame has x along
  /// the body length (ascending pitch), y along the depth, z up, origin at
  /// the center of the body footprint.
  Point3 center;
  bool reference = false;

  bool contains(double x, double y) const noexcept;
};

struct Box {
  double length_cm = 31.0;
  double depth_cm = 9.5;
  double height_cm = 4.0;
};

/// The 11-bar diatonic instrument (C6..F7) shared by every other module.
/// Immutable once built.
class XylophoneModel {
public:
  /// The default instrument: 12-TET at A4 = 440 Hz, rainbow palette with a
  /// pure-blue center bar, bars evenly spread along the body with lengths
  /// shrinking linearly from 4.8 to 2.8 cm.
  static XylophoneModel standard(double stand_height_cm = 0.0);

  /// Validates the invariants; throws std::invalid_argument.
  XylophoneModel(std::vector<Bar> bars, Box body, double stand_height_cm,
                 double bar_thickness_cm = 0.5, Rgb body_color = {176, 124, 72});

  const std::vector<Bar> &bars() const noexcept { return bars_; }
  const Bar &bar(NoteId n) const { return bars_.at(n.index()); }
  const Box &body() const noexcept { return body_; }
  double stand_height_cm() const noexcept { return stand_height_cm_; }
  double bar_thickness_cm() const noexcept { return bar_thickness_cm_; }
  Rgb body_color() const noexcept { return body_color_; }
  /// Height of the bar tops above the footprint (cm).
  double bar_top_cm() const noexcept { return body_.height_cm; }
  const Bar &reference_bar() const;

  nlohmann::json to_json() const;
  static XylophoneModel from_json(const nlohmann::json &j);

private:
  std::vector<Bar> bars_;
  Box body_;
  double stand_height_cm_;
  double bar_thickness_cm_;
  Rgb body_color_;
};

struct Melody {
  std::vector<NoteId> notes;
  /// Seconds; when present, same length as notes and strictly increasing.
  std::optional<std::vector<double>> onsets_s;
  double tempo_bpm = 120.0;

  /// Explicit onsets when present, else i * 60 / tempo + offset_s.
  std::vector<double> resolved_onsets(double offset_s = 0.0) const;
  std::string to_hex() const;
  /// Throws std::invalid_argument on broken invariants.
  void validate() const;
};

double note_frequency(NoteId n);

/// Bar whose frequency minimizes |f - f_bar| / f_bar, if that ratio is within
/// tol_ratio. Ties go to the lower note.
std::optional<NoteId> nearest_note(double f_hz, double tol_ratio = 0.03);

Melody parse_hex_melody(std::string_view s, double tempo_bpm = 120.0);

std::string to_hex(const std::vector<NoteId> &notes);

} // namespace melodica
