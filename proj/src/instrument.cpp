#include "melodica/instrument.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "melodica/errors.hpp"

namespace melodica {

namespace {

struct Degree {
  const char *name;
  int midi;
};

// Eleven consecutive C-major degrees starting at C6.
constexpr std::array<Degree, 11> kDegrees{{{"C6", 84},
                                           {"D6", 86},
                                           {"E6", 88},
                                           {"F6", 89},
                                           {"G6", 91},
                                           {"A6", 93},
                                           {"B6", 95},
                                           {"C7", 96},
                                           {"D7", 98},
                                           {"E7", 100},
                                           {"F7", 101}}};

constexpr std::array<Rgb, 11> kPalette{{{225, 30, 35},
                                        {245, 135, 25},
                                        {240, 215, 35},
                                        {140, 205, 45},
                                        {35, 165, 70},
                                        {0, 0, 255},
                                        {150, 45, 200},
                                        {230, 60, 160},
                                        {200, 35, 30},
                                        {240, 150, 40},
                                        {235, 225, 60}}};

constexpr double kA4 = 440.0;

double midi_to_hz(int midi) { return kA4 * std::pow(2.0, (midi - 69) / 12.0); }

nlohmann::json rgb_json(Rgb c) { return {c.r, c.g, c.b}; }

Rgb rgb_from(const nlohmann::json &j) {
  auto chan = [&](std::size_t i) {
    int v = j.at(i).get<int>();
    if (v < 0 || v > 255)
      throw std::invalid_argument("color channel outside [0,255]");
    return static_cast<std::uint8_t>(v);
  };
  return {chan(0), chan(1), chan(2)};
}

} // namespace

NoteId::NoteId(int value) : value_(value) {
  if (value < kMin || value > kMax)
    throw std::out_of_range("note id " + std::to_string(value) + " outside [1,11]");
}

NoteId NoteId::from_hex(char digit) {
  if (digit >= '1' && digit <= '9')
    return NoteId(digit - '0');
  if (digit == 'a' || digit == 'A')
    return NoteId(10);
  if (digit == 'b' || digit == 'B')
    return NoteId(11);
  throw InvalidDigit(0);
}

char NoteId::to_hex() const noexcept {
  return value_ <= 9 ? static_cast<char>('0' + value_) : static_cast<char>('a' + value_ - 10);
}

bool Bar::contains(double x, double y) const noexcept {
  return std::abs(x - center.x) <= width_cm / 2 && std::abs(y - center.y) <= length_cm / 2;
}

XylophoneModel XylophoneModel::standard(double stand_height_cm) {
  const Box body{};
  std::vector<Bar> bars;
  bars.reserve(kDegrees.size());
  const double pitch = body.length_cm / static_cast<double>(kDegrees.size());
  for (std::size_t i = 0; i < kDegrees.size(); ++i) {
    Bar b;
    b.note = NoteId(static_cast<int>(i) + 1);
    b.pitch_name = kDegrees[i].name;
    b.midi = kDegrees[i].midi;
    b.frequency_hz = midi_to_hz(b.midi);
    b.color = kPalette[i];
    b.width_cm = 2.0;
    b.length_cm = 4.8 - 2.0 * static_cast<double>(i) / 10.0;
    b.center = {-body.length_cm / 2 + pitch * (static_cast<double>(i) + 0.5), 0.0,
                body.height_cm};
    b.reference = (i == 5);
    bars.push_back(std::move(b));
  }
  return XylophoneModel(std::move(bars), body, stand_height_cm);
}

XylophoneModel::XylophoneModel(std::vector<Bar> bars, Box body, double stand_height_cm,
                               double bar_thickness_cm, Rgb body_color)
    : bars_(std::move(bars)), body_(body), stand_height_cm_(stand_height_cm),
      bar_thickness_cm_(bar_thickness_cm), body_color_(body_color) {
  if (bars_.size() != 11)
    throw std::invalid_argument("instrument must have 11 bars");
  int references = 0;
  for (std::size_t i = 0; i < bars_.size(); ++i) {
    const Bar &b = bars_[i];
    if (b.note.value() != static_cast<int>(i) + 1)
      throw std::invalid_argument("bars must be ordered by note");
    if (i > 0 && !(b.frequency_hz > bars_[i - 1].frequency_hz))
      throw std::invalid_argument("bar frequencies must strictly increase");
    if (std::abs(b.center.x) + b.width_cm / 2 > body_.length_cm / 2 + 1e-9 ||
        std::abs(b.center.y) + b.length_cm / 2 > body_.depth_cm / 2 + 1e-9)
      throw std::invalid_argument("bar " + std::to_string(i + 1) + " outside body footprint");
    references += b.reference ? 1 : 0;
  }
  if (references != 1 || !bars_[5].reference)
    throw std::invalid_argument("bar 6 must be the single reference bar");
}

const Bar &XylophoneModel::reference_bar() const { return bars_[5]; }

nlohmann::json XylophoneModel::to_json() const {
  nlohmann::json bars = nlohmann::json::array();
  for (const Bar &b : bars_) {
    bars.push_back({{"note", std::string(1, b.note.to_hex())},
                    {"pitch", b.pitch_name},
                    {"midi", b.midi},
                    {"freq_hz", b.frequency_hz},
                    {"color", rgb_json(b.color)},
                    {"width_cm", b.width_cm},
                    {"length_cm", b.length_cm},
                    {"center_cm", {b.center.x, b.center.y, b.center.z}},
                    {"reference", b.reference}});
  }
  return {{"bars", bars},
          {"body_cm", {body_.length_cm, body_.depth_cm, body_.height_cm}},
          {"body_color", rgb_json(body_color_)},
          {"bar_thickness_cm", bar_thickness_cm_},
          {"stand_height_cm", stand_height_cm_}};
}

XylophoneModel XylophoneModel::from_json(const nlohmann::json &j) {
  std::vector<Bar> bars;
  for (const auto &jb : j.at("bars")) {
    Bar b;
    const auto note = jb.at("note").get<std::string>();
    if (note.size() != 1)
      throw std::invalid_argument("bars[].note must be one hex digit");
    b.note = NoteId::from_hex(note[0]);
    b.pitch_name = jb.value("pitch", std::string{});
    b.midi = jb.value("midi", 0);
    b.frequency_hz = jb.at("freq_hz").get<double>();
    b.color = rgb_from(jb.at("color"));
    b.width_cm = jb.value("width_cm", 2.0);
    b.length_cm = jb.at("length_cm").get<double>();
    const auto &c = jb.at("center_cm");
    b.center = {c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>()};
    b.reference = jb.value("reference", false);
    bars.push_back(std::move(b));
  }
  const auto &bj = j.at("body_cm");
  Box body{bj.at(0).get<double>(), bj.at(1).get<double>(), bj.at(2).get<double>()};
  Rgb body_color = j.contains("body_color") ? rgb_from(j["body_color"]) : Rgb{176, 124, 72};
  return XylophoneModel(std::move(bars), body, j.value("stand_height_cm", 0.0),
                        j.value("bar_thickness_cm", 0.5), body_color);
}

std::vector<double> Melody::resolved_onsets(double offset_s) const {
  if (onsets_s)
    return *onsets_s;
  if (!(tempo_bpm > 0))
    throw std::invalid_argument("tempo must be positive");
  std::vector<double> out(notes.size());
  const double beat = 60.0 / tempo_bpm;
  for (std::size_t i = 0; i < notes.size(); ++i)
    out[i] = offset_s + static_cast<double>(i) * beat;
  return out;
}

std::string Melody::to_hex() const { return melodica::to_hex(notes); }

void Melody::validate() const {
  if (!(tempo_bpm > 0))
    throw std::invalid_argument("tempo must be positive");
  if (!onsets_s)
    return;
  if (onsets_s->size() != notes.size())
    throw std::invalid_argument("onsets and notes differ in length");
  for (std::size_t i = 1; i < onsets_s->size(); ++i)
    if (!((*onsets_s)[i] > (*onsets_s)[i - 1]))
      throw std::invalid_argument("onsets must be strictly increasing");
}

double note_frequency(NoteId n) { return midi_to_hz(kDegrees[n.index()].midi); }

std::optional<NoteId> nearest_note(double f_hz, double tol_ratio) {
  if (!(f_hz > 0))
    return std::nullopt;
  int best = 0;
  double best_ratio = 0;
  for (int i = 0; i < 11; ++i) {
    const double fb = midi_to_hz(kDegrees[static_cast<std::size_t>(i)].midi);
    const double ratio = std::abs(f_hz - fb) / fb;
    if (i == 0 || ratio < best_ratio) {
      best = i;
      best_ratio = ratio;
    }
  }
  if (best_ratio > tol_ratio)
    return std::nullopt;
  return NoteId(best + 1);
}

Melody parse_hex_melody(std::string_view s, double tempo_bpm) {
  if (s.empty())
    throw InvalidDigit(0);
  Melody m;
  m.tempo_bpm = tempo_bpm;
  m.notes.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    try {
      m.notes.push_back(NoteId::from_hex(s[i]));
    } catch (const InvalidDigit &) {
      throw InvalidDigit(i);
    }
  }
  return m;
}

std::string to_hex(const std::vector<NoteId> &notes) {
  std::string s;
  s.reserve(notes.size());
  for (NoteId n : notes)
    s.push_back(n.to_hex());
  return s;
}

} // namespace melodica
