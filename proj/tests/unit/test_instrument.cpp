#include <doctest.h>

#include <cmath>

#include "melodica/errors.hpp"
#include "melodica/instrument.hpp"

using namespace melodica;

namespace {

// C major degrees from C6 written out by hand, then equal temperament.
constexpr int kMidi[] = {84, 86, 88, 89, 91, 93, 95, 96, 98, 100, 101};

double oracle_freq(int note) { return 440.0 * std::pow(2.0, (kMidi[note - 1] - 69) / 12.0); }

std::vector<NoteId> ids(std::initializer_list<int> v) {
  std::vector<NoteId> out;
  for (int x : v)
    out.emplace_back(x);
  return out;
}

} // namespace

TEST_SUITE("instrument") {
  TEST_CASE("bar frequencies follow equal temperament from C6") {
    CHECK(note_frequency(NoteId(1)) == doctest::Approx(1046.50).epsilon(1e-5));
    CHECK(note_frequency(NoteId(5)) == doctest::Approx(1567.98).epsilon(1e-5));
    CHECK(note_frequency(NoteId(11)) == doctest::Approx(2793.83).epsilon(1e-5));
    for (int n = 1; n <= 11; ++n)
      CHECK(note_frequency(NoteId(n)) == doctest::Approx(oracle_freq(n)).epsilon(1e-12));
  }

  TEST_CASE("nearest_note") {
    CHECK(nearest_note(1046.5) == NoteId(1));
    CHECK(nearest_note(1570.0) == NoteId(5));
    CHECK_FALSE(nearest_note(500.0).has_value());
    // Just inside and just outside the tolerance around G6.
    const double g = oracle_freq(5);
    CHECK(nearest_note(g * 1.029) == NoteId(5));
    CHECK_FALSE(nearest_note(g * 1.031, 0.03).has_value());
  }

  TEST_CASE("hex melodies") {
    const Melody m = parse_hex_melody("1155665");
    CHECK(m.notes == ids({1, 1, 5, 5, 6, 6, 5}));
    CHECK(parse_hex_melody("b").notes == ids({11}));
    CHECK(parse_hex_melody("B").notes == ids({11}));
    try {
      parse_hex_melody("10");
      FAIL("expected InvalidDigit");
    } catch (const InvalidDigit &e) {
      CHECK(e.position() == 1);
    }
    CHECK_THROWS_AS(parse_hex_melody("c"), InvalidDigit);
    CHECK(m.to_hex() == "1155665");
    for (int n = 1; n <= 11; ++n)
      CHECK(NoteId::from_hex(NoteId(n).to_hex()) == NoteId(n));
    CHECK_THROWS_AS(NoteId(0), std::out_of_range);
    CHECK_THROWS_AS(NoteId(12), std::out_of_range);
  }

  TEST_CASE("resolved onsets follow the tempo") {
    Melody m = parse_hex_melody("15", 60.0);
    const auto on = m.resolved_onsets(0.25);
    REQUIRE(on.size() == 2);
    CHECK(on[0] == doctest::Approx(0.25));
    CHECK(on[1] == doctest::Approx(1.25));
    m.onsets_s = std::vector<double>{0.0, 0.0};
    CHECK_THROWS_AS(m.validate(), std::invalid_argument);
  }

  TEST_CASE("standard model") {
    const XylophoneModel x = XylophoneModel::standard();
    REQUIRE(x.bars().size() == 11);
    CHECK(x.reference_bar().note == NoteId(6));
    const Rgb blue = x.reference_bar().color;
    CHECK(blue.b > 200);
    CHECK(blue.r < 40);
    for (std::size_t i = 1; i < x.bars().size(); ++i) {
      CHECK(x.bars()[i].center.x > x.bars()[i - 1].center.x);
      CHECK(x.bars()[i].length_cm < x.bars()[i - 1].length_cm);
    }
    const XylophoneModel back = XylophoneModel::from_json(x.to_json());
    CHECK(back.to_json() == x.to_json());
  }
}
