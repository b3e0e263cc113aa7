#include <doctest.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "symdiff/error.hpp"
#include "symdiff/midi.hpp"
#include "symdiff/token_model.hpp"

using namespace symdiff;
using testing::RawEvent;

namespace {

std::vector<Token> track_values(const TokenSequence& seq, int track) {
  std::vector<Token> out;
  for (int s = 0; s < seq.steps(); ++s) out.push_back(seq.at(s, track));
  return out;
}

TokenSequence melody_from_midi(const std::vector<std::uint8_t>& bytes, int steps) {
  const ParsedMidi m = parse_midi(bytes);
  return extract_melody(m.notes, steps);
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an exception");
  return ErrorKind::kParse;
}

}  // namespace

TEST_CASE("vocabulary layout") {
  CHECK(PitchVocab::kSize == 90);
  CHECK(PitchVocab::kNoteOff == 88);
  CHECK(PitchVocab::kHold == 89);
  CHECK(PitchVocab::kMask == 90);
  CHECK(PitchVocab::from_midi(60) == 39);
  CHECK(DrumVocab::kSize == 512);
  CHECK(DrumVocab::kMask == 512);
  CHECK(DrumVocab::bit_for_note(36) == 0);
  CHECK(DrumVocab::bit_for_note(35) == 0);
  CHECK(DrumVocab::bit_for_note(38) == 1);
  CHECK(DrumVocab::bit_for_note(42) == 2);
  CHECK(DrumVocab::bit_for_note(46) == 3);
  CHECK(DrumVocab::bit_for_note(59) == 8);
  CHECK(DrumVocab::bit_for_note(60) == -1);
}

TEST_CASE("single quarter note parses to four steps") {
  const auto bytes = testing::handmade_midi(480, {{{0, 0x90, 60, 100}, {480, 0x80, 60, 0}}});
  const ParsedMidi m = parse_midi(bytes);
  REQUIRE(m.notes.size() == 1);
  CHECK(m.notes[0].pitch == 60);
  CHECK(m.notes[0].onset_step == 0);
  CHECK(m.notes[0].duration_steps == 4);
}

TEST_CASE("empty file parses to no events") {
  const auto bytes = testing::handmade_midi(480, {});
  CHECK(parse_midi(bytes).notes.empty());
}

TEST_CASE("grid is musical time whatever the tempo") {
  std::vector<RawEvent> events{{0, 0x90, 60, 100}, {480, 0x80, 60, 0}, {960, 0x90, 62, 100}, {1440, 0x80, 62, 0}};
  auto bytes = testing::handmade_midi(480, {events}, 4, 2, 1000000);
  const ParsedMidi m = parse_midi(bytes);
  REQUIRE(m.notes.size() == 2);
  CHECK(m.notes[1].onset_step == 8);
  CHECK(m.notes[1].duration_steps == 4);
}

TEST_CASE("off-grid onsets snap to the nearest step") {
  // 96 ppq: one step is 24 ticks. Tick 35 rounds to step 1, tick 37 to step 2,
  // and a 5-tick note still occupies one step.
  const ParsedMidi m = parse_midi(testing::handmade_midi(
      96, {{{35, 0x90, 60, 100}, {40, 0x80, 60, 0}, {37 + 96, 0x90, 62, 100}, {37 + 96 + 48, 0x80, 62, 0}}}));
  REQUIRE(m.notes.size() == 2);
  CHECK(m.notes[0].onset_step == 1);
  CHECK(m.notes[0].duration_steps == 1);
  CHECK(m.notes[1].onset_step == 6);
  CHECK(m.notes[1].duration_steps == 2);
}

TEST_CASE("3/4 and format 2 files are rejected") {
  const auto three_four = testing::handmade_midi(480, {{{0, 0x90, 60, 100}, {480, 0x80, 60, 0}}}, 3, 2);
  CHECK(kind_of([&] { parse_midi(three_four); }) == ErrorKind::kUnsupported);

  auto format2 = testing::handmade_midi(480, {});
  format2[9] = 2;
  CHECK(kind_of([&] { parse_midi(format2); }) == ErrorKind::kUnsupported);
}

TEST_CASE("malformed chunks report byte offsets") {
  auto bytes = testing::handmade_midi(480, {{{0, 0x90, 60, 100}, {480, 0x80, 60, 0}}});
  SUBCASE("bad magic") {
    bytes[0] = 'X';
    try {
      parse_midi(bytes);
      FAIL("no error");
    } catch (const ParseError& e) {
      CHECK(e.offset() == 0);
    }
  }
  SUBCASE("truncated") {
    bytes.resize(bytes.size() - 3);
    CHECK_THROWS_AS(parse_midi(bytes), ParseError);
  }
  SUBCASE("too short") {
    bytes.resize(10);
    CHECK_THROWS_AS(parse_midi(bytes), ParseError);
  }
}

TEST_CASE("extract_melody encodes onset, hold and release") {
  const auto seq = melody_from_midi(testing::handmade_midi(480, {{{0, 0x90, 60, 100}, {480, 0x80, 60, 0}}}), 16);
  std::vector<Token> expected{39, 89, 89, 89, 88};
  expected.resize(16, 89);
  CHECK(track_values(seq, 0) == expected);
}

TEST_CASE("empty bar is explicit silence and exports no notes") {
  const TokenSequence seq(1, 16);
  std::vector<Token> expected{88};
  expected.resize(16, 89);
  CHECK(track_values(seq, 0) == expected);
  CHECK(parse_midi(export_midi(seq)).notes.empty());
}

TEST_CASE("simultaneous onsets keep the higher pitch") {
  const auto seq = melody_from_midi(
      testing::handmade_midi(480, {{{0, 0x90, 60, 100}, {0, 0x90, 64, 100}, {480, 0x80, 60, 0}, {480, 0x80, 64, 0}}}),
      16);
  CHECK(seq.at(0, 0) == PitchVocab::from_midi(64));
}

TEST_CASE("later onset cuts a sounding note") {
  const auto seq = melody_from_midi(
      testing::handmade_midi(480, {{{0, 0x90, 72, 100}, {240, 0x90, 60, 100}, {960, 0x80, 72, 0}, {960, 0x80, 60, 0}}}),
      16);
  CHECK(seq.at(0, 0) == PitchVocab::from_midi(72));
  CHECK(seq.at(2, 0) == PitchVocab::from_midi(60));
  CHECK(seq.at(8, 0) == PitchVocab::kNoteOff);
}

TEST_CASE("out-of-range pitches are skipped and counted") {
  const ParsedMidi m = parse_midi(testing::handmade_midi(480, {{{0, 0x90, 110, 100}, {480, 0x80, 110, 0}}}));
  SkipReport skipped;
  const auto seq = extract_melody(m.notes, 16, 0, &skipped);
  CHECK(skipped.pitch_out_of_range == 1);
  CHECK(seq == TokenSequence(1, 16));
}

TEST_CASE("extract_trio places roles and drum bits") {
  const auto bytes = testing::handmade_midi(
      480, {{{0, 0xc0, 0, 0}, {0, 0x90, 60, 100}, {480, 0x80, 60, 0}},
            {{0, 0xc1, 33, 0}, {0, 0x91, 33, 100}, {480, 0x81, 33, 0}},
            {{0, 0x99, 36, 100}, {0, 0x99, 38, 100}, {60, 0x89, 36, 0}, {60, 0x89, 38, 0}}});
  const ParsedMidi m = parse_midi(bytes);
  const auto seq = extract_trio(m, ProgramMap::general_midi(), 16);
  CHECK(seq.at(0, 0) == 39);
  CHECK(seq.at(0, 1) == 12);
  CHECK(seq.at(0, 2) == 3);
  CHECK(seq.at(1, 2) == 0);

  SUBCASE("export round-trips") {
    const ParsedMidi again = parse_midi(export_midi(seq));
    CHECK(extract_trio(again, ProgramMap::general_midi(), 16) == seq);
  }
}

TEST_CASE("trio without bass is rejected") {
  const auto bytes = testing::handmade_midi(480, {{{0, 0x90, 60, 100}, {480, 0x80, 60, 0}},
                                                  {{0, 0x99, 36, 100}, {60, 0x89, 36, 0}}});
  CHECK(kind_of([&] { extract_trio(parse_midi(bytes), ProgramMap::general_midi(), 16); }) == ErrorKind::kUnsupported);
}

TEST_CASE("export refuses masked pieces") {
  const auto seq = TokenSequence::all_masked(1, 16);
  CHECK(kind_of([&] { export_midi(seq); }) == ErrorKind::kInvalidArgument);
}

TEST_CASE("transposition") {
  TokenSequence seq(1, 16);
  seq.set(0, 0, 39);
  CHECK(transpose_augment(seq, 0) == seq);
  CHECK(transpose_augment(seq, 2).at(0, 0) == 41);
  CHECK(transpose_augment(seq, 2).at(1, 0) == PitchVocab::kHold);
  seq.set(4, 0, 87);
  CHECK(kind_of([&] { transpose_augment(seq, 1); }) == ErrorKind::kOutOfRange);

  SUBCASE("drums untouched and inverse holds") {
    for (std::uint64_t k = 0; k < 20; ++k) {
      const auto trio = testing::random_trio(64, k);
      const auto up = transpose_augment(trio, 5);
      for (int s = 0; s < 64; ++s) CHECK(up.at(s, 2) == trio.at(s, 2));
      CHECK(transpose_augment(up, -5) == trio);
    }
  }
}

TEST_CASE("round trip of canonical sequences is exact") {
  for (std::uint64_t k = 0; k < 30; ++k) {
    const auto melody = testing::varied_melodies(1, 8, k).front();
    REQUIRE(is_canonical(melody));
    CHECK(melody_from_midi(export_midi(melody), melody.steps()) == melody);

    const auto trio = testing::random_trio(128, k);
    REQUIRE(is_canonical(trio));
    CHECK(extract_trio(parse_midi(export_midi(trio)), ProgramMap::general_midi(), 128) == trio);
  }
}

TEST_CASE("canonicalize rewrites redundant note-offs only") {
  TokenSequence seq(1, 16);
  seq.set(3, 0, PitchVocab::kNoteOff);  // note-off while already silent
  CHECK_FALSE(is_canonical(seq));
  const auto fixed = canonicalize(seq);
  CHECK(fixed.at(3, 0) == PitchVocab::kHold);
  CHECK(fixed == TokenSequence(1, 16));
  // Both decode to the same (empty) note list.
  CHECK(decode_notes(seq) == decode_notes(fixed));
}

TEST_CASE("token file format") {
  std::vector<TokenSequence> pieces = testing::varied_melodies(3, 4, 1);
  pieces.push_back(testing::random_trio(32, 2));
  pieces.push_back(TokenSequence::all_masked(1, 16));
  const auto bytes = encode_tokens(pieces);
  CHECK(bytes.size() == 3 * (16 + 2 * 64) + (16 + 2 * 96) + (16 + 2 * 16));
  CHECK(bytes[0] == 'S');
  CHECK(bytes[4] == 1);  // version, little-endian
  CHECK(bytes[6] == 1);  // tracks
  CHECK(bytes[8] == 64);  // steps
  CHECK(bytes[12] == 16);  // steps per bar
  CHECK(decode_tokens(bytes) == pieces);

  SUBCASE("truncation") {
    auto cut = bytes;
    cut.pop_back();
    CHECK_THROWS_AS(decode_tokens(cut), ParseError);
  }
  SUBCASE("version") {
    auto bad = bytes;
    bad[4] = 9;
    CHECK(kind_of([&] { decode_tokens(bad); }) == ErrorKind::kVersionMismatch);
  }
  SUBCASE("value above mask id") {
    auto bad = bytes;
    bad[16] = 91;
    bad[17] = 0;
    CHECK_THROWS_AS(decode_tokens(bad), ParseError);
  }
}

TEST_CASE("validate rejects out-of-vocabulary tokens") {
  TokenSequence seq(1, 16);
  seq.set(2, 0, PitchVocab::kMask);
  CHECK_NOTHROW(seq.validate(true));
  CHECK_THROWS(seq.validate(false));
  seq.set(2, 0, 91);
  CHECK_THROWS(seq.validate(true));
}

TEST_CASE("messy files tokenize to valid canonical pieces") {
  for (std::uint64_t k = 0; k < 10; ++k) {
    const ParsedMidi m = parse_midi(testing::messy_midi(k, true));
    const auto melody = extract_melody(m.notes, 256);
    CHECK(is_canonical(melody));
    CHECK_NOTHROW(melody.validate(false));
    const auto trio = extract_trio(m, ProgramMap::general_midi(), 256);
    CHECK(is_canonical(trio));
  }
}
