#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "symdiff/midi.hpp"

namespace symdiff {

using Token = std::uint16_t;

inline constexpr int kStepsPerBar = 16;

// Melody and bass tracks: tokens 0..87 are MIDI pitches 21..108 in ascending
// order, followed by note-off and hold. The absorbing mask state is the
// first index past the vocabulary.
struct PitchVocab {
  static constexpr int kPitchLo = 21;
  static constexpr int kPitchHi = 108;
  static constexpr int kPitchCount = kPitchHi - kPitchLo + 1;
  static constexpr Token kNoteOff = kPitchCount;
  static constexpr Token kHold = kPitchCount + 1;
  static constexpr int kSize = kPitchCount + 2;
  static constexpr Token kMask = kSize;

  static constexpr bool is_pitch(Token t) { return t < kPitchCount; }
  static constexpr bool in_range(int midi) { return midi >= kPitchLo && midi <= kPitchHi; }
  static constexpr Token from_midi(int midi) { return static_cast<Token>(midi - kPitchLo); }
  static constexpr int to_midi(Token t) { return static_cast<int>(t) + kPitchLo; }
};
static_assert(PitchVocab::kSize == 90 && PitchVocab::kMask == 90);

// Drum track: one token per step, bit i set when drum class i has an onset.
struct DrumVocab {
  static constexpr int kClasses = 9;
  static constexpr int kSize = 1 << kClasses;
  static constexpr Token kMask = kSize;

  // Bit index for a GM drum note, or -1 when the note is not in any class.
  static int bit_for_note(int midi_note);
  // Representative GM note written on export for each bit.
  static int canonical_note(int bit);
  static std::span<const int> class_notes(int bit);
};
static_assert(DrumVocab::kSize == 512);

enum class TrackRole : std::uint8_t { kMelody, kBass, kDrums };

std::string_view to_string(TrackRole role);

// Fixed grid of categorical tokens, step-major and track-minor. One track is a
// melody piece; three tracks are a trio (melody, bass, drums).
class TokenSequence {
 public:
  TokenSequence() = default;
  // Filled with explicit silence (note-off then holds; drum token 0).
  TokenSequence(int tracks, int steps, int steps_per_bar = kStepsPerBar);

  static TokenSequence all_masked(int tracks, int steps, int steps_per_bar = kStepsPerBar);

  int tracks() const { return tracks_; }
  int steps() const { return steps_; }
  int steps_per_bar() const { return steps_per_bar_; }
  int bars() const { return steps_ / steps_per_bar_; }
  std::size_t size() const { return values_.size(); }
  bool is_trio() const { return tracks_ == 3; }

  Token at(int step, int track) const { return values_[index(step, track)]; }
  void set(int step, int track, Token value) { values_[index(step, track)] = value; }
  std::size_t index(int step, int track) const {
    return static_cast<std::size_t>(step) * static_cast<std::size_t>(tracks_) +
           static_cast<std::size_t>(track);
  }

  std::span<const Token> values() const { return values_; }
  std::span<Token> values() { return values_; }

  TrackRole role(int track) const;
  int vocab_size(int track) const;
  Token mask_id(int track) const { return static_cast<Token>(vocab_size(track)); }
  bool is_masked(int step, int track) const { return at(step, track) == mask_id(track); }
  bool has_masks() const;
  std::size_t count_masks() const;

  // Throws when any value exceeds its track's mask id, or the shape is bad.
  void validate(bool allow_masks) const;

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;

 private:
  int tracks_ = 0;
  int steps_ = 0;
  int steps_per_bar_ = kStepsPerBar;
  std::vector<Token> values_;
};

// Decoded note used by metrics and MIDI export.
struct NoteEvent {
  int pitch = 0;
  int onset_step = 0;
  int duration_steps = 1;
  int track = 0;

  friend bool operator==(const NoteEvent&, const NoteEvent&) = default;
};

// Counts of input notes that could not be represented.
struct SkipReport {
  int pitch_out_of_range = 0;
  int unmapped_drum = 0;
  int outside_window = 0;

  SkipReport& operator+=(const SkipReport& o) {
    pitch_out_of_range += o.pitch_out_of_range;
    unmapped_drum += o.unmapped_drum;
    outside_window += o.outside_window;
    return *this;
  }
};

// GM program -> melodic role. The drum channel always maps to drums.
struct ProgramMap {
  std::array<TrackRole, 128> roles{};

  // Programs 33..40 (GM bass family, 0-based 32..39) are bass; all others melody.
  static ProgramMap general_midi();
  TrackRole role_of(int channel, int program) const;
};

// Monophonic melody from every non-drum note starting in [start_step, start_step + steps).
// Later onsets cut sounding notes; simultaneous onsets resolve to the highest
// pitch, then to the later event.
TokenSequence extract_melody(std::span<const RawNote> events, int steps, int start_step = 0,
                             SkipReport* skipped = nullptr, int steps_per_bar = kStepsPerBar);

// Three-track piece. Throws Error(kUnsupported) naming the missing role when a
// role has neither notes nor a program declaration in `midi`.
TokenSequence extract_trio(const ParsedMidi& midi, const ProgramMap& program_map, int steps,
                           int start_step = 0, SkipReport* skipped = nullptr);

std::vector<NoteEvent> decode_notes(const TokenSequence& seq);
std::vector<NoteEvent> decode_track(const TokenSequence& seq, int track);

std::vector<std::uint8_t> export_midi(const TokenSequence& seq, double tempo_bpm = 120.0,
                                      int ticks_per_quarter = 480);

TokenSequence transpose_augment(const TokenSequence& seq, int semitones);

// Rewrites redundant silence tokens so that decode/encode is a fixed point:
// a note-off only follows a sounding note (or opens the piece), every other
// silent step is a hold.
TokenSequence canonicalize(const TokenSequence& seq);
bool is_canonical(const TokenSequence& seq);

// Binary token container: per record a 16-byte little-endian header
// (magic "SDTK", u16 version, u16 tracks, u32 steps, u16 steps_per_bar,
// u16 reserved) followed by steps*tracks u16 values. Files hold one or more
// records back to back.
inline constexpr std::uint16_t kTokenFormatVersion = 1;

std::vector<std::uint8_t> encode_tokens(std::span<const TokenSequence> pieces);
std::vector<TokenSequence> decode_tokens(std::span<const std::uint8_t> bytes);
void write_token_file(const std::filesystem::path& path, std::span<const TokenSequence> pieces);
std::vector<TokenSequence> read_token_file(const std::filesystem::path& path);

std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path);
void write_binary_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace symdiff
