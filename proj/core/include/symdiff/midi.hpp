#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace symdiff {

inline constexpr int kDrumChannel = 9;

// A note after tempo-aware quantization onto the step grid.
struct RawNote {
  int pitch = 0;
  int velocity = 0;
  int channel = 0;
  int program = 0;       // GM program active on `channel` at the onset
  int source_track = 0;  // MTrk chunk index
  int onset_step = 0;
  int duration_steps = 1;
  int order = 0;  // position in file order, used for deterministic tie breaks
};

struct ProgramChange {
  int channel = 0;
  int program = 0;
};

struct ParsedMidi {
  int format = 0;
  int ticks_per_quarter = 0;  // 0 for SMPTE-timed files
  double initial_tempo_bpm = 120.0;
  int steps_per_bar = 16;
  std::vector<RawNote> notes;
  std::vector<ProgramChange> programs;  // every program change seen, file order
  bool drum_channel_declared = false;   // any event at all on channel 10

  // First step after the last note release, 0 if there are no notes.
  int end_step() const;
};

// Parses a format 0 or 1 Standard MIDI File and quantizes notes to a
// 4/4 grid with `steps_per_bar` steps per bar (nearest neighbor).
//
// Throws ParseError (with byte offset) on malformed chunks and
// Error(kUnsupported) for format 2 files or any time signature other than 4/4.
ParsedMidi parse_midi(std::span<const std::uint8_t> bytes, int steps_per_bar = 16);

// Minimal format 1 writer. Events added to a track at the same tick keep
// their insertion order.
class MidiWriter {
 public:
  explicit MidiWriter(int ticks_per_quarter = 480);

  int ticks_per_quarter() const { return ticks_per_quarter_; }

  // Returns the index of the new track.
  int add_track();
  void tempo(int track, std::uint32_t tick, double bpm);
  void time_signature(int track, std::uint32_t tick, int numerator, int denominator);
  void program_change(int track, std::uint32_t tick, int channel, int program);
  void note_on(int track, std::uint32_t tick, int channel, int pitch, int velocity);
  void note_off(int track, std::uint32_t tick, int channel, int pitch);

  std::vector<std::uint8_t> bytes() const;

 private:
  struct Event {
    std::uint32_t tick;
    std::uint32_t seq;
    std::vector<std::uint8_t> data;
  };
  void push(int track, std::uint32_t tick, std::vector<std::uint8_t> data);

  int ticks_per_quarter_;
  std::uint32_t next_seq_ = 0;
  std::vector<std::vector<Event>> tracks_;
};

}  // namespace symdiff
