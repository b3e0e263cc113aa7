#include "symdiff/token_model.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>

#include "symdiff/error.hpp"

namespace symdiff {
namespace {

// Bit order: kick, snare, closed hat, open hat, low tom, mid tom, high tom,
// crash, ride. Several GM notes collapse onto one bit.
const std::array<std::vector<int>, DrumVocab::kClasses> kDrumClasses = {{
    {36, 35},
    {38, 40},
    {42, 44},
    {46},
    {45, 41, 43},
    {48, 47},
    {50},
    {49, 57},
    {51, 59},
}};

struct Onset {
  int step;
  int pitch;
  int duration;
  int order;
};

// Writes one monophonic track into `seq` from onsets already filtered to the
// track's role and the window.
void encode_monophonic(std::vector<Onset> onsets, TokenSequence& seq, int track) {
  const int steps = seq.steps();
  std::sort(onsets.begin(), onsets.end(), [](const Onset& a, const Onset& b) {
    if (a.step != b.step) return a.step < b.step;
    if (a.pitch != b.pitch) return a.pitch < b.pitch;
    return a.order < b.order;
  });
  // Keep the last entry of every onset step: highest pitch, then latest event.
  std::vector<Onset> winners;
  for (const auto& o : onsets) {
    if (!winners.empty() && winners.back().step == o.step)
      winners.back() = o;
    else
      winners.push_back(o);
  }

  std::vector<bool> sounding(static_cast<std::size_t>(steps), false);
  for (std::size_t i = 0; i < winners.size(); ++i) {
    const auto& w = winners[i];
    int end = std::min(steps, w.step + w.duration);
    if (i + 1 < winners.size()) end = std::min(end, winners[i + 1].step);
    seq.set(w.step, track, PitchVocab::from_midi(w.pitch));
    sounding[static_cast<std::size_t>(w.step)] = true;
    for (int s = w.step + 1; s < end; ++s) {
      seq.set(s, track, PitchVocab::kHold);
      sounding[static_cast<std::size_t>(s)] = true;
    }
  }
  for (int s = 0; s < steps; ++s) {
    if (sounding[static_cast<std::size_t>(s)]) continue;
    const bool opens_silence = s == 0 || sounding[static_cast<std::size_t>(s - 1)];
    seq.set(s, track, opens_silence ? PitchVocab::kNoteOff : PitchVocab::kHold);
  }
}

void collect_melodic(std::span<const RawNote> events, int start, int steps,
                     const std::function<bool(const RawNote&)>& keep, std::vector<Onset>& out,
                     SkipReport* skipped) {
  for (const auto& e : events) {
    if (!keep(e)) continue;
    if (e.onset_step < start || e.onset_step >= start + steps) {
      if (skipped) ++skipped->outside_window;
      continue;
    }
    if (!PitchVocab::in_range(e.pitch)) {
      if (skipped) ++skipped->pitch_out_of_range;
      continue;
    }
    out.push_back({e.onset_step - start, e.pitch, e.duration_steps, e.order});
  }
}

void require_grid(int steps, int steps_per_bar) {
  if (steps_per_bar <= 0 || steps <= 0 || steps % steps_per_bar != 0)
    throw Error(ErrorKind::kInvalidArgument,
                "steps must be a positive multiple of steps_per_bar (" + std::to_string(steps) +
                    " vs " + std::to_string(steps_per_bar) + ")");
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint16_t get_u16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[at + static_cast<std::size_t>(i)];
  return v;
}

}  // namespace

int DrumVocab::bit_for_note(int midi_note) {
  for (int bit = 0; bit < kClasses; ++bit) {
    const auto& notes = kDrumClasses[static_cast<std::size_t>(bit)];
    if (std::find(notes.begin(), notes.end(), midi_note) != notes.end()) return bit;
  }
  return -1;
}

int DrumVocab::canonical_note(int bit) { return kDrumClasses.at(static_cast<std::size_t>(bit)).front(); }

std::span<const int> DrumVocab::class_notes(int bit) {
  return kDrumClasses.at(static_cast<std::size_t>(bit));
}

std::string_view to_string(TrackRole role) {
  switch (role) {
    case TrackRole::kMelody: return "melody";
    case TrackRole::kBass: return "bass";
    case TrackRole::kDrums: return "drums";
  }
  return "unknown";
}

TokenSequence::TokenSequence(int tracks, int steps, int steps_per_bar)
    : tracks_(tracks), steps_(steps), steps_per_bar_(steps_per_bar) {
  if (tracks != 1 && tracks != 3)
    throw Error(ErrorKind::kInvalidArgument, "a piece has 1 (melody) or 3 (trio) tracks");
  require_grid(steps, steps_per_bar);
  values_.assign(static_cast<std::size_t>(tracks) * static_cast<std::size_t>(steps), 0);
  for (int tr = 0; tr < tracks; ++tr) {
    if (role(tr) == TrackRole::kDrums) continue;
    for (int s = 0; s < steps; ++s) set(s, tr, s == 0 ? PitchVocab::kNoteOff : PitchVocab::kHold);
  }
}

TokenSequence TokenSequence::all_masked(int tracks, int steps, int steps_per_bar) {
  TokenSequence seq(tracks, steps, steps_per_bar);
  for (int s = 0; s < steps; ++s)
    for (int tr = 0; tr < tracks; ++tr) seq.set(s, tr, seq.mask_id(tr));
  return seq;
}

TrackRole TokenSequence::role(int track) const {
  if (tracks_ == 1) return TrackRole::kMelody;
  switch (track) {
    case 0: return TrackRole::kMelody;
    case 1: return TrackRole::kBass;
    default: return TrackRole::kDrums;
  }
}

int TokenSequence::vocab_size(int track) const {
  return role(track) == TrackRole::kDrums ? DrumVocab::kSize : PitchVocab::kSize;
}

bool TokenSequence::has_masks() const { return count_masks() > 0; }

std::size_t TokenSequence::count_masks() const {
  std::size_t n = 0;
  for (int s = 0; s < steps_; ++s)
    for (int tr = 0; tr < tracks_; ++tr) n += is_masked(s, tr) ? 1 : 0;
  return n;
}

void TokenSequence::validate(bool allow_masks) const {
  if (tracks_ != 1 && tracks_ != 3)
    throw Error(ErrorKind::kShapeMismatch, "a piece has 1 or 3 tracks");
  require_grid(steps_, steps_per_bar_);
  if (values_.size() != static_cast<std::size_t>(tracks_) * static_cast<std::size_t>(steps_))
    throw Error(ErrorKind::kShapeMismatch, "token buffer does not match steps x tracks");
  for (int s = 0; s < steps_; ++s) {
    for (int tr = 0; tr < tracks_; ++tr) {
      const int limit = allow_masks ? vocab_size(tr) : vocab_size(tr) - 1;
      if (at(s, tr) > limit)
        throw Error(ErrorKind::kOutOfRange, "token " + std::to_string(at(s, tr)) + " at step " +
                                                std::to_string(s) + ", track " + std::to_string(tr) +
                                                " exceeds the vocabulary");
    }
  }
}

ProgramMap ProgramMap::general_midi() {
  ProgramMap map;
  map.roles.fill(TrackRole::kMelody);
  for (int p = 32; p <= 39; ++p) map.roles[static_cast<std::size_t>(p)] = TrackRole::kBass;
  return map;
}

TrackRole ProgramMap::role_of(int channel, int program) const {
  if (channel == kDrumChannel) return TrackRole::kDrums;
  return roles.at(static_cast<std::size_t>(std::clamp(program, 0, 127)));
}

TokenSequence extract_melody(std::span<const RawNote> events, int steps, int start_step,
                             SkipReport* skipped, int steps_per_bar) {
  TokenSequence seq(1, steps, steps_per_bar);
  std::vector<Onset> onsets;
  collect_melodic(events, start_step, steps,
                  [](const RawNote& e) { return e.channel != kDrumChannel; }, onsets, skipped);
  encode_monophonic(std::move(onsets), seq, 0);
  return seq;
}

TokenSequence extract_trio(const ParsedMidi& midi, const ProgramMap& program_map, int steps,
                           int start_step, SkipReport* skipped) {
  std::array<bool, 3> present{false, false, false};
  for (const auto& e : midi.notes)
    present[static_cast<std::size_t>(program_map.role_of(e.channel, e.program))] = true;
  for (const auto& pc : midi.programs)
    present[static_cast<std::size_t>(program_map.role_of(pc.channel, pc.program))] = true;
  if (midi.drum_channel_declared) present[static_cast<std::size_t>(TrackRole::kDrums)] = true;
  for (int r = 0; r < 3; ++r) {
    if (!present[static_cast<std::size_t>(r)])
      throw Error(ErrorKind::kUnsupported,
                  std::string("trio rejected: no ") + std::string(to_string(TrackRole(r))) + " track");
  }

  TokenSequence seq(3, steps, midi.steps_per_bar);
  for (int tr = 0; tr < 2; ++tr) {
    const auto role = static_cast<TrackRole>(tr);
    std::vector<Onset> onsets;
    collect_melodic(
        midi.notes, start_step, steps,
        [&](const RawNote& e) { return program_map.role_of(e.channel, e.program) == role; },
        onsets, skipped);
    encode_monophonic(std::move(onsets), seq, tr);
  }
  for (const auto& e : midi.notes) {
    if (program_map.role_of(e.channel, e.program) != TrackRole::kDrums) continue;
    if (e.onset_step < start_step || e.onset_step >= start_step + steps) {
      if (skipped) ++skipped->outside_window;
      continue;
    }
    const int bit = DrumVocab::bit_for_note(e.pitch);
    if (bit < 0) {
      if (skipped) ++skipped->unmapped_drum;
      continue;
    }
    const int s = e.onset_step - start_step;
    seq.set(s, 2, static_cast<Token>(seq.at(s, 2) | (1u << bit)));
  }
  return seq;
}

std::vector<NoteEvent> decode_track(const TokenSequence& seq, int track) {
  std::vector<NoteEvent> notes;
  if (seq.role(track) == TrackRole::kDrums) {
    for (int s = 0; s < seq.steps(); ++s) {
      const Token t = seq.at(s, track);
      if (t >= DrumVocab::kMask)
        throw Error(ErrorKind::kInvalidArgument, "cannot decode a masked drum step " + std::to_string(s));
      for (int bit = 0; bit < DrumVocab::kClasses; ++bit)
        if (t & (1u << bit)) notes.push_back({DrumVocab::canonical_note(bit), s, 1, track});
    }
    return notes;
  }
  int open = -1;
  for (int s = 0; s < seq.steps(); ++s) {
    const Token t = seq.at(s, track);
    if (t >= PitchVocab::kMask)
      throw Error(ErrorKind::kInvalidArgument, "cannot decode a masked step " + std::to_string(s));
    if (PitchVocab::is_pitch(t) || t == PitchVocab::kNoteOff) {
      if (open >= 0) {
        auto& n = notes[static_cast<std::size_t>(open)];
        n.duration_steps = s - n.onset_step;
        open = -1;
      }
      if (PitchVocab::is_pitch(t)) {
        notes.push_back({PitchVocab::to_midi(t), s, 1, track});
        open = static_cast<int>(notes.size()) - 1;
      }
    }
  }
  if (open >= 0) {
    auto& n = notes[static_cast<std::size_t>(open)];
    n.duration_steps = seq.steps() - n.onset_step;
  }
  return notes;
}

std::vector<NoteEvent> decode_notes(const TokenSequence& seq) {
  std::vector<NoteEvent> all;
  for (int tr = 0; tr < seq.tracks(); ++tr) {
    auto notes = decode_track(seq, tr);
    all.insert(all.end(), notes.begin(), notes.end());
  }
  return all;
}

std::vector<std::uint8_t> export_midi(const TokenSequence& seq, double tempo_bpm,
                                      int ticks_per_quarter) {
  if (seq.has_masks())
    throw Error(ErrorKind::kInvalidArgument,
                "piece still contains mask tokens; sample or infill before exporting");
  seq.validate(false);
  if (tempo_bpm <= 0) throw Error(ErrorKind::kInvalidArgument, "tempo must be positive");
  const int ticks_per_step = ticks_per_quarter * 4 / seq.steps_per_bar();
  if (ticks_per_step * seq.steps_per_bar() != ticks_per_quarter * 4)
    throw Error(ErrorKind::kInvalidArgument, "ticks per quarter not divisible onto the step grid");

  MidiWriter writer(ticks_per_quarter);
  const int conductor = writer.add_track();
  writer.tempo(conductor, 0, tempo_bpm);
  writer.time_signature(conductor, 0, 4, 4);

  struct Channel {
    int channel;
    int program;
  };
  for (int tr = 0; tr < seq.tracks(); ++tr) {
    const TrackRole role = seq.role(tr);
    const Channel ch = role == TrackRole::kMelody ? Channel{0, 0}
                       : role == TrackRole::kBass ? Channel{1, 33}
                                                  : Channel{kDrumChannel, 0};
    const int track = writer.add_track();
    writer.program_change(track, 0, ch.channel, ch.program);

    struct Edge {
      std::uint32_t tick;
      bool on;
      int pitch;
    };
    std::vector<Edge> edges;
    for (const auto& n : decode_track(seq, tr)) {
      edges.push_back({static_cast<std::uint32_t>(n.onset_step * ticks_per_step), true, n.pitch});
      edges.push_back({static_cast<std::uint32_t>((n.onset_step + n.duration_steps) * ticks_per_step),
                       false, n.pitch});
    }
    // Releases before onsets on the same tick so repeated pitches pair correctly.
    std::stable_sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
      if (a.tick != b.tick) return a.tick < b.tick;
      return !a.on && b.on;
    });
    for (const auto& e : edges) {
      if (e.on)
        writer.note_on(track, e.tick, ch.channel, e.pitch, 100);
      else
        writer.note_off(track, e.tick, ch.channel, e.pitch);
    }
  }
  return writer.bytes();
}

TokenSequence transpose_augment(const TokenSequence& seq, int semitones) {
  TokenSequence out = seq;
  for (int tr = 0; tr < seq.tracks(); ++tr) {
    if (seq.role(tr) == TrackRole::kDrums) continue;
    for (int s = 0; s < seq.steps(); ++s) {
      const Token t = seq.at(s, tr);
      if (!PitchVocab::is_pitch(t)) continue;
      const int shifted = static_cast<int>(t) + semitones;
      if (shifted < 0 || shifted >= PitchVocab::kPitchCount)
        throw Error(ErrorKind::kOutOfRange,
                    "transposing by " + std::to_string(semitones) + " moves MIDI pitch " +
                        std::to_string(PitchVocab::to_midi(t)) + " at step " + std::to_string(s) +
                        ", track " + std::to_string(tr) + " outside [21, 108]");
      out.set(s, tr, static_cast<Token>(shifted));
    }
  }
  return out;
}

TokenSequence canonicalize(const TokenSequence& seq) {
  TokenSequence out = seq;
  for (int tr = 0; tr < seq.tracks(); ++tr) {
    if (seq.role(tr) == TrackRole::kDrums) continue;
    bool sounding = false;
    for (int s = 0; s < seq.steps(); ++s) {
      const Token t = seq.at(s, tr);
      if (t >= PitchVocab::kMask) {
        sounding = false;
        continue;
      }
      if (PitchVocab::is_pitch(t)) {
        sounding = true;
      } else if (t == PitchVocab::kNoteOff || (t == PitchVocab::kHold && s == 0)) {
        out.set(s, tr, (sounding || s == 0) ? PitchVocab::kNoteOff : PitchVocab::kHold);
        sounding = false;
      }
    }
  }
  return out;
}

bool is_canonical(const TokenSequence& seq) { return canonicalize(seq) == seq; }

std::vector<std::uint8_t> encode_tokens(std::span<const TokenSequence> pieces) {
  std::vector<std::uint8_t> out;
  for (const auto& p : pieces) {
    p.validate(true);
    out.insert(out.end(), {'S', 'D', 'T', 'K'});
    put_u16(out, kTokenFormatVersion);
    put_u16(out, static_cast<std::uint16_t>(p.tracks()));
    put_u32(out, static_cast<std::uint32_t>(p.steps()));
    put_u16(out, static_cast<std::uint16_t>(p.steps_per_bar()));
    put_u16(out, 0);
    for (Token v : p.values()) put_u16(out, v);
  }
  return out;
}

std::vector<TokenSequence> decode_tokens(std::span<const std::uint8_t> bytes) {
  std::vector<TokenSequence> pieces;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    if (bytes.size() - pos < 16) throw ParseError(pos, "truncated token record header");
    if (!std::equal(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + 4), "SDTK"))
      throw ParseError(pos, "bad token record magic");
    const std::uint16_t version = get_u16(bytes, pos + 4);
    if (version != kTokenFormatVersion)
      throw Error(ErrorKind::kVersionMismatch,
                  "token format version " + std::to_string(version) + " is not supported");
    const int tracks = get_u16(bytes, pos + 6);
    const auto steps = get_u32(bytes, pos + 8);
    const int steps_per_bar = get_u16(bytes, pos + 12);
    if ((tracks != 1 && tracks != 3) || steps == 0 || steps > (1u << 24) || steps_per_bar == 0 ||
        steps % static_cast<std::uint32_t>(steps_per_bar) != 0)
      throw ParseError(pos + 6, "token record header has an invalid shape");
    const std::size_t count = static_cast<std::size_t>(tracks) * steps;
    pos += 16;
    if ((bytes.size() - pos) / 2 < count) throw ParseError(pos, "truncated token record body");
    TokenSequence seq(tracks, static_cast<int>(steps), steps_per_bar);
    auto values = seq.values();
    for (std::size_t i = 0; i < count; ++i) values[i] = get_u16(bytes, pos + 2 * i);
    pos += 2 * count;
    try {
      seq.validate(true);
    } catch (const Error& e) {
      throw ParseError(pos - 2 * count, e.what());
    }
    pieces.push_back(std::move(seq));
  }
  return pieces;
}

std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_binary_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::kIo, "short write to " + path.string());
}

void write_token_file(const std::filesystem::path& path, std::span<const TokenSequence> pieces) {
  write_binary_file(path, encode_tokens(pieces));
}

std::vector<TokenSequence> read_token_file(const std::filesystem::path& path) {
  return decode_tokens(read_binary_file(path));
}

}  // namespace symdiff
