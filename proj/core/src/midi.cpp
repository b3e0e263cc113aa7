#include "symdiff/midi.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <string>
#include <tuple>

#include "symdiff/error.hpp"

namespace symdiff {
namespace {

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::size_t pos, std::size_t end)
      : bytes_(bytes), pos_(pos), end_(end) {}

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ >= end_; }

  std::uint8_t u8() {
    if (pos_ >= end_) throw ParseError(pos_, "unexpected end of data");
    return bytes_[pos_++];
  }
  std::uint8_t peek() const {
    if (pos_ >= end_) throw ParseError(pos_, "unexpected end of data");
    return bytes_[pos_];
  }
  std::uint16_t u16() {
    std::uint16_t hi = u8();
    return static_cast<std::uint16_t>((hi << 8) | u8());
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | u8();
    return v;
  }
  // MIDI variable-length quantity, at most four bytes.
  std::uint32_t vlq() {
    const std::size_t start = pos_;
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const std::uint8_t b = u8();
      v = (v << 7) | (b & 0x7F);
      if (!(b & 0x80)) return v;
    }
    throw ParseError(start, "variable-length quantity longer than 4 bytes");
  }
  void skip(std::size_t n) {
    if (n > end_ - pos_) throw ParseError(pos_, "length field runs past end of chunk");
    pos_ += n;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    const std::size_t start = pos_;
    skip(n);
    return bytes_.subspan(start, n);
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_;
  std::size_t end_;
};

struct TimedNote {
  std::uint32_t on_tick;
  std::uint32_t off_tick;
  int pitch;
  int velocity;
  int channel;
  int track;
  int order;
};

struct TempoEvent {
  std::uint32_t tick;
  std::uint32_t us_per_quarter;
};

struct ProgramEvent {
  std::uint32_t tick;
  int order;
  int channel;
  int program;
};

// Converts ticks to quarter-note positions. For PPQ files the tempo map does
// not move grid positions; for SMPTE files ticks are wall-clock and the tempo
// map is integrated.
class BeatClock {
 public:
  BeatClock(int ppq, double ticks_per_second, std::vector<TempoEvent> tempi)
      : ppq_(ppq), ticks_per_second_(ticks_per_second), tempi_(std::move(tempi)) {
    std::stable_sort(tempi_.begin(), tempi_.end(),
                     [](const TempoEvent& a, const TempoEvent& b) { return a.tick < b.tick; });
  }

  double quarters(std::uint32_t tick) const {
    if (ppq_ > 0) return static_cast<double>(tick) / ppq_;
    double q = 0.0;
    double us_per_quarter = 500000.0;
    std::uint32_t last = 0;
    for (const auto& t : tempi_) {
      if (t.tick >= tick) break;
      q += (t.tick - last) / ticks_per_second_ * 1e6 / us_per_quarter;
      last = t.tick;
      us_per_quarter = t.us_per_quarter;
    }
    return q + (tick - last) / ticks_per_second_ * 1e6 / us_per_quarter;
  }

 private:
  int ppq_;
  double ticks_per_second_;
  std::vector<TempoEvent> tempi_;
};

void append_vlq(std::vector<std::uint8_t>& out, std::uint32_t v) {
  std::uint8_t buf[4];
  int n = 0;
  buf[n++] = v & 0x7F;
  while ((v >>= 7) != 0) buf[n++] = static_cast<std::uint8_t>((v & 0x7F) | 0x80);
  while (n > 0) out.push_back(buf[--n]);
}

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

void append_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

}  // namespace

int ParsedMidi::end_step() const {
  int end = 0;
  for (const auto& n : notes) end = std::max(end, n.onset_step + n.duration_steps);
  return end;
}

ParsedMidi parse_midi(std::span<const std::uint8_t> bytes, int steps_per_bar) {
  if (steps_per_bar <= 0 || steps_per_bar % 4 != 0)
    throw Error(ErrorKind::kInvalidArgument, "steps_per_bar must be a positive multiple of 4");

  ByteReader header(bytes, 0, bytes.size());
  if (bytes.size() < 14) throw ParseError(0, "file too short for an MThd chunk");
  const auto magic = header.take(4);
  if (!std::equal(magic.begin(), magic.end(), "MThd")) throw ParseError(0, "missing MThd header");
  const std::uint32_t header_len = header.u32();
  if (header_len < 6) throw ParseError(4, "MThd length shorter than 6");
  ParsedMidi out;
  out.steps_per_bar = steps_per_bar;
  out.format = header.u16();
  const int declared_tracks = header.u16();
  const std::uint16_t division = header.u16();
  header.skip(header_len - 6);
  if (out.format == 2) throw Error(ErrorKind::kUnsupported, "format 2 MIDI files are not supported");
  if (out.format > 2) throw ParseError(8, "unknown MIDI format " + std::to_string(out.format));

  double ticks_per_second = 0.0;
  if (division & 0x8000) {
    const int fps_code = -static_cast<std::int8_t>(division >> 8);
    const double fps = fps_code == 29 ? 29.97 : fps_code;
    ticks_per_second = fps * (division & 0xFF);
    if (ticks_per_second <= 0) throw ParseError(12, "invalid SMPTE division");
  } else {
    out.ticks_per_quarter = division;
    if (division == 0) throw ParseError(12, "ticks per quarter note is zero");
  }

  std::vector<TimedNote> notes;
  std::vector<TempoEvent> tempi;
  std::vector<ProgramEvent> program_events;
  int order = 0;
  int track_index = 0;
  std::size_t pos = header.pos();

  while (pos < bytes.size() && track_index < declared_tracks) {
    ByteReader chunk(bytes, pos, bytes.size());
    const std::size_t chunk_start = pos;
    if (bytes.size() - pos < 8) throw ParseError(pos, "truncated chunk header");
    const auto id = chunk.take(4);
    const std::uint32_t len = chunk.u32();
    if (len > bytes.size() - chunk.pos())
      throw ParseError(chunk_start, "chunk length exceeds file size");
    const std::size_t body = chunk.pos();
    pos = body + len;
    if (!std::equal(id.begin(), id.end(), "MTrk")) continue;  // alien chunk

    ByteReader r(bytes, body, body + len);
    std::uint32_t tick = 0;
    std::uint8_t running = 0;
    // Open notes per (channel, pitch), FIFO.
    std::map<std::pair<int, int>, std::deque<TimedNote>> open;

    auto close_note = [&](int channel, int pitch, std::uint32_t at) {
      auto it = open.find({channel, pitch});
      if (it == open.end() || it->second.empty()) return;
      TimedNote n = it->second.front();
      it->second.pop_front();
      n.off_tick = at;
      notes.push_back(n);
    };

    bool ended = false;
    while (!r.done() && !ended) {
      tick += r.vlq();
      const std::size_t event_pos = r.pos();
      std::uint8_t status = r.peek();
      if (status & 0x80) {
        r.u8();
      } else {
        if (running == 0) throw ParseError(event_pos, "data byte without running status");
        status = running;
      }

      if (status == 0xFF) {
        const std::uint8_t type = r.u8();
        const std::uint32_t mlen = r.vlq();
        const auto data = r.take(mlen);
        if (type == 0x2F) {
          ended = true;
        } else if (type == 0x51) {
          if (mlen != 3) throw ParseError(event_pos, "tempo meta event must have length 3");
          tempi.push_back({tick, (std::uint32_t(data[0]) << 16) | (std::uint32_t(data[1]) << 8) | data[2]});
        } else if (type == 0x58) {
          if (mlen < 2) throw ParseError(event_pos, "time signature meta event too short");
          const int num = data[0];
          const int den = 1 << data[1];
          if (num != 4 || den != 4)
            throw Error(ErrorKind::kUnsupported, "time signature " + std::to_string(num) + "/" +
                                                     std::to_string(den) +
                                                     " is not 4/4; only 4/4 pieces are extracted");
        }
        continue;
      }
      if (status == 0xF0 || status == 0xF7) {
        r.skip(r.vlq());
        continue;
      }
      if (status >= 0xF0) throw ParseError(event_pos, "unexpected system message in track");

      running = status;
      const int kind = status & 0xF0;
      const int channel = status & 0x0F;
      const int d1 = r.u8();
      const int d2 = (kind == 0xC0 || kind == 0xD0) ? 0 : r.u8();
      if ((d1 | d2) & 0x80) throw ParseError(event_pos, "channel message data byte has high bit set");
      if (channel == kDrumChannel) out.drum_channel_declared = true;

      if (kind == 0x90 && d2 > 0) {
        open[{channel, d1}].push_back({tick, tick, d1, d2, channel, track_index, order++});
      } else if (kind == 0x80 || kind == 0x90) {
        close_note(channel, d1, tick);
      } else if (kind == 0xC0) {
        program_events.push_back({tick, order++, channel, d1});
        out.programs.push_back({channel, d1});
      }
    }
    // Unterminated notes end where the track ends.
    for (auto& [key, queue] : open)
      while (!queue.empty()) close_note(key.first, key.second, tick);
    ++track_index;
  }

  if (tempi.empty() == false) {
    std::vector<TempoEvent> sorted = tempi;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const TempoEvent& a, const TempoEvent& b) { return a.tick < b.tick; });
    if (sorted.front().tick == 0) out.initial_tempo_bpm = 60e6 / sorted.front().us_per_quarter;
  }

  const BeatClock clock(out.ticks_per_quarter, ticks_per_second, std::move(tempi));
  const double steps_per_quarter = steps_per_bar / 4.0;

  std::stable_sort(program_events.begin(), program_events.end(),
                   [](const ProgramEvent& a, const ProgramEvent& b) {
                     return std::tie(a.tick, a.order) < std::tie(b.tick, b.order);
                   });
  auto program_at = [&](int channel, std::uint32_t tick, int note_order) {
    int program = 0;
    for (const auto& p : program_events) {
      if (p.tick > tick || (p.tick == tick && p.order > note_order)) break;
      if (p.channel == channel) program = p.program;
    }
    return program;
  };

  std::sort(notes.begin(), notes.end(),
            [](const TimedNote& a, const TimedNote& b) { return a.order < b.order; });
  out.notes.reserve(notes.size());
  for (const auto& n : notes) {
    const double on = clock.quarters(n.on_tick) * steps_per_quarter;
    const double off = clock.quarters(n.off_tick) * steps_per_quarter;
    RawNote raw;
    raw.pitch = n.pitch;
    raw.velocity = n.velocity;
    raw.channel = n.channel;
    raw.program = program_at(n.channel, n.on_tick, n.order);
    raw.source_track = n.track;
    raw.onset_step = static_cast<int>(std::llround(on));
    raw.duration_steps = std::max(1, static_cast<int>(std::llround(off - on)));
    raw.order = n.order;
    out.notes.push_back(raw);
  }
  return out;
}

MidiWriter::MidiWriter(int ticks_per_quarter) : ticks_per_quarter_(ticks_per_quarter) {}

int MidiWriter::add_track() {
  tracks_.emplace_back();
  return static_cast<int>(tracks_.size()) - 1;
}

void MidiWriter::push(int track, std::uint32_t tick, std::vector<std::uint8_t> data) {
  tracks_.at(static_cast<std::size_t>(track)).push_back({tick, next_seq_++, std::move(data)});
}

void MidiWriter::tempo(int track, std::uint32_t tick, double bpm) {
  const auto us = static_cast<std::uint32_t>(std::llround(60e6 / bpm));
  push(track, tick, {0xFF, 0x51, 0x03, static_cast<std::uint8_t>(us >> 16),
                     static_cast<std::uint8_t>(us >> 8), static_cast<std::uint8_t>(us)});
}

void MidiWriter::time_signature(int track, std::uint32_t tick, int numerator, int denominator) {
  std::uint8_t dd = 0;
  while ((1 << dd) < denominator) ++dd;
  push(track, tick, {0xFF, 0x58, 0x04, static_cast<std::uint8_t>(numerator), dd, 24, 8});
}

void MidiWriter::program_change(int track, std::uint32_t tick, int channel, int program) {
  push(track, tick, {static_cast<std::uint8_t>(0xC0 | channel), static_cast<std::uint8_t>(program)});
}

void MidiWriter::note_on(int track, std::uint32_t tick, int channel, int pitch, int velocity) {
  push(track, tick, {static_cast<std::uint8_t>(0x90 | channel), static_cast<std::uint8_t>(pitch),
                     static_cast<std::uint8_t>(velocity)});
}

void MidiWriter::note_off(int track, std::uint32_t tick, int channel, int pitch) {
  push(track, tick, {static_cast<std::uint8_t>(0x80 | channel), static_cast<std::uint8_t>(pitch), 0});
}

std::vector<std::uint8_t> MidiWriter::bytes() const {
  std::vector<std::uint8_t> out{'M', 'T', 'h', 'd'};
  append_u32(out, 6);
  append_u16(out, 1);
  append_u16(out, static_cast<std::uint16_t>(tracks_.size()));
  append_u16(out, static_cast<std::uint16_t>(ticks_per_quarter_));

  for (auto events : tracks_) {
    std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
      return std::tie(a.tick, a.seq) < std::tie(b.tick, b.seq);
    });
    std::vector<std::uint8_t> body;
    std::uint32_t last = 0;
    for (const auto& e : events) {
      append_vlq(body, e.tick - last);
      last = e.tick;
      body.insert(body.end(), e.data.begin(), e.data.end());
    }
    body.insert(body.end(), {0x00, 0xFF, 0x2F, 0x00});
    out.insert(out.end(), {'M', 'T', 'r', 'k'});
    append_u32(out, static_cast<std::uint32_t>(body.size()));
    out.insert(out.end(), body.begin(), body.end());
  }
  return out;
}

}  // namespace symdiff
