#include "fixtures.hpp"

#include <algorithm>
#include <atomic>
#include <unistd.h>

#include "oracles.hpp"
#include "symdiff/random.hpp"

namespace symdiff::testing {

const std::vector<std::vector<int>>& fixture_rhythms() {
  static const std::vector<std::vector<int>> rhythms = {
      {0, 4, 8},
      {0, 4, 8, 12},
      {0, 4, 6, 8, 12},
      {0, 2, 4, 8, 10, 12},
      {0, 2, 4, 6, 8, 12, 14},
      {0, 2, 4, 6, 8, 10, 12, 14},
      {0, 2, 3, 4, 6, 8, 10, 12, 14},
      {0, 1, 2, 4, 6, 8, 9, 10, 12, 14},
      {0, 1, 2, 4, 5, 6, 8, 9, 10, 12, 14},
      {0, 1, 2, 4, 5, 6, 8, 9, 10, 12, 13, 14},
  };
  return rhythms;
}

std::vector<TokenSequence> motif_pieces(int count, int bars, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TokenSequence> out;
  const auto& rhythms = fixture_rhythms();
  for (int i = 0; i < count; ++i) {
    const auto& rhythm = rhythms[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(rhythms.size()) - 1))];
    std::vector<Token> bar(kStepsPerBar, PitchVocab::kHold);
    for (int onset : rhythm) bar[static_cast<std::size_t>(onset)] = PitchVocab::from_midi(static_cast<int>(uniform_int(rng, 55, 79)));
    TokenSequence seq(1, bars * kStepsPerBar);
    for (int b = 0; b < bars; ++b)
      for (int s = 0; s < kStepsPerBar; ++s) seq.set(b * kStepsPerBar + s, 0, bar[static_cast<std::size_t>(s)]);
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<TokenSequence> varied_melodies(int count, int bars, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TokenSequence> out;
  for (int i = 0; i < count; ++i) {
    TokenSequence seq(1, bars * kStepsPerBar);
    int pitch = static_cast<int>(uniform_int(rng, 55, 79));
    bool sounding = false;
    for (int b = 0; b < bars; ++b) {
      const int onsets = static_cast<int>(uniform_int(rng, 0, kStepsPerBar));
      std::vector<int> slots(kStepsPerBar);
      for (int s = 0; s < kStepsPerBar; ++s) slots[static_cast<std::size_t>(s)] = s;
      for (int k = 0; k < onsets; ++k)
        std::swap(slots[static_cast<std::size_t>(k)], slots[static_cast<std::size_t>(uniform_int(rng, k, kStepsPerBar - 1))]);
      std::vector<bool> onset(kStepsPerBar, false);
      for (int k = 0; k < onsets; ++k) onset[static_cast<std::size_t>(slots[static_cast<std::size_t>(k)])] = true;
      for (int s = 0; s < kStepsPerBar; ++s) {
        const int step = b * kStepsPerBar + s;
        if (onset[static_cast<std::size_t>(s)]) {
          pitch = std::clamp(pitch + static_cast<int>(uniform_int(rng, -5, 5)), 48, 84);
          seq.set(step, 0, PitchVocab::from_midi(pitch));
          sounding = true;
        } else if (sounding && uniform01(rng) < 0.1) {
          seq.set(step, 0, PitchVocab::kNoteOff);
          sounding = false;
        } else {
          seq.set(step, 0, step == 0 ? PitchVocab::kNoteOff : PitchVocab::kHold);
        }
      }
    }
    out.push_back(std::move(seq));
  }
  return out;
}

TokenSequence random_trio(int steps, std::uint64_t seed) {
  Rng rng(seed);
  TokenSequence seq(3, steps);
  for (int tr = 0; tr < 2; ++tr) {
    const int lo = tr == 0 ? 60 : 36;
    bool sounding = false;
    for (int s = 0; s < steps; ++s) {
      const double u = uniform01(rng);
      if (u < 0.25) {
        seq.set(s, tr, PitchVocab::from_midi(static_cast<int>(uniform_int(rng, lo, lo + 24))));
        sounding = true;
      } else if (u < 0.3 && sounding) {
        seq.set(s, tr, PitchVocab::kNoteOff);
        sounding = false;
      } else {
        seq.set(s, tr, s == 0 ? PitchVocab::kNoteOff : PitchVocab::kHold);
      }
    }
  }
  for (int s = 0; s < steps; ++s)
    seq.set(s, 2, uniform01(rng) < 0.4 ? static_cast<Token>(uniform_int(rng, 1, DrumVocab::kSize - 1)) : Token{0});
  return seq;
}

std::vector<int> bar_onsets(const TokenSequence& seq) {
  std::vector<int> counts(static_cast<std::size_t>(seq.bars()), 0);
  for (int s = 0; s < seq.steps(); ++s)
    if (PitchVocab::is_pitch(seq.at(s, 0))) ++counts[static_cast<std::size_t>(s / seq.steps_per_bar())];
  return counts;
}

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("symdiff-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::vector<std::uint8_t> messy_midi(std::uint64_t seed, bool trio, int bars) {
  Rng rng(seed);
  static constexpr int kPpq[] = {96, 120, 384, 480, 960};
  const int ppq = kPpq[uniform_int(rng, 0, 4)];
  const int tempo = static_cast<int>(uniform_int(rng, 300000, 900000));
  const int ticks_per_step = ppq / 4;
  const int total = bars * kStepsPerBar;

  const auto voice = [&](int channel, int lo, int hi, double density) {
    std::vector<RawEvent> events;
    int step = 0;
    while (step < total) {
      step += static_cast<int>(uniform_int(rng, 1, 4));
      if (step >= total || uniform01(rng) > density) continue;
      const int chord = uniform01(rng) < 0.15 ? 2 : 1;
      for (int c = 0; c < chord; ++c) {
        const int pitch = static_cast<int>(uniform_int(rng, lo, hi));
        const int jitter = static_cast<int>(uniform_int(rng, -ticks_per_step / 3, ticks_per_step / 3));
        const unsigned on = static_cast<unsigned>(std::max(0, step * ticks_per_step + jitter));
        const unsigned len = static_cast<unsigned>(uniform_int(rng, ticks_per_step / 4, 6 * ticks_per_step));
        events.push_back({on, 0x90 | channel, pitch, static_cast<int>(uniform_int(rng, 20, 127))});
        events.push_back({on + len, 0x80 | channel, pitch, 0});
      }
    }
    return events;
  };

  std::vector<std::vector<RawEvent>> tracks;
  std::vector<RawEvent> melody{{0, 0xc0, 0, 0}};
  const auto notes = voice(0, 15, 112, 0.8);
  melody.insert(melody.end(), notes.begin(), notes.end());
  tracks.push_back(melody);
  if (trio) {
    std::vector<RawEvent> bass{{0, 0xc1, 33, 0}};
    const auto b = voice(1, 28, 55, 0.6);
    bass.insert(bass.end(), b.begin(), b.end());
    tracks.push_back(bass);
    tracks.push_back(voice(9, 33, 60, 0.9));
  }
  return handmade_midi(ppq, tracks, 4, 2, tempo);
}

}  // namespace symdiff::testing
