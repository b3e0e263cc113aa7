#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "symdiff/token_model.hpp"

namespace symdiff::testing {

// One-bar rhythms with 3..12 onsets, indexed so that rhythm(i) has i + 3 onsets.
const std::vector<std::vector<int>>& fixture_rhythms();

// Melody pieces of `bars` bars, each a single-bar motif (one rhythm from
// fixture_rhythms, random pitches in [55, 79]) repeated. Every note sounds
// until the next onset.
std::vector<TokenSequence> motif_pieces(int count, int bars, std::uint64_t seed);

// Melodies whose every bar draws a fresh rhythm: onset count uniform on
// [0, 16], random positions, random-walk pitches and occasional rests.
std::vector<TokenSequence> varied_melodies(int count, int bars, std::uint64_t seed);

// Random canonical trio with sparse drums.
TokenSequence random_trio(int steps, std::uint64_t seed);

// A Standard MIDI File with off-grid timing, overlapping notes, chords,
// pitches outside the piano range and, for trios, a bass channel (GM program
// 34) and drums on channel 10, including notes no drum class covers.
std::vector<std::uint8_t> messy_midi(std::uint64_t seed, bool trio, int bars = 20);

// Fresh directory under the system temp path, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Onsets per bar of track 0.
std::vector<int> bar_onsets(const TokenSequence& seq);

}  // namespace symdiff::testing
