#pragma once

#include <vector>

#include <nlohmann/json.hpp>

#include "symdiff/token_model.hpp"

namespace symdiff {

// Per-cell flags over a (steps x tracks) grid; true marks a position that is
// absorbed and will be regenerated.
class MaskPattern {
 public:
  MaskPattern() = default;
  MaskPattern(int steps, int tracks, bool value = false);

  static MaskPattern all(int steps, int tracks) { return MaskPattern(steps, tracks, true); }
  static MaskPattern none(int steps, int tracks) { return MaskPattern(steps, tracks, false); }
  // Steps [begin, end) masked in every listed track.
  static MaskPattern span(int steps, int tracks, int begin, int end, const std::vector<int>& which_tracks);
  // The middle 512 steps of a 1024-step piece, all tracks.
  static MaskPattern central512(int steps, int tracks);
  static MaskPattern whole_tracks(int steps, int tracks, const std::vector<int>& which_tracks);
  // Positions where `seq` holds its track's mask id.
  static MaskPattern from_sequence(const TokenSequence& seq);

  int steps() const { return steps_; }
  int tracks() const { return tracks_; }
  bool at(int step, int track) const { return cells_[index(step, track)] != 0; }
  void set(int step, int track, bool value) { cells_[index(step, track)] = value ? 1 : 0; }
  std::size_t count() const;
  bool any() const { return count() > 0; }

  bool matches(const TokenSequence& seq) const { return seq.steps() == steps_ && seq.tracks() == tracks_; }
  // Copy of `seq` with every flagged position replaced by its mask id.
  TokenSequence apply(const TokenSequence& seq) const;

  MaskPattern& operator|=(const MaskPattern& other);
  friend bool operator==(const MaskPattern&, const MaskPattern&) = default;

 private:
  std::size_t index(int step, int track) const {
    return static_cast<std::size_t>(step) * static_cast<std::size_t>(tracks_) + static_cast<std::size_t>(track);
  }

  int steps_ = 0;
  int tracks_ = 0;
  std::vector<unsigned char> cells_;
};

// {"steps": N, "tracks": K, "runs": [[[start, length], ...] per track]}
// Runs list the masked stretches of each track in ascending order.
nlohmann::json mask_to_json(const MaskPattern& mask);
MaskPattern mask_from_json(const nlohmann::json& j);

}  // namespace symdiff
