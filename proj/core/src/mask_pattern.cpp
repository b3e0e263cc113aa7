#include "symdiff/mask_pattern.hpp"

#include <algorithm>

#include "symdiff/error.hpp"

namespace symdiff {

MaskPattern::MaskPattern(int steps, int tracks, bool value)
    : steps_(steps), tracks_(tracks),
      cells_(static_cast<std::size_t>(steps) * static_cast<std::size_t>(tracks), value ? 1 : 0) {
  if (steps <= 0 || tracks <= 0) throw Error(ErrorKind::kInvalidArgument, "mask pattern needs a positive shape");
}

MaskPattern MaskPattern::span(int steps, int tracks, int begin, int end, const std::vector<int>& which_tracks) {
  if (begin < 0 || end > steps || begin > end)
    throw Error(ErrorKind::kOutOfRange, "mask span outside the piece");
  MaskPattern m(steps, tracks);
  for (int tr : which_tracks) {
    if (tr < 0 || tr >= tracks) throw Error(ErrorKind::kOutOfRange, "track " + std::to_string(tr) + " does not exist");
    for (int s = begin; s < end; ++s) m.set(s, tr, true);
  }
  return m;
}

MaskPattern MaskPattern::central512(int steps, int tracks) {
  if (steps != 1024)
    throw Error(ErrorKind::kShapeMismatch,
                "central512 needs a 1024-step piece, got " + std::to_string(steps));
  std::vector<int> all(static_cast<std::size_t>(tracks));
  for (int i = 0; i < tracks; ++i) all[static_cast<std::size_t>(i)] = i;
  return span(steps, tracks, 256, 768, all);
}

MaskPattern MaskPattern::whole_tracks(int steps, int tracks, const std::vector<int>& which_tracks) {
  return span(steps, tracks, 0, steps, which_tracks);
}

MaskPattern MaskPattern::from_sequence(const TokenSequence& seq) {
  MaskPattern m(seq.steps(), seq.tracks());
  for (int s = 0; s < seq.steps(); ++s)
    for (int tr = 0; tr < seq.tracks(); ++tr) m.set(s, tr, seq.is_masked(s, tr));
  return m;
}

std::size_t MaskPattern::count() const {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), 1));
}

TokenSequence MaskPattern::apply(const TokenSequence& seq) const {
  if (!matches(seq)) throw Error(ErrorKind::kShapeMismatch, "mask pattern shape does not match the piece");
  TokenSequence out = seq;
  for (int s = 0; s < steps_; ++s)
    for (int tr = 0; tr < tracks_; ++tr)
      if (at(s, tr)) out.set(s, tr, out.mask_id(tr));
  return out;
}

MaskPattern& MaskPattern::operator|=(const MaskPattern& other) {
  if (other.steps_ != steps_ || other.tracks_ != tracks_)
    throw Error(ErrorKind::kShapeMismatch, "mask pattern shapes differ");
  for (std::size_t i = 0; i < cells_.size(); ++i) cells_[i] |= other.cells_[i];
  return *this;
}

nlohmann::json mask_to_json(const MaskPattern& mask) {
  nlohmann::json runs = nlohmann::json::array();
  for (int tr = 0; tr < mask.tracks(); ++tr) {
    nlohmann::json track = nlohmann::json::array();
    int s = 0;
    while (s < mask.steps()) {
      if (!mask.at(s, tr)) {
        ++s;
        continue;
      }
      const int start = s;
      while (s < mask.steps() && mask.at(s, tr)) ++s;
      track.push_back({start, s - start});
    }
    runs.push_back(std::move(track));
  }
  return {{"steps", mask.steps()}, {"tracks", mask.tracks()}, {"runs", std::move(runs)}};
}

MaskPattern mask_from_json(const nlohmann::json& j) {
  try {
    const int steps = j.at("steps").get<int>();
    const int tracks = j.at("tracks").get<int>();
    const auto& runs = j.at("runs");
    if (!runs.is_array() || static_cast<int>(runs.size()) != tracks)
      throw Error(ErrorKind::kParse, "mask runs must list one array per track");
    MaskPattern m(steps, tracks);
    for (int tr = 0; tr < tracks; ++tr) {
      for (const auto& run : runs[static_cast<std::size_t>(tr)]) {
        const int start = run.at(0).get<int>();
        const int length = run.at(1).get<int>();
        if (start < 0 || length < 0 || start + length > steps)
          throw Error(ErrorKind::kParse, "mask run [" + std::to_string(start) + ", " +
                                             std::to_string(length) + "] exceeds the piece");
        for (int s = start; s < start + length; ++s) m.set(s, tr, true);
      }
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("malformed mask JSON: ") + e.what());
  }
}

}  // namespace symdiff
