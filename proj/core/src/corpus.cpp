#include "symdiff/corpus.hpp"

#include <algorithm>

#include "symdiff/error.hpp"

namespace symdiff {

std::vector<TokenSequence> slice_piece(const ParsedMidi& midi, const CorpusOptions& options,
                                       SkipReport& skipped) {
  const int spb = options.steps_per_bar;
  if (options.steps <= 0 || options.steps % spb != 0)
    throw Error(ErrorKind::kInvalidArgument, "window length must be a multiple of the bar length");
  const int end = midi.end_step();
  const int total = (end + spb - 1) / spb * spb;

  std::vector<TokenSequence> out;
  for (int start = 0; start < total; start += options.steps) {
    const int available = total - start;
    if (available < options.steps && available < options.min_bars * spb) break;
    const bool any_onset = std::any_of(midi.notes.begin(), midi.notes.end(), [&](const RawNote& n) {
      return n.onset_step >= start && n.onset_step < start + options.steps;
    });
    if (!any_onset) continue;
    SkipReport local;
    if (options.mode == CorpusMode::kMelody)
      out.push_back(extract_melody(midi.notes, options.steps, start, &local, spb));
    else
      out.push_back(extract_trio(midi, options.program_map, options.steps, start, &local));
    // Notes outside this window belong to other windows; only count real drops.
    local.outside_window = 0;
    skipped += local;
  }
  return out;
}

Corpus tokenize_files(const std::vector<std::filesystem::path>& files, const CorpusOptions& options) {
  Corpus corpus;
  for (const auto& path : files) {
    ManifestEntry entry;
    entry.path = path.string();
    try {
      const auto bytes = read_binary_file(path);
      const ParsedMidi midi = parse_midi(bytes, options.steps_per_bar);
      auto pieces = slice_piece(midi, options, entry.skipped);
      if (pieces.empty()) {
        entry.reason = "no window of at least " + std::to_string(options.min_bars) +
                       " bars with note onsets";
      } else {
        entry.accepted = true;
        entry.pieces = static_cast<int>(pieces.size());
        if (options.mode == CorpusMode::kMelody)
          entry.track_roles = {"melody"};
        else
          entry.track_roles = {"melody", "bass", "drums"};
        for (auto& p : pieces) corpus.pieces.push_back(std::move(p));
      }
    } catch (const Error& e) {
      entry.reason = e.what();
    }
    corpus.manifest.push_back(std::move(entry));
  }
  return corpus;
}

std::vector<std::filesystem::path> find_midi_files(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw Error(ErrorKind::kNotFound, "not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".mid" || ext == ".midi") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

nlohmann::json manifest_to_json(const std::vector<ManifestEntry>& manifest, const CorpusOptions& options) {
  nlohmann::json files = nlohmann::json::array();
  int accepted = 0;
  int pieces = 0;
  for (const auto& e : manifest) {
    nlohmann::json j = {
        {"path", e.path},
        {"status", e.accepted ? "accepted" : "rejected"},
        {"pieces", e.pieces},
        {"track_roles", e.track_roles},
        {"skipped",
         {{"pitch_out_of_range", e.skipped.pitch_out_of_range},
          {"unmapped_drum", e.skipped.unmapped_drum}}},
    };
    if (!e.accepted) j["reason"] = e.reason;
    accepted += e.accepted ? 1 : 0;
    pieces += e.pieces;
    files.push_back(std::move(j));
  }
  return {
      {"mode", options.mode == CorpusMode::kMelody ? "melody" : "trio"},
      {"steps", options.steps},
      {"steps_per_bar", options.steps_per_bar},
      {"files_total", manifest.size()},
      {"files_accepted", accepted},
      {"pieces", pieces},
      {"files", std::move(files)},
  };
}

}  // namespace symdiff
