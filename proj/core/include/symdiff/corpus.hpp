#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "symdiff/token_model.hpp"

namespace symdiff {

enum class CorpusMode { kMelody, kTrio };

struct CorpusOptions {
  CorpusMode mode = CorpusMode::kMelody;
  int steps = 256;
  int steps_per_bar = kStepsPerBar;
  // A trailing partial window is kept (padded with silence) only when it
  // holds at least this many bars.
  int min_bars = 16;
  ProgramMap program_map = ProgramMap::general_midi();
};

struct ManifestEntry {
  std::string path;
  bool accepted = false;
  std::string reason;
  int pieces = 0;
  std::vector<std::string> track_roles;
  SkipReport skipped;
};

struct Corpus {
  std::vector<TokenSequence> pieces;
  std::vector<ManifestEntry> manifest;
};

// Cuts one parsed file into non-overlapping windows of `options.steps`.
// Windows without a single onset are dropped.
std::vector<TokenSequence> slice_piece(const ParsedMidi& midi, const CorpusOptions& options,
                                       SkipReport& skipped);

// Files are processed in the given order; rejections land in the manifest
// rather than aborting the run.
Corpus tokenize_files(const std::vector<std::filesystem::path>& files, const CorpusOptions& options);

// Recursively collects *.mid / *.midi under `dir`, sorted by path.
std::vector<std::filesystem::path> find_midi_files(const std::filesystem::path& dir);

nlohmann::json manifest_to_json(const std::vector<ManifestEntry>& manifest, const CorpusOptions& options);

}  // namespace symdiff
