#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "symdiff/token_model.hpp"

namespace symdiff {

struct Gaussian {
  double mean = 0.0;
  double variance = 1.0;
};

// Windows with one note or identical values would otherwise have a
// degenerate density.
inline constexpr double kVarianceFloor = 1e-4;

struct WindowOptions {
  int window_bars = 4;
  int hop_bars = 2;
};

struct WindowStats {
  int index = 0;
  int first_bar = 0;
  Gaussian pitch;     // MIDI numbers
  Gaussian duration;  // steps
  int note_count = 0;
  bool included = false;  // false for windows without onsets
};

// Windows [k*hop, k*hop + size) bars for every k that fits in `bars`. A note
// belongs to every window containing its onset.
std::vector<WindowStats> window_stats(const std::vector<NoteEvent>& notes, int bars, int steps_per_bar = kStepsPerBar,
                                      const WindowOptions& options = {});
// Window statistics of one pitched track of a piece.
std::vector<WindowStats> window_stats(const TokenSequence& seq, int track = 0, const WindowOptions& options = {});

// Area under min(pdf1, pdf2), from the pdf intersection points and normal CDFs.
double overlap_area(const Gaussian& a, const Gaussian& b);

// Overlapping areas of adjacent included windows, pooled over pieces.
struct OaSamples {
  std::vector<double> pitch;
  std::vector<double> duration;
  std::size_t windows = 0;
  std::size_t excluded_windows = 0;

  void append(const std::vector<WindowStats>& windows);
};

// Pitched tracks only: drums are skipped, melody and bass are pooled.
OaSamples oa_samples(const std::vector<TokenSequence>& pieces, const WindowOptions& options = {});

struct OaMoments {
  double mean = 0.0;
  double variance = 0.0;  // population variance
};

// Order-independent: values are sorted before compensated summation.
OaMoments oa_moments(std::vector<double> values);

struct QuantityScore {
  OaMoments set;
  OaMoments ground_truth;
  double consistency = 0.0;
  double variance = 0.0;
};

struct SelfSimilarityReport {
  QuantityScore pitch;
  QuantityScore duration;
  std::size_t set_pieces = 0;
  std::size_t set_pairs = 0;
  std::size_t set_windows = 0;
  std::size_t set_excluded_windows = 0;
  std::size_t ground_truth_pieces = 0;
  std::size_t ground_truth_pairs = 0;
  std::size_t ground_truth_windows = 0;
  std::size_t ground_truth_excluded_windows = 0;
};

// max(0, 1 - |x - gt| / gt); Error(kDomain) when gt is zero.
double relative_score(double value, double ground_truth);

QuantityScore score_quantity(const std::vector<double>& set, const std::vector<double>& ground_truth);

// Throws Error(kDomain) when either side has no adjacent window pairs or a
// degenerate ground truth.
SelfSimilarityReport evaluate(const OaSamples& set, const OaSamples& ground_truth);
SelfSimilarityReport evaluate(const std::vector<TokenSequence>& set, const std::vector<TokenSequence>& ground_truth,
                              const WindowOptions& options = {});

nlohmann::json report_to_json(const SelfSimilarityReport& report);
// Aligned table: rows are labels, columns Consistency/Variance for pitch and duration.
std::string report_table(const std::vector<std::pair<std::string, SelfSimilarityReport>>& rows);

}  // namespace symdiff
