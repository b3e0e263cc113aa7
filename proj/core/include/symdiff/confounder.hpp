#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "symdiff/image.hpp"
#include "symdiff/metrics.hpp"
#include "symdiff/random.hpp"
#include "symdiff/token_model.hpp"

namespace symdiff {

// A note read off the image: column = onset step, row counted from the top.
struct ImageNote {
  int row = 0;
  int column = 0;
  int duration = 1;
};

struct ImageScore {
  int width = 0;
  int height = 0;
  double threshold = 0.5;
  std::vector<ImageNote> notes;
};

// Per column: pixels >= threshold count as mass, the column is normalized
// into a distribution over rows and one row is drawn. Columns without mass
// stay silent. Throws Error(kInvalidArgument) if no column has mass.
ImageScore image_to_notes(const GrayImage& image, double threshold, Rng& rng);

struct AnnealerConfig {
  std::int64_t iterations = 200'000;
  // <= 0: calibrated so that about half of the uphill moves among the first
  // `calibration_proposals` trial proposals would be accepted.
  double initial_temperature = 0.0;
  int calibration_proposals = 500;
  double cooling_rate = 0.99995;
  double pitch_sigma = 1.0;     // semitones
  double duration_sigma = 2.0;  // steps
  // Pitch mean, pitch variance, duration mean, duration variance.
  std::array<double, 4> weights{1.0, 1.0, 1.0, 1.0};
  // Stop once every normalized distance is at most this.
  double tolerance = 0.01;
  // A note is inside the envelope while it is at most `envelope_rows` rows
  // from its origin. Proposals that would leave fewer than
  // `min_envelope_fraction` of the notes inside are rejected. Columns are
  // fixed: only pitch and duration are jittered.
  int envelope_rows = 2;
  double min_envelope_fraction = 0.7;
  int max_duration = 64;
  // MIDI pitch of the bottom image row; < 0 centres the image on the
  // reference's mean pitch.
  int base_pitch = -1;
  std::uint64_t seed = 1;
  int trace_every = 100;
};

// |x - gt| / gt for the four aggregated OA statistics.
struct MetricDistances {
  std::array<double, 4> d{};

  double weighted(const std::array<double, 4>& w) const { return w[0] * d[0] + w[1] * d[1] + w[2] * d[2] + w[3] * d[3]; }
  double max() const;
};

struct ForgedNote {
  ImageNote origin;
  int row = 0;
  int duration = 1;
};

struct TracePoint {
  std::int64_t iteration = 0;
  double current = 0.0;
  double best = 0.0;
  double temperature = 0.0;
};

struct AnnealResult {
  std::vector<ForgedNote> notes;  // best-so-far state
  int base_pitch = 0;
  int height = 0;
  int bars = 0;
  MetricDistances distances;
  double objective = 0.0;
  bool converged = false;
  std::int64_t iterations = 0;
  double initial_temperature = 0.0;
  std::size_t accepted = 0;
  std::size_t envelope_rejections = 0;
  std::vector<TracePoint> trace;
};

std::vector<NoteEvent> forged_events(const std::vector<ForgedNote>& notes, int base_pitch, int height);
// Window-pair OA samples of a loose note list spanning `bars` bars.
OaSamples note_oa_samples(const std::vector<NoteEvent>& notes, int bars);

AnnealResult anneal(const ImageScore& start, const TokenSequence& reference, const AnnealerConfig& config);

// Share of notes within `rows` rows of their image origin. Onsets never
// move, so the column offset is always zero.
double envelope_fraction(const AnnealResult& result, int rows = 2);

// Three stacked piano rolls (image, forged notes, reference) above a strip of
// the four scores drawn as bars. Throws when `forged` is empty.
RgbImage render_comparison(const GrayImage& image, const std::vector<NoteEvent>& forged, int forged_bars,
                           const TokenSequence& reference, const SelfSimilarityReport& report);

nlohmann::json anneal_report(const AnnealResult& result, const SelfSimilarityReport& report);

}  // namespace symdiff
