#include "symdiff/confounder.hpp"

#include <algorithm>
#include <cmath>

#include "symdiff/error.hpp"

namespace symdiff {
namespace {

struct GroundTruth {
  OaMoments pitch;
  OaMoments duration;
};

MetricDistances distances(const OaSamples& samples, const GroundTruth& gt) {
  if (samples.pitch.empty()) throw Error(ErrorKind::kDomain, "forged notes have no adjacent window pairs");
  const OaMoments p = oa_moments(samples.pitch);
  const OaMoments d = oa_moments(samples.duration);
  MetricDistances out;
  out.d = {std::abs(p.mean - gt.pitch.mean) / gt.pitch.mean, std::abs(p.variance - gt.pitch.variance) / gt.pitch.variance,
           std::abs(d.mean - gt.duration.mean) / gt.duration.mean,
           std::abs(d.variance - gt.duration.variance) / gt.duration.variance};
  return out;
}

struct Proposal {
  std::size_t index = 0;
  int row = 0;
  int duration = 0;
  int outside_delta = 0;  // change in the number of notes outside the envelope
  bool valid = true;
};

}  // namespace

double MetricDistances::max() const { return *std::max_element(d.begin(), d.end()); }

ImageScore image_to_notes(const GrayImage& image, double threshold, Rng& rng) {
  if (image.width < 1 || image.height < 1) throw Error(ErrorKind::kInvalidArgument, "empty image");
  ImageScore score;
  score.width = image.width;
  score.height = image.height;
  score.threshold = threshold;
  std::vector<double> column(static_cast<std::size_t>(image.height));
  for (int c = 0; c < image.width; ++c) {
    for (int r = 0; r < image.height; ++r) column[static_cast<std::size_t>(r)] = image.at(r, c) >= threshold ? 1.0 : 0.0;
    const int row = sample_categorical<double>(rng, column);
    if (row >= 0) score.notes.push_back({row, c, 1});
  }
  if (score.notes.empty())
    throw Error(ErrorKind::kInvalidArgument, "no image column has pixels at or above the threshold");
  return score;
}

std::vector<NoteEvent> forged_events(const std::vector<ForgedNote>& notes, int base_pitch, int height) {
  std::vector<NoteEvent> out;
  out.reserve(notes.size());
  for (const auto& n : notes) out.push_back({base_pitch + (height - 1 - n.row), n.origin.column, n.duration, 0});
  return out;
}

OaSamples note_oa_samples(const std::vector<NoteEvent>& notes, int bars) {
  OaSamples s;
  s.append(window_stats(notes, bars));
  return s;
}

AnnealResult anneal(const ImageScore& start, const TokenSequence& reference, const AnnealerConfig& config) {
  if (start.notes.empty()) throw Error(ErrorKind::kInvalidArgument, "image score has no notes");
  if (config.cooling_rate <= 0.0 || config.cooling_rate >= 1.0)
    throw Error(ErrorKind::kInvalidArgument, "cooling rate must lie in (0, 1)");
  if (config.pitch_sigma < 0 || config.duration_sigma < 0 || config.max_duration < 1)
    throw Error(ErrorKind::kInvalidArgument, "proposal scales must be non-negative");
  if (config.envelope_rows < 0 || !(config.min_envelope_fraction >= 0.0 && config.min_envelope_fraction <= 1.0))
    throw Error(ErrorKind::kInvalidArgument, "envelope must have non-negative rows and a fraction in [0, 1]");

  const OaSamples ref = oa_samples({reference});
  if (ref.pitch.empty()) throw Error(ErrorKind::kDomain, "reference piece has no adjacent window pairs");
  const GroundTruth gt{oa_moments(ref.pitch), oa_moments(ref.duration)};
  if (gt.pitch.mean == 0.0 || gt.pitch.variance == 0.0 || gt.duration.mean == 0.0 || gt.duration.variance == 0.0)
    throw Error(ErrorKind::kDomain, "reference statistics are degenerate (a zero mean or variance)");

  AnnealResult result;
  result.height = start.height;
  result.bars = (start.width + kStepsPerBar - 1) / kStepsPerBar;
  if (config.base_pitch >= 0) {
    result.base_pitch = config.base_pitch;
  } else {
    double sum = 0.0;
    std::size_t count = 0;
    for (int tr = 0; tr < reference.tracks(); ++tr) {
      if (reference.role(tr) == TrackRole::kDrums) continue;
      for (const auto& n : decode_track(reference, tr)) {
        sum += n.pitch;
        ++count;
      }
    }
    const int centre = count ? static_cast<int>(std::lround(sum / static_cast<double>(count))) : 60;
    result.base_pitch = std::clamp(centre - start.height / 2, 0, std::max(0, 127 - start.height));
  }
  for (const auto& n : start.notes) result.notes.push_back({n, n.row, n.duration});

  auto evaluate_state = [&](const std::vector<ForgedNote>& notes) {
    return distances(note_oa_samples(forged_events(notes, result.base_pitch, start.height), result.bars), gt);
  };

  // Start notes are all inside; the budget caps how many may leave.
  const auto max_outside = static_cast<std::size_t>(
      std::floor((1.0 - config.min_envelope_fraction) * static_cast<double>(start.notes.size()) + 1e-9));
  std::size_t outside = 0;

  Rng rng(config.seed);
  auto propose = [&](const std::vector<ForgedNote>& notes) {
    Proposal p;
    p.index = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(notes.size()) - 1));
    const ForgedNote& n = notes[p.index];
    const auto kind = uniform_int(rng, 0, 2);
    p.row = n.row;
    p.duration = n.duration;
    if (kind != 1) p.row += static_cast<int>(std::lround(config.pitch_sigma * normal01(rng)));
    if (kind != 0) p.duration += static_cast<int>(std::lround(config.duration_sigma * normal01(rng)));
    const int pitch = result.base_pitch + (start.height - 1 - p.row);
    const bool was_inside = std::abs(n.row - n.origin.row) <= config.envelope_rows;
    const bool inside = std::abs(p.row - n.origin.row) <= config.envelope_rows;
    p.valid = (inside || !was_inside || outside < max_outside) && p.row >= 0 && p.row < start.height && pitch >= 0 &&
              pitch <= 127 && p.duration >= 1 && p.duration <= config.max_duration;
    p.outside_delta = static_cast<int>(was_inside) - static_cast<int>(inside);
    return p;
  };

  std::vector<ForgedNote> current = result.notes;
  MetricDistances current_d = evaluate_state(current);
  double current_obj = current_d.weighted(config.weights);
  result.distances = current_d;
  result.objective = current_obj;
  if (current_d.max() <= config.tolerance) {
    result.converged = true;
    result.trace.push_back({0, current_obj, current_obj, 0.0});
    return result;
  }

  double temperature = config.initial_temperature;
  if (temperature <= 0.0) {
    std::vector<double> uphill;
    for (int i = 0; i < config.calibration_proposals; ++i) {
      const Proposal p = propose(current);
      if (!p.valid) continue;
      std::vector<ForgedNote> trial = current;
      trial[p.index].row = p.row;
      trial[p.index].duration = p.duration;
      const double delta = evaluate_state(trial).weighted(config.weights) - current_obj;
      if (delta > 0.0) uphill.push_back(delta);
    }
    if (uphill.empty()) {
      temperature = 1e-3;
    } else {
      std::nth_element(uphill.begin(), uphill.begin() + static_cast<std::ptrdiff_t>(uphill.size() / 2), uphill.end());
      temperature = uphill[uphill.size() / 2] / std::log(2.0);
    }
  }
  result.initial_temperature = temperature;
  result.trace.push_back({0, current_obj, current_obj, temperature});

  for (std::int64_t it = 1; it <= config.iterations; ++it) {
    result.iterations = it;
    const Proposal p = propose(current);
    if (!p.valid) {
      ++result.envelope_rejections;
    } else {
      ForgedNote& n = current[p.index];
      const ForgedNote saved = n;
      n.row = p.row;
      n.duration = p.duration;
      const MetricDistances d = evaluate_state(current);
      const double obj = d.weighted(config.weights);
      const double delta = obj - current_obj;
      if (delta <= 0.0 || uniform01(rng) < std::exp(-delta / temperature)) {
        ++result.accepted;
        outside = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(outside) + p.outside_delta);
        current_obj = obj;
        current_d = d;
        if (obj < result.objective) {
          result.objective = obj;
          result.distances = d;
          result.notes = current;
        }
      } else {
        n = saved;
      }
    }
    temperature *= config.cooling_rate;
    const bool done = result.distances.max() <= config.tolerance;
    if (done || it % std::max(1, config.trace_every) == 0 || it == config.iterations)
      result.trace.push_back({it, current_obj, result.objective, temperature});
    if (done) {
      result.converged = true;
      break;
    }
  }
  return result;
}

double envelope_fraction(const AnnealResult& result, int rows) {
  if (result.notes.empty()) return 0.0;
  std::size_t inside = 0;
  for (const auto& n : result.notes)
    if (std::abs(n.row - n.origin.row) <= rows) ++inside;
  return static_cast<double>(inside) / static_cast<double>(result.notes.size());
}

RgbImage render_comparison(const GrayImage& image, const std::vector<NoteEvent>& forged, int forged_bars,
                           const TokenSequence& reference, const SelfSimilarityReport& report) {
  if (forged.empty()) throw Error(ErrorKind::kInvalidArgument, "nothing to render: the forged note set is empty");
  std::vector<NoteEvent> ref_notes;
  for (int tr = 0; tr < reference.tracks(); ++tr)
    if (reference.role(tr) != TrackRole::kDrums)
      for (const auto& n : decode_track(reference, tr)) ref_notes.push_back(n);

  constexpr int kCellW = 2;
  constexpr int kCellH = 4;
  constexpr int kGap = 8;
  const int steps = std::max({image.width, forged_bars * kStepsPerBar, reference.steps()});
  int lo = 127, hi = 0;
  for (const std::vector<NoteEvent>* set : std::initializer_list<const std::vector<NoteEvent>*>{&forged, &ref_notes})
    for (const auto& n : *set) {
      lo = std::min(lo, n.pitch);
      hi = std::max(hi, n.pitch);
    }
  if (lo > hi) lo = hi = 60;
  const int pitch_rows = hi - lo + 1;
  const int image_h = image.height * kCellH;
  const int roll_h = pitch_rows * kCellH;
  constexpr int kStripH = 48;
  const int width = steps * kCellW;
  const int height = image_h + 2 * roll_h + kStripH + 3 * kGap;
  RgbImage out(width, height, 255);

  for (int r = 0; r < image.height; ++r)
    for (int c = 0; c < image.width; ++c) {
      const auto v = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - std::clamp(image.at(r, c), 0.0, 1.0))));
      out.fill_rect(r * kCellH, c * kCellW, kCellH, kCellW, v, v, v);
    }

  auto draw_roll = [&](const std::vector<NoteEvent>& notes, int top, std::uint8_t red, std::uint8_t green,
                       std::uint8_t blue) {
    for (int b = 0; b * kStepsPerBar < steps; ++b) out.fill_rect(top, b * kStepsPerBar * kCellW, roll_h, 1, 220, 220, 220);
    for (const auto& n : notes) {
      const int y = top + (hi - n.pitch) * kCellH;
      out.fill_rect(y, n.onset_step * kCellW, kCellH - 1, std::max(1, n.duration_steps * kCellW - 1), red, green, blue);
      out.fill_rect(y, n.onset_step * kCellW, kCellH - 1, 1, 0, 0, 0);
    }
  };
  const int forged_top = image_h + kGap;
  const int ref_top = forged_top + roll_h + kGap;
  draw_roll(forged, forged_top, 200, 60, 40);
  draw_roll(ref_notes, ref_top, 40, 90, 200);

  const int strip_top = ref_top + roll_h + kGap;
  const std::array<double, 4> scores{report.pitch.consistency, report.pitch.variance, report.duration.consistency,
                                     report.duration.variance};
  const int bar_w = std::max(8, width / 16);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const int x = static_cast<int>(i) * (bar_w + bar_w / 2) + bar_w / 2;
    const int full = kStripH - 4;
    const int h = static_cast<int>(std::lround(full * std::clamp(scores[i], 0.0, 1.0)));
    out.fill_rect(strip_top, x, full, bar_w, 235, 235, 235);
    out.fill_rect(strip_top + full - h, x, h, bar_w, i < 2 ? 90 : 60, i < 2 ? 140 : 160, i < 2 ? 60 : 120);
  }
  return out;
}

nlohmann::json anneal_report(const AnnealResult& result, const SelfSimilarityReport& report) {
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& t : result.trace)
    trace.push_back({{"iteration", t.iteration}, {"current", t.current}, {"best", t.best}, {"temperature", t.temperature}});
  return {{"converged", result.converged},
          {"iterations", result.iterations},
          {"objective", result.objective},
          {"distances", {{"pitch_mean", result.distances.d[0]}, {"pitch_variance", result.distances.d[1]},
                         {"duration_mean", result.distances.d[2]}, {"duration_variance", result.distances.d[3]}}},
          {"initial_temperature", result.initial_temperature},
          {"accepted", result.accepted},
          {"envelope_rejections", result.envelope_rejections},
          {"notes", result.notes.size()},
          {"base_pitch", result.base_pitch},
          {"envelope_fraction", envelope_fraction(result)},
          {"metrics", report_to_json(report)},
          {"table", report_table({{"Forged", report}})},
          {"trace", trace}};
}

}  // namespace symdiff
