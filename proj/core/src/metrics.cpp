#include "symdiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "symdiff/error.hpp"

namespace symdiff {
namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }
double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

// Neumaier summation over sorted values.
double stable_sum(std::vector<double>& values) {
  std::sort(values.begin(), values.end());
  double sum = 0.0, comp = 0.0;
  for (double v : values) {
    const double t = sum + v;
    comp += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
    sum = t;
  }
  return sum + comp;
}

Gaussian moments(const std::vector<double>& xs) {
  std::vector<double> v = xs;
  const double mean = stable_sum(v) / static_cast<double>(xs.size());
  std::vector<double> sq;
  sq.reserve(xs.size());
  for (double x : xs) sq.push_back((x - mean) * (x - mean));
  const double var = stable_sum(sq) / static_cast<double>(xs.size());
  return {mean, std::max(var, kVarianceFloor)};
}

}  // namespace

std::vector<WindowStats> window_stats(const std::vector<NoteEvent>& notes, int bars, int steps_per_bar,
                                      const WindowOptions& options) {
  if (options.window_bars < 1 || options.hop_bars < 1 || steps_per_bar < 1)
    throw Error(ErrorKind::kInvalidArgument, "window size, hop and steps per bar must be positive");
  std::vector<WindowStats> out;
  for (int k = 0; k * options.hop_bars + options.window_bars <= bars; ++k) {
    WindowStats w;
    w.index = k;
    w.first_bar = k * options.hop_bars;
    const int begin = w.first_bar * steps_per_bar;
    const int end = begin + options.window_bars * steps_per_bar;
    std::vector<double> pitches, durations;
    for (const NoteEvent& n : notes) {
      if (n.onset_step < begin || n.onset_step >= end) continue;
      pitches.push_back(n.pitch);
      durations.push_back(n.duration_steps);
    }
    w.note_count = static_cast<int>(pitches.size());
    w.included = w.note_count > 0;
    if (w.included) {
      w.pitch = moments(pitches);
      w.duration = moments(durations);
    }
    out.push_back(w);
  }
  return out;
}

std::vector<WindowStats> window_stats(const TokenSequence& seq, int track, const WindowOptions& options) {
  if (seq.role(track) == TrackRole::kDrums) throw Error(ErrorKind::kInvalidArgument, "drum tracks have no pitch statistics");
  return window_stats(decode_track(seq, track), seq.bars(), seq.steps_per_bar(), options);
}

double overlap_area(const Gaussian& a, const Gaussian& b) {
  const double va = std::max(a.variance, kVarianceFloor);
  const double vb = std::max(b.variance, kVarianceFloor);
  if (va == vb) {
    const double gap = std::abs(a.mean - b.mean);
    return 2.0 * normal_cdf(-gap / (2.0 * std::sqrt(va)));
  }
  // Narrow (n) and wide (w) component; the wide pdf is the lower one inside
  // the two intersection points, the narrow one outside them.
  const Gaussian& n = va < vb ? a : b;
  const Gaussian& w = va < vb ? b : a;
  const double vn = std::min(va, vb), vw = std::max(va, vb);
  const double sn = std::sqrt(vn), sw = std::sqrt(vw);

  // In y = x - mn: y^2 / vn - (y - d)^2 / vw + log(vn / vw) = 0 with d = mw - mn.
  // Working relative to mn keeps the result exactly translation invariant.
  const double d = w.mean - n.mean;
  const double qa = 1.0 / vn - 1.0 / vw;
  const double qb = 2.0 * d / vw;
  const double qc = -d * d / vw + std::log(vn / vw);
  const double disc = std::max(0.0, qb * qb - 4.0 * qa * qc);
  const double q = -0.5 * (qb + std::copysign(std::sqrt(disc), qb));
  double r1, r2;
  if (q == 0.0) {
    const double half = std::sqrt(std::max(0.0, -qc / qa));
    r1 = -half;
    r2 = half;
  } else {
    r1 = q / qa;
    r2 = qc / q;
  }
  if (r1 > r2) std::swap(r1, r2);

  const double narrow_tails = normal_cdf(r1 / sn) + normal_sf(r2 / sn);
  const double wide_inside = normal_sf((r1 - d) / sw) - normal_sf((r2 - d) / sw);
  return std::clamp(narrow_tails + wide_inside, 0.0, 1.0);
}

void OaSamples::append(const std::vector<WindowStats>& ws) {
  windows += ws.size();
  for (std::size_t i = 0; i < ws.size(); ++i) {
    if (!ws[i].included) ++excluded_windows;
    if (i + 1 < ws.size() && ws[i].included && ws[i + 1].included) {
      pitch.push_back(overlap_area(ws[i].pitch, ws[i + 1].pitch));
      duration.push_back(overlap_area(ws[i].duration, ws[i + 1].duration));
    }
  }
}

OaSamples oa_samples(const std::vector<TokenSequence>& pieces, const WindowOptions& options) {
  OaSamples out;
  for (const auto& p : pieces)
    for (int tr = 0; tr < p.tracks(); ++tr)
      if (p.role(tr) != TrackRole::kDrums) out.append(window_stats(p, tr, options));
  return out;
}

OaMoments oa_moments(std::vector<double> values) {
  if (values.empty()) throw Error(ErrorKind::kDomain, "no adjacent window pairs to aggregate");
  const double n = static_cast<double>(values.size());
  const double mean = stable_sum(values) / n;
  std::vector<double> sq;
  sq.reserve(values.size());
  for (double v : values) sq.push_back((v - mean) * (v - mean));
  return {mean, stable_sum(sq) / n};
}

double relative_score(double value, double ground_truth) {
  if (ground_truth == 0.0) throw Error(ErrorKind::kDomain, "degenerate ground truth: reference statistic is zero");
  return std::max(0.0, 1.0 - std::abs(value - ground_truth) / ground_truth);
}

QuantityScore score_quantity(const std::vector<double>& set, const std::vector<double>& ground_truth) {
  QuantityScore s;
  s.set = oa_moments(set);
  s.ground_truth = oa_moments(ground_truth);
  s.consistency = relative_score(s.set.mean, s.ground_truth.mean);
  s.variance = relative_score(s.set.variance, s.ground_truth.variance);
  return s;
}

SelfSimilarityReport evaluate(const OaSamples& set, const OaSamples& ground_truth) {
  if (set.pitch.empty()) throw Error(ErrorKind::kDomain, "evaluated set has no adjacent window pairs");
  if (ground_truth.pitch.empty()) throw Error(ErrorKind::kDomain, "ground truth has no adjacent window pairs");
  SelfSimilarityReport r;
  r.pitch = score_quantity(set.pitch, ground_truth.pitch);
  r.duration = score_quantity(set.duration, ground_truth.duration);
  r.set_pairs = set.pitch.size();
  r.set_windows = set.windows;
  r.set_excluded_windows = set.excluded_windows;
  r.ground_truth_pairs = ground_truth.pitch.size();
  r.ground_truth_windows = ground_truth.windows;
  r.ground_truth_excluded_windows = ground_truth.excluded_windows;
  return r;
}

SelfSimilarityReport evaluate(const std::vector<TokenSequence>& set, const std::vector<TokenSequence>& ground_truth,
                              const WindowOptions& options) {
  if (set.empty() || ground_truth.empty()) throw Error(ErrorKind::kInvalidArgument, "both sets must be non-empty");
  SelfSimilarityReport r = evaluate(oa_samples(set, options), oa_samples(ground_truth, options));
  r.set_pieces = set.size();
  r.ground_truth_pieces = ground_truth.size();
  return r;
}

nlohmann::json report_to_json(const SelfSimilarityReport& r) {
  auto quantity = [](const QuantityScore& q) {
    return nlohmann::json{{"mean_oa", q.set.mean},          {"var_oa", q.set.variance},
                          {"mean_gt", q.ground_truth.mean}, {"var_gt", q.ground_truth.variance},
                          {"consistency", q.consistency},   {"variance", q.variance}};
  };
  return {{"pitch", quantity(r.pitch)},
          {"duration", quantity(r.duration)},
          {"set", {{"pieces", r.set_pieces}, {"pairs", r.set_pairs}, {"windows", r.set_windows},
                   {"excluded_windows", r.set_excluded_windows}}},
          {"ground_truth", {{"pieces", r.ground_truth_pieces}, {"pairs", r.ground_truth_pairs},
                            {"windows", r.ground_truth_windows},
                            {"excluded_windows", r.ground_truth_excluded_windows}}}};
}

std::string report_table(const std::vector<std::pair<std::string, SelfSimilarityReport>>& rows) {
  std::size_t width = 5;
  for (const auto& [label, _] : rows) width = std::max(width, label.size());
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-*s | %-21s | %-21s\n", static_cast<int>(width), "", "Pitch", "Duration");
  out << buf;
  std::snprintf(buf, sizeof buf, "%-*s | %-10s %-10s | %-10s %-10s\n", static_cast<int>(width), "Setup", "Consist.",
                "Variance", "Consist.", "Variance");
  out << buf << std::string(width, '-') << "-+-" << std::string(21, '-') << "-+-" << std::string(21, '-') << "\n";
  for (const auto& [label, r] : rows) {
    std::snprintf(buf, sizeof buf, "%-*s | %-10.2f %-10.2f | %-10.2f %-10.2f\n", static_cast<int>(width),
                  label.c_str(), r.pitch.consistency, r.pitch.variance, r.duration.consistency, r.duration.variance);
    out << buf;
  }
  return out.str();
}

}  // namespace symdiff
