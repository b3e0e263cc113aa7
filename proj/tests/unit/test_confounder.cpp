#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "fixtures.hpp"
#include "symdiff/confounder.hpp"
#include "symdiff/error.hpp"

using namespace symdiff;

namespace {

// A wavy stroke two pixels thick across 16 bars.
GrayImage wave(int width = 256, int height = 24) {
  GrayImage img(width, height, 0.0);
  for (int c = 0; c < width; ++c) {
    const int r = static_cast<int>(std::lround((height - 3) * (0.5 + 0.45 * std::sin(c / 9.0))));
    img.at(r, c) = 1.0;
    img.at(r + 1, c) = 0.8;
  }
  return img;
}

AnnealerConfig quick(std::int64_t iterations) {
  AnnealerConfig c;
  c.iterations = iterations;
  c.calibration_proposals = 50;
  c.trace_every = 10;
  c.seed = 4;
  return c;
}

MetricDistances recompute(const AnnealResult& r, const TokenSequence& reference) {
  const OaSamples forged = note_oa_samples(forged_events(r.notes, r.base_pitch, r.height), r.bars);
  const OaSamples ref = oa_samples({reference});
  const auto fp = oa_moments(forged.pitch), fd = oa_moments(forged.duration);
  const auto gp = oa_moments(ref.pitch), gd = oa_moments(ref.duration);
  MetricDistances m;
  m.d = {std::abs(fp.mean - gp.mean) / gp.mean, std::abs(fp.variance - gp.variance) / gp.variance,
         std::abs(fd.mean - gd.mean) / gd.mean, std::abs(fd.variance - gd.variance) / gd.variance};
  return m;
}

}  // namespace

TEST_CASE("a single bright pixel becomes one note") {
  GrayImage img(6, 5, 0.0);
  img.at(3, 4) = 0.9;
  Rng rng(1);
  const auto score = image_to_notes(img, 0.5, rng);
  REQUIRE(score.notes.size() == 1);
  CHECK(score.notes[0].row == 3);
  CHECK(score.notes[0].column == 4);
  CHECK(score.notes[0].duration == 1);
  CHECK(score.width == 6);
  CHECK(score.height == 5);
}

TEST_CASE("an image below threshold is rejected") {
  Rng rng(1);
  try {
    image_to_notes(GrayImage(8, 8, 0.2), 0.5, rng);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInvalidArgument);
  }
  CHECK_THROWS_AS(image_to_notes(GrayImage(), 0.5, rng), Error);
}

TEST_CASE("a uniform column draws rows uniformly") {
  GrayImage img(1, 8, 1.0);
  Rng rng(77);
  std::vector<double> counts(8, 0.0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) counts[static_cast<std::size_t>(image_to_notes(img, 0.5, rng).notes[0].row)] += 1;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - draws / 8.0) * (c - draws / 8.0) / (draws / 8.0);
  // 7 degrees of freedom, p = 0.001.
  CHECK(chi2 < 24.32);
}

TEST_CASE("a start identical to the reference has zero objective") {
  const auto reference = testing::varied_melodies(1, 16, 3).front();
  const auto notes = decode_track(reference, 0);
  int lo = 127, hi = 0;
  for (const auto& n : notes) {
    lo = std::min(lo, n.pitch);
    hi = std::max(hi, n.pitch);
  }
  ImageScore start;
  start.width = reference.steps();
  start.height = hi - lo + 1;
  for (const auto& n : notes) start.notes.push_back({hi - n.pitch, n.onset_step, n.duration_steps});
  AnnealerConfig c = quick(1000);
  c.base_pitch = lo;
  const auto r = anneal(start, reference, c);
  CHECK(r.objective == 0.0);
  CHECK(r.converged);
  CHECK(r.iterations == 0);
  CHECK(forged_events(r.notes, r.base_pitch, r.height) == notes);
}

TEST_CASE("zero proposal scales leave the objective fixed") {
  const auto reference = testing::varied_melodies(1, 16, 5).front();
  Rng rng(2);
  const auto start = image_to_notes(wave(), 0.5, rng);
  AnnealerConfig c = quick(300);
  c.pitch_sigma = 0.0;
  c.duration_sigma = 0.0;
  const auto r = anneal(start, reference, c);
  REQUIRE(r.trace.size() > 2);
  for (const auto& t : r.trace) {
    CHECK(t.current == r.trace.front().current);
    CHECK(t.best == r.trace.front().best);
  }
  for (const auto& n : r.notes) CHECK(n.row == n.origin.row);
}

TEST_CASE("annealing invariants") {
  const auto reference = testing::varied_melodies(1, 16, 6).front();
  Rng rng(3);
  const auto start = image_to_notes(wave(), 0.5, rng);
  AnnealerConfig c = quick(3000);
  c.tolerance = 0.0;
  const auto a = anneal(start, reference, c);
  const auto b = anneal(start, reference, c);

  SUBCASE("deterministic for a fixed seed") {
    CHECK(a.objective == b.objective);
    CHECK(a.accepted == b.accepted);
    REQUIRE(a.notes.size() == b.notes.size());
    for (std::size_t i = 0; i < a.notes.size(); ++i) {
      CHECK(a.notes[i].row == b.notes[i].row);
      CHECK(a.notes[i].duration == b.notes[i].duration);
    }
  }
  SUBCASE("best so far never increases") {
    for (std::size_t i = 1; i < a.trace.size(); ++i) {
      CHECK(a.trace[i].best <= a.trace[i - 1].best);
      CHECK(a.trace[i].current >= a.trace[i].best);
      CHECK(a.trace[i].iteration > a.trace[i - 1].iteration);
    }
    CHECK(a.trace.back().best == a.objective);
    CHECK(a.objective <= a.trace.front().current);
  }
  SUBCASE("reported distances match a recomputation") {
    const auto m = recompute(a, reference);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(m.d[i] - a.distances.d[i]) < 1e-9);
    CHECK(std::abs(a.distances.weighted(c.weights) - a.objective) < 1e-12);
  }
  SUBCASE("onsets stay put and the envelope budget holds") {
    REQUIRE(a.notes.size() == start.notes.size());
    std::size_t outside = 0;
    for (std::size_t i = 0; i < a.notes.size(); ++i) {
      CHECK(a.notes[i].origin.column == start.notes[i].column);
      outside += std::abs(a.notes[i].row - a.notes[i].origin.row) > c.envelope_rows;
      CHECK(a.notes[i].duration >= 1);
      CHECK(a.notes[i].duration <= c.max_duration);
    }
    CHECK(outside <= static_cast<std::size_t>(0.3 * static_cast<double>(a.notes.size())));
    CHECK(envelope_fraction(a) >= 0.7);
  }
  SUBCASE("a full envelope keeps every note within its rows") {
    AnnealerConfig strict = c;
    strict.min_envelope_fraction = 1.0;
    const auto r = anneal(start, reference, strict);
    for (const auto& n : r.notes) CHECK(std::abs(n.row - n.origin.row) <= strict.envelope_rows);
    CHECK(envelope_fraction(r) == 1.0);
  }
  SUBCASE("report") {
    const auto events = forged_events(a.notes, a.base_pitch, a.height);
    const auto report = evaluate(note_oa_samples(events, a.bars), oa_samples({reference}));
    const auto j = anneal_report(a, report);
    CHECK(j["iterations"] == 3000);
    CHECK(j["trace"].size() == a.trace.size());
    CHECK(j["metrics"]["pitch"]["consistency"] == report.pitch.consistency);
    const auto png = render_comparison(wave(), events, a.bars, reference, report);
    CHECK(png.width == 512);
    CHECK(png.height > 24 * 4);
  }
}

TEST_CASE("configuration and input errors") {
  const auto reference = testing::varied_melodies(1, 16, 6).front();
  Rng rng(3);
  const auto start = image_to_notes(wave(), 0.5, rng);
  AnnealerConfig c = quick(10);
  c.cooling_rate = 1.0;
  CHECK_THROWS_AS(anneal(start, reference, c), Error);
  c = quick(10);
  c.pitch_sigma = -1;
  CHECK_THROWS_AS(anneal(start, reference, c), Error);
  c = quick(10);
  c.min_envelope_fraction = 1.5;
  CHECK_THROWS_AS(anneal(start, reference, c), Error);
  CHECK_THROWS_AS(anneal(ImageScore{}, reference, quick(10)), Error);
  try {
    anneal(start, testing::varied_melodies(1, 4, 1).front(), quick(10));
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kDomain);
  }
  const SelfSimilarityReport empty_report;
  CHECK_THROWS_AS(render_comparison(wave(), {}, 16, reference, empty_report), Error);
}
