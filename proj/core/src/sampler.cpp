#include "symdiff/sampler.hpp"

#include <cmath>

#include "symdiff/error.hpp"

namespace symdiff {
namespace {

struct Cell {
  int step;
  int track;
};

Eigen::RowVectorXd softmax_row(const Eigen::Ref<const RowMatrix<float>>& logits, Eigen::Index row) {
  Eigen::RowVectorXd r = logits.row(row).cast<double>();
  const double mx = r.maxCoeff();
  if (!std::isfinite(mx)) throw Error(ErrorKind::kDomain, "model produced non-finite logits");
  r = (r.array() - mx).exp();
  return r / r.sum();
}

void check_inputs(const UnmaskingModel& model, const DiffusionSchedule& schedule, const TokenSequence& init,
                  const MaskPattern& pattern, int steps) {
  if (steps < 1 || steps > schedule.timesteps)
    throw Error(ErrorKind::kInvalidArgument, "steps must lie in [1, " + std::to_string(schedule.timesteps) +
                                                 "], got " + std::to_string(steps));
  if (!pattern.matches(init)) throw Error(ErrorKind::kShapeMismatch, "mask pattern does not match the piece");
  if (init.tracks() != model.tracks() || init.steps() != model.steps())
    throw Error(ErrorKind::kShapeMismatch, "piece is " + std::to_string(init.steps()) + "x" +
                                               std::to_string(init.tracks()) + ", model expects " +
                                               std::to_string(model.steps()) + "x" + std::to_string(model.tracks()));
  init.validate(true);
  for (int s = 0; s < init.steps(); ++s)
    for (int tr = 0; tr < init.tracks(); ++tr)
      if (init.is_masked(s, tr) != pattern.at(s, tr))
        throw Error(ErrorKind::kInvalidArgument, "mask ids and mask pattern disagree at step " + std::to_string(s) +
                                                     ", track " + std::to_string(tr));
}

}  // namespace

ProbGrid softmax_probs(const Logits& logits) {
  ProbGrid out;
  for (const auto& block : logits.tracks) {
    RowMatrix<double> p(block.rows(), block.cols());
    for (Eigen::Index r = 0; r < block.rows(); ++r) p.row(r) = softmax_row(block, r);
    out.tracks.push_back(std::move(p));
  }
  return out;
}

TokenSequence sample(const UnmaskingModel& model, const DiffusionSchedule& schedule, const TokenSequence& init,
                     const MaskPattern& pattern, Rng& rng, const SampleOptions& options, SampleStats* stats) {
  const int steps = options.steps == 0 ? schedule.timesteps : options.steps;
  check_inputs(model, schedule, init, pattern, steps);
  const GuidanceSpec* guidance = options.guidance;
  if (guidance && (!(guidance->scale >= 0.0) || !guidance->loss))
    throw Error(ErrorKind::kInvalidArgument, "guidance needs a loss and a non-negative scale");

  TokenSequence x = init;
  std::vector<Cell> masked;
  for (int s = 0; s < x.steps(); ++s)
    for (int tr = 0; tr < x.tracks(); ++tr)
      if (pattern.at(s, tr)) masked.push_back({s, tr});
  if (masked.empty()) return x;

  for (int t = steps; t >= 1; --t) {
    if (options.cancel && options.cancel->load()) throw Error(ErrorKind::kCancelled, "sampling cancelled");

    std::vector<Cell> commit, keep;
    if (options.left_to_right) {
      const std::size_t n = (masked.size() + static_cast<std::size_t>(t) - 1) / static_cast<std::size_t>(t);
      commit.assign(masked.begin(), masked.begin() + static_cast<std::ptrdiff_t>(n));
      keep.assign(masked.begin() + static_cast<std::ptrdiff_t>(n), masked.end());
    } else {
      const double p = 1.0 / t;
      for (const Cell& c : masked) (uniform01(rng) < p ? commit : keep).push_back(c);
    }

    StepMessage msg;
    msg.index = steps - t + 1;
    msg.t = t;
    if (!commit.empty()) {
      const Logits logits = model.logits(x);
      if (stats) ++stats->model_calls;
      if (static_cast<int>(logits.tracks.size()) != x.tracks())
        throw Error(ErrorKind::kShapeMismatch, "model returned the wrong number of tracks");

      ProbGrid guided;
      ProbGrid grad;
      const bool guide = guidance && guidance->scale > 0.0;
      if (guide) {
        // Fixed positions enter the loss as one-hot rows.
        for (int tr = 0; tr < x.tracks(); ++tr) {
          RowMatrix<double> p = RowMatrix<double>::Zero(x.steps(), x.vocab_size(tr));
          for (int s = 0; s < x.steps(); ++s)
            if (!x.is_masked(s, tr)) p(s, x.at(s, tr)) = 1.0;
          guided.tracks.push_back(std::move(p));
          grad.tracks.push_back(RowMatrix<double>::Zero(x.steps(), x.vocab_size(tr)));
        }
        for (const Cell& c : masked)
          guided.tracks[static_cast<std::size_t>(c.track)].row(c.step) =
              softmax_row(logits.tracks[static_cast<std::size_t>(c.track)], c.step);
        guidance->loss(guided, grad);
      }

      for (const Cell& c : commit) {
        const auto tr = static_cast<std::size_t>(c.track);
        Eigen::RowVectorXd row = guide ? Eigen::RowVectorXd(guided.tracks[tr].row(c.step))
                                       : softmax_row(logits.tracks[tr], c.step);
        if (guide) {
          Eigen::RowVectorXd adjusted = (row - guidance->scale * grad.tracks[tr].row(c.step)).cwiseMax(0.0);
          const double total = adjusted.sum();
          if (total > 0.0 && std::isfinite(total)) {
            row = adjusted / total;
          } else if (stats) {
            ++stats->guidance_fallbacks;
          }
        }
        const int v = sample_categorical<double>(rng, std::span<const double>(row.data(), static_cast<std::size_t>(row.size())));
        if (v < 0) throw Error(ErrorKind::kDomain, "empty distribution while sampling");
        x.set(c.step, c.track, static_cast<Token>(v));
        msg.deltas.push_back({c.step, c.track, static_cast<Token>(v)});
      }
    }
    masked.swap(keep);
    msg.remaining_masks = masked.size();
    if (options.on_step) options.on_step(msg, x);
  }
  return x;
}

TokenSequence sample_unconditional(const UnmaskingModel& model, const DiffusionSchedule& schedule, Rng& rng,
                                   const SampleOptions& options, SampleStats* stats) {
  const TokenSequence init = TokenSequence::all_masked(model.tracks(), model.steps());
  return sample(model, schedule, init, MaskPattern::all(model.steps(), model.tracks()), rng, options, stats);
}

TokenSequence infill(const UnmaskingModel& model, const DiffusionSchedule& schedule, const TokenSequence& seq,
                     const MaskPattern& pattern, Rng& rng, const SampleOptions& options, SampleStats* stats) {
  if (!pattern.matches(seq)) throw Error(ErrorKind::kShapeMismatch, "mask pattern does not match the piece");
  seq.validate(false);
  return sample(model, schedule, pattern.apply(seq), pattern, rng, options, stats);
}

TokenSequence infill_central(const UnmaskingModel& model, const DiffusionSchedule& schedule, const TokenSequence& seq,
                             Rng& rng, const SampleOptions& options, SampleStats* stats) {
  const MaskPattern pattern = MaskPattern::central512(seq.steps(), seq.tracks());
  return infill(model, schedule, seq, pattern, rng, options, stats);
}

TokenSequence accompany(const UnmaskingModel& model, const DiffusionSchedule& schedule, const TokenSequence& seq,
                        const std::vector<int>& tracks_to_generate, Rng& rng, const SampleOptions& options,
                        SampleStats* stats) {
  if (!seq.is_trio() || model.tracks() != 3)
    throw Error(ErrorKind::kUnsupported, "accompaniment needs a trio piece and a trio model");
  if (tracks_to_generate.empty()) throw Error(ErrorKind::kInvalidArgument, "no tracks selected for accompaniment");
  for (int tr : tracks_to_generate)
    if (tr < 0 || tr >= 3) throw Error(ErrorKind::kOutOfRange, "track " + std::to_string(tr) + " is not a trio track");
  const MaskPattern pattern = MaskPattern::whole_tracks(seq.steps(), seq.tracks(), tracks_to_generate);
  return infill(model, schedule, seq, pattern, rng, options, stats);
}

TokenSequence guided_sample(const UnmaskingModel& model, const DiffusionSchedule& schedule,
                            const GuidanceSpec& guidance, int steps, Rng& rng, SampleStats* stats) {
  SampleOptions options;
  options.steps = steps;
  options.guidance = &guidance;
  return sample_unconditional(model, schedule, rng, options, stats);
}

}  // namespace symdiff
