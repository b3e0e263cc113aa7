#include "symdiff/trainer.hpp"

#include <chrono>
#include <cmath>

#include "symdiff/error.hpp"

namespace symdiff {
namespace {

double now_seconds() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

// Rows [b*L, (b+1)*L) of every track block.
template <typename Scalar>
LogitsT<Scalar> slice(const BatchLogits<Scalar>& all, int b, int steps) {
  LogitsT<Scalar> out;
  for (const auto& block : all.tracks) out.tracks.push_back(block.middleRows(b * steps, steps));
  return out;
}

}  // namespace

nlohmann::json metric_to_json(const TrainMetric& m) {
  return {{"step", m.step}, {"loss", m.loss}, {"lr", m.lr}, {"wallclock", m.wallclock}};
}

template <typename Scalar>
double batch_loss(const DenoiserT<Scalar>& model, std::span<const CorruptedBatch> batch,
                  const DiffusionSchedule& schedule, LossWeighting weighting, std::span<Scalar> grad) {
  if (batch.empty()) throw Error(ErrorKind::kInvalidArgument, "empty batch");
  const int steps = model.config().steps;
  std::vector<TokenSequence> inputs;
  inputs.reserve(batch.size());
  for (const auto& item : batch) inputs.push_back(item.xt);

  typename DenoiserT<Scalar>::Tape tape;
  const BatchLogits<Scalar> logits = model.forward_batch(inputs, grad.empty() ? nullptr : &tape);
  BatchLogits<Scalar> dlogits;
  if (!grad.empty())
    for (const auto& block : logits.tracks) dlogits.tracks.push_back(RowMatrix<Scalar>::Zero(block.rows(), block.cols()));

  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const LogitsT<Scalar> piece = slice(logits, static_cast<int>(b), steps);
    LogitsT<Scalar> g;
    const LossResult r = training_loss(batch[b].x0, piece, batch[b].mask, batch[b].t, schedule, weighting,
                                       grad.empty() ? nullptr : &g);
    total += r.loss;
    if (!grad.empty())
      for (std::size_t tr = 0; tr < g.tracks.size(); ++tr)
        dlogits.tracks[tr].middleRows(static_cast<Eigen::Index>(b) * steps, steps) =
            g.tracks[tr] * static_cast<Scalar>(inv_batch);
  }
  const double loss = total * inv_batch;
  if (!grad.empty() && std::isfinite(loss)) model.backward(tape, dlogits, grad);
  return loss;
}

template double batch_loss<float>(const DenoiserT<float>&, std::span<const CorruptedBatch>, const DiffusionSchedule&,
                                  LossWeighting, std::span<float>);
template double batch_loss<double>(const DenoiserT<double>&, std::span<const CorruptedBatch>,
                                   const DiffusionSchedule&, LossWeighting, std::span<double>);

Trainer::Trainer(Denoiser model, TrainOptions options, std::uint64_t seed)
    : Trainer(std::move(model), options, AdamState{}, Rng(seed)) {}

Trainer::Trainer(Denoiser model, TrainOptions options, AdamState state, Rng rng)
    : model_(std::move(model)), options_(options), adam_(std::move(state)), rng_(rng), clock_origin_(now_seconds()) {
  if (options_.batch_size < 1) throw Error(ErrorKind::kInvalidArgument, "batch_size must be positive");
  if (options_.learning_rate < 0) throw Error(ErrorKind::kInvalidArgument, "learning_rate must be non-negative");
  const std::size_t n = model_.parameter_count();
  if (adam_.m.empty() && adam_.v.empty()) {
    adam_.m.assign(n, 0.0f);
    adam_.v.assign(n, 0.0f);
  }
  if (adam_.m.size() != n || adam_.v.size() != n)
    throw Error(ErrorKind::kShapeMismatch, "optimizer state does not match the model");
  grad_.assign(n, 0.0f);
}

TrainMetric Trainer::step(std::span<const TokenSequence> corpus) {
  if (corpus.empty()) throw Error(ErrorKind::kInvalidArgument, "empty training corpus");
  const auto& cfg = model_.config();
  std::vector<CorruptedBatch> batch;
  batch.reserve(static_cast<std::size_t>(options_.batch_size));
  for (int b = 0; b < options_.batch_size; ++b) {
    const auto idx = uniform_int(rng_, 0, static_cast<std::int64_t>(corpus.size()) - 1);
    TokenSequence x0 = corpus[static_cast<std::size_t>(idx)];
    if (x0.steps() != cfg.steps || x0.tracks() != cfg.tracks)
      throw Error(ErrorKind::kShapeMismatch, "corpus piece " + std::to_string(idx) + " does not match the model shape");
    if (options_.augment_semitones > 0) {
      const int shift = static_cast<int>(uniform_int(rng_, -options_.augment_semitones, options_.augment_semitones));
      if (shift != 0) {
        try {
          x0 = transpose_augment(x0, shift);
        } catch (const Error&) {
        }
      }
    }
    const int t = static_cast<int>(uniform_int(rng_, 1, options_.schedule.timesteps));
    if (cfg.tracks > 1) {
      const std::vector<int> subset = sample_track_subset(cfg.tracks, rng_);
      batch.push_back(q_sample(x0, t, options_.schedule, rng_, &subset));
    } else {
      batch.push_back(q_sample(x0, t, options_.schedule, rng_));
    }
  }

  std::fill(grad_.begin(), grad_.end(), 0.0f);
  const double loss = batch_loss<float>(model_, batch, options_.schedule, options_.weighting, grad_);
  if (!std::isfinite(loss))
    throw Error(ErrorKind::kDiverged, "non-finite loss at step " + std::to_string(adam_.step + 1));

  ++adam_.step;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam_.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam_.step));
  const float lr = static_cast<float>(options_.learning_rate);
  const float fb1 = static_cast<float>(b1), fb2 = static_cast<float>(b2);
  const float fc1 = static_cast<float>(c1), fc2 = static_cast<float>(c2);
  const float eps = static_cast<float>(options_.epsilon);
  auto params = model_.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const float g = grad_[i];
    adam_.m[i] = fb1 * adam_.m[i] + (1.0f - fb1) * g;
    adam_.v[i] = fb2 * adam_.v[i] + (1.0f - fb2) * g * g;
    const float mhat = adam_.m[i] / fc1;
    const float vhat = adam_.v[i] / fc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
  return TrainMetric{adam_.step, loss, options_.learning_rate, now_seconds() - clock_origin_};
}

void Trainer::run(std::span<const TokenSequence> corpus, std::int64_t steps,
                  const std::function<void(const TrainMetric&)>& on_metric) {
  for (std::int64_t i = 0; i < steps; ++i) {
    const TrainMetric m = step(corpus);
    if (on_metric) on_metric(m);
  }
}

double masked_token_accuracy(const Denoiser& model, std::span<const TokenSequence> corpus,
                             const DiffusionSchedule& schedule, Rng& rng, int rounds) {
  constexpr std::size_t kChunk = 16;
  std::size_t hits = 0, total = 0;
  for (int r = 0; r < rounds; ++r) {
    for (std::size_t start = 0; start < corpus.size(); start += kChunk) {
      const std::size_t end = std::min(corpus.size(), start + kChunk);
      std::vector<CorruptedBatch> items;
      std::vector<TokenSequence> inputs;
      for (std::size_t i = start; i < end; ++i) {
        const int t = static_cast<int>(uniform_int(rng, 1, schedule.timesteps));
        items.push_back(q_sample(corpus[i], t, schedule, rng));
        inputs.push_back(items.back().xt);
      }
      const BatchLogits<float> logits = model.forward_batch(inputs);
      const int L = model.config().steps;
      for (std::size_t b = 0; b < items.size(); ++b) {
        for (int tr = 0; tr < model.config().tracks; ++tr) {
          const auto& block = logits.tracks[static_cast<std::size_t>(tr)];
          for (int s = 0; s < L; ++s) {
            if (!items[b].mask.at(s, tr)) continue;
            Eigen::Index arg = 0;
            block.row(static_cast<Eigen::Index>(b) * L + s).maxCoeff(&arg);
            hits += static_cast<int>(arg) == items[b].x0.at(s, tr) ? 1 : 0;
            ++total;
          }
        }
      }
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace symdiff
