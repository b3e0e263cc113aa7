#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "symdiff/denoiser.hpp"
#include "symdiff/diffusion.hpp"
#include "symdiff/random.hpp"

namespace symdiff {

struct TrainOptions {
  DiffusionSchedule schedule;
  LossWeighting weighting = LossWeighting::kReweighted;
  int batch_size = 16;
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Random transposition in [-augment_semitones, +augment_semitones]; shifts
  // that would leave the pitch range are skipped for that piece.
  int augment_semitones = 0;
};

struct AdamState {
  std::vector<float> m;
  std::vector<float> v;
  std::int64_t step = 0;
};

struct TrainMetric {
  std::int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double wallclock = 0.0;  // seconds since the trainer was created
};

nlohmann::json metric_to_json(const TrainMetric& m);

class Trainer {
 public:
  Trainer(Denoiser model, TrainOptions options, std::uint64_t seed);
  // Resumes from saved optimizer state and RNG.
  Trainer(Denoiser model, TrainOptions options, AdamState state, Rng rng);

  // One optimizer update on a batch drawn uniformly (with replacement) from
  // the corpus. Throws Error(kDiverged) on a non-finite loss, leaving the
  // parameters untouched.
  TrainMetric step(std::span<const TokenSequence> corpus);

  // Runs `steps` updates; `on_metric` sees every step.
  void run(std::span<const TokenSequence> corpus, std::int64_t steps,
           const std::function<void(const TrainMetric&)>& on_metric = {});

  const Denoiser& model() const { return model_; }
  const AdamState& optimizer() const { return adam_; }
  const TrainOptions& options() const { return options_; }
  const Rng& rng() const { return rng_; }

 private:
  Denoiser model_;
  TrainOptions options_;
  AdamState adam_;
  Rng rng_;
  double clock_origin_ = 0.0;
  // Aligned like the parameters so resumed runs round identically.
  std::vector<float, Eigen::aligned_allocator<float>> grad_;
};

// Mean batch loss and gradient for fixed corrupted inputs. Shared by the
// trainer and by gradient checks.
template <typename Scalar>
double batch_loss(const DenoiserT<Scalar>& model, std::span<const CorruptedBatch> batch,
                  const DiffusionSchedule& schedule, LossWeighting weighting, std::span<Scalar> grad);

// Argmax accuracy over masked positions, with t ~ U{1..T} and x_t ~ q(x_t | x_0)
// drawn `rounds` times per piece.
double masked_token_accuracy(const Denoiser& model, std::span<const TokenSequence> corpus,
                             const DiffusionSchedule& schedule, Rng& rng, int rounds = 1);

}  // namespace symdiff
