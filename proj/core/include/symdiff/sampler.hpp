#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <vector>

#include "symdiff/denoiser.hpp"
#include "symdiff/diffusion.hpp"
#include "symdiff/mask_pattern.hpp"
#include "symdiff/random.hpp"
#include "symdiff/token_model.hpp"

namespace symdiff {

// Anything that maps a partially masked piece to logits over x0.
class UnmaskingModel {
 public:
  virtual ~UnmaskingModel() = default;
  virtual int tracks() const = 0;
  virtual int steps() const = 0;
  virtual Logits logits(const TokenSequence& xt) const = 0;
};

class NetworkModel : public UnmaskingModel {
 public:
  explicit NetworkModel(const Denoiser& net) : net_(net) {}
  int tracks() const override { return net_.config().tracks; }
  int steps() const override { return net_.config().steps; }
  Logits logits(const TokenSequence& xt) const override { return net_.forward(xt); }

 private:
  const Denoiser& net_;
};

struct TokenDelta {
  int step = 0;
  int track = 0;
  Token value = 0;
};

// One reverse-diffusion step. `index` runs 1..steps; `t` counts down.
struct StepMessage {
  int index = 0;
  int t = 0;
  std::size_t remaining_masks = 0;
  std::vector<TokenDelta> deltas;
};

using StepObserver = std::function<void(const StepMessage&, const TokenSequence& xt)>;

// Algorithm-1 style guidance: the loss sees per-position probabilities over x0
// (one-hot at positions already fixed) and writes its gradient into `grad`.
struct GuidanceSpec {
  std::function<double(const ProbGrid& probs, ProbGrid& grad)> loss;
  double scale = 0.0;
};

struct SampleOptions {
  int steps = 0;  // 0 = schedule.timesteps
  // Test mode: commit the leftmost ceil(masked / t) positions instead of a
  // random 1/t subset.
  bool left_to_right = false;
  StepObserver on_step;
  const std::atomic<bool>* cancel = nullptr;
  const GuidanceSpec* guidance = nullptr;
};

struct SampleStats {
  std::size_t model_calls = 0;
  // Rows whose guided distribution collapsed to zero and fell back to the
  // unguided softmax.
  std::size_t guidance_fallbacks = 0;
};

// Reverse process from `init`, whose mask ids must sit exactly where `pattern`
// is set. Each step commits every still-masked position with probability 1/t
// and draws it from the (optionally guided) model distribution; committed and
// context positions never change.
TokenSequence sample(const UnmaskingModel& model, const DiffusionSchedule& schedule, const TokenSequence& init,
                     const MaskPattern& pattern, Rng& rng, const SampleOptions& options = {},
                     SampleStats* stats = nullptr);

TokenSequence sample_unconditional(const UnmaskingModel& model, const DiffusionSchedule& schedule, Rng& rng,
                                   const SampleOptions& options = {}, SampleStats* stats = nullptr);

TokenSequence infill(const UnmaskingModel& model, const DiffusionSchedule& schedule, const TokenSequence& seq,
                     const MaskPattern& pattern, Rng& rng, const SampleOptions& options = {},
                     SampleStats* stats = nullptr);

// Regenerates steps [256, 768) of a 1024-step piece in all tracks.
TokenSequence infill_central(const UnmaskingModel& model, const DiffusionSchedule& schedule, const TokenSequence& seq,
                             Rng& rng, const SampleOptions& options = {}, SampleStats* stats = nullptr);

// Regenerates whole tracks of a trio, keeping the others.
TokenSequence accompany(const UnmaskingModel& model, const DiffusionSchedule& schedule, const TokenSequence& seq,
                        const std::vector<int>& tracks_to_generate, Rng& rng, const SampleOptions& options = {},
                        SampleStats* stats = nullptr);

TokenSequence guided_sample(const UnmaskingModel& model, const DiffusionSchedule& schedule,
                            const GuidanceSpec& guidance, int steps, Rng& rng, SampleStats* stats = nullptr);

// Per-position softmax probabilities in double precision.
ProbGrid softmax_probs(const Logits& logits);

}  // namespace symdiff
