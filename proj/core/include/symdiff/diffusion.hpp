#pragma once

#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "symdiff/mask_pattern.hpp"
#include "symdiff/random.hpp"
#include "symdiff/token_model.hpp"

namespace symdiff {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Per-track (steps x vocab) blocks. Logits never carry a column for the mask state.
template <typename Scalar>
struct TrackBlocks {
  std::vector<RowMatrix<Scalar>> tracks;
};

template <typename Scalar>
using LogitsT = TrackBlocks<Scalar>;
using Logits = LogitsT<float>;
// Probabilities over x0 for every position, mask class excluded.
using ProbGrid = TrackBlocks<double>;

// Absorbing schedule: a token is masked by time t with probability t / T.
struct DiffusionSchedule {
  int timesteps = 1024;

  double mask_prob(int t) const { return static_cast<double>(t) / timesteps; }
  // Per-step absorption probability beta_t = 1 / (T - t + 1), which makes
  // the cumulative law exactly t / T.
  double step_mask_prob(int t) const { return 1.0 / (timesteps - t + 1); }
  // Throws Error(kOutOfRange) unless lo <= t <= T.
  void check_timestep(int t, int lo = 1) const;
};

// Dense (K+1) x (K+1) row-stochastic matrix, rows indexed by the previous
// state. Index K is the absorbing mask state.
struct TransitionMatrix {
  int categories = 0;  // K, excluding the mask state
  Eigen::MatrixXd q;

  int mask_state() const { return categories; }
};

// Single-step kernel Q_t.
TransitionMatrix step_matrix(const DiffusionSchedule& schedule, int t, int categories);
// Closed-form product Q_1 ... Q_t; t = 0 yields the identity.
TransitionMatrix cumulative_matrix(const DiffusionSchedule& schedule, int t, int categories);

// q(x_{t-1} | x_t, x_0) over K+1 states, via
//   (x_t Q_t^T  o  x_0 Qbar_{t-1}) / (x_0 Qbar_t x_t^T).
// Throws Error(kDomain) when the pair (x_t, x_0) is impossible.
Eigen::VectorXd posterior(int xt, int x0, int t, const DiffusionSchedule& schedule, int categories);

// Same closed form for arbitrary kernels; shared with test oracles.
Eigen::VectorXd posterior_from_matrices(const Eigen::MatrixXd& step, const Eigen::MatrixXd& cumulative_prev,
                                        const Eigen::MatrixXd& cumulative, int xt, int x0);

struct CorruptedBatch {
  TokenSequence x0;
  TokenSequence xt;
  int t = 0;
  MaskPattern mask;
};

// Masks each eligible token independently with probability t/T. When
// `tracks` is given only those tracks are eligible.
CorruptedBatch q_sample(const TokenSequence& x0, int t, const DiffusionSchedule& schedule, Rng& rng,
                        const std::vector<int>* tracks = nullptr);

// Trio corruption: pick a non-empty subset of tracks uniformly (7 choices)
// and corrupt only inside it.
std::vector<int> sample_track_subset(int tracks, Rng& rng);

enum class LossWeighting {
  kReweighted,  // max(0, (T - t - 1) / T)
  kUniform,     // 1
};

double loss_weight(int t, const DiffusionSchedule& schedule, LossWeighting weighting);

struct LossResult {
  double loss = 0.0;
  std::size_t masked = 0;
  bool no_masked_positions = false;
};

// Weighted sum of cross-entropies over masked positions for one piece.
// When `grad` is non-null it receives dLoss/dLogits (zero at unmasked rows).
template <typename Scalar>
LossResult training_loss(const TokenSequence& x0, const LogitsT<Scalar>& logits, const MaskPattern& mask, int t,
                         const DiffusionSchedule& schedule, LossWeighting weighting = LossWeighting::kReweighted,
                         LogitsT<Scalar>* grad = nullptr);

// x0-parameterized model: per-position probabilities over x0 given x_t.
using X0Predictor = std::function<ProbGrid(const TokenSequence& xt)>;

struct ElboTerms {
  int t = 0;
  double prior = 0.0;           // L_T
  double kl = 0.0;              // L_{t-1}, zero when t == 1
  double reconstruction = 0.0;  // L_0, zero when t > 1
};

// Terms of the variational bound at a given (t, x_t).
ElboTerms elbo_terms_at(const TokenSequence& x0, const TokenSequence& xt, int t, const X0Predictor& model,
                        const DiffusionSchedule& schedule);

// Stochastic estimate: t uniform on {1..T}, x_t ~ q(x_t | x_0).
ElboTerms elbo_terms(const TokenSequence& x0, const X0Predictor& model, const DiffusionSchedule& schedule, Rng& rng);

}  // namespace symdiff
