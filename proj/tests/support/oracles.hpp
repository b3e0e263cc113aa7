#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. Nothing here calls into the library code it is meant to check.

#include <functional>
#include <vector>

#include <Eigen/Core>

#include "symdiff/metrics.hpp"
#include "symdiff/sampler.hpp"
#include "symdiff/token_model.hpp"

namespace symdiff::testing {

// Per-step kernels over n states, built by hand from beta_t = 1 / (T - t + 1).
// Absorbing: the last state is the mask. Uniform: jump anywhere (mask-free).
Eigen::MatrixXd absorbing_step(int categories, int timesteps, int t);
Eigen::MatrixXd uniform_step(int states, int timesteps, int t);
// Closed form of the uniform product: abar I + (1 - abar) / n 11^T.
Eigen::MatrixXd uniform_cumulative(int states, int timesteps, int t);

// Q_1 Q_2 ... Q_t by explicit multiplication.
Eigen::MatrixXd compose(const std::function<Eigen::MatrixXd(int)>& step, int t, int states);

// Distribution of x_t given x_0 by summing the probability of every path
// x_0 -> x_1 -> ... -> x_t.
Eigen::VectorXd path_marginal(const std::function<Eigen::MatrixXd(int)>& step, int t, int states, int x0);

// q(x_{t-1} | x_t, x_0) over whole sequences by Bayes' rule, enumerating every
// predecessor sequence. Returns a map from the predecessor index
// (base `states`, position 0 most significant) to its probability.
std::vector<double> brute_force_sequence_posterior(const std::vector<int>& xt, const std::vector<int>& x0, int t,
                                                   int categories, int timesteps);

// Adaptive Gauss-Kronrod integral of min(pdf_a, pdf_b).
double overlap_area_quadrature(const Gaussian& a, const Gaussian& b);

// Emits overwhelming logits on a fixed x0, whatever the input.
class OracleModel : public UnmaskingModel {
 public:
  explicit OracleModel(TokenSequence x0) : x0_(std::move(x0)) {}
  int tracks() const override { return x0_.tracks(); }
  int steps() const override { return x0_.steps(); }
  Logits logits(const TokenSequence& xt) const override;

 private:
  TokenSequence x0_;
};

// Uniform logits everywhere; counts calls.
class FlatModel : public UnmaskingModel {
 public:
  FlatModel(int tracks, int steps) : tracks_(tracks), steps_(steps) {}
  int tracks() const override { return tracks_; }
  int steps() const override { return steps_; }
  Logits logits(const TokenSequence& xt) const override;
  mutable std::size_t calls = 0;

 private:
  int tracks_;
  int steps_;
};

// Hand-written Standard MIDI File with one track per entry of `tracks`.
// Each entry is a list of (tick, status, data1, data2) channel events.
struct RawEvent {
  unsigned tick;
  int status;
  int data1;
  int data2;
};
std::vector<std::uint8_t> handmade_midi(int ticks_per_quarter, const std::vector<std::vector<RawEvent>>& tracks,
                                        int numerator = 4, int denominator_pow2 = 2, int tempo_us = 500000);

}  // namespace symdiff::testing
