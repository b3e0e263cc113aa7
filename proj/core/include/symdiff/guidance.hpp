#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "symdiff/diffusion.hpp"
#include "symdiff/sampler.hpp"

namespace symdiff {

// Predicts onsets per measure from per-step expected onset indicators (the
// probability mass on pitch tokens at each step). A 16-32-1 MLP with a tanh
// hidden layer.
class DensityClassifier {
 public:
  static constexpr int kInputs = kStepsPerBar;
  static constexpr int kHidden = 32;
  using Features = std::array<double, kInputs>;

  explicit DensityClassifier(std::uint64_t seed = 0);

  double predict(const Features& x) const;
  // Prediction plus d(prediction)/d(features).
  double predict(const Features& x, Features& dx) const;

  // Full-batch Adam on squared error over every measure of the melody track.
  // Guidance feeds soft probabilities, so each measure also contributes
  // `soft_copies` blends toward random probabilities, labelled with their
  // expected onset count.
  void train(const std::vector<TokenSequence>& pieces, int epochs, double learning_rate, int soft_copies = 3);
  // Fraction of measures whose rounded prediction is within `tolerance` of the
  // true onset count.
  double accuracy(const std::vector<TokenSequence>& pieces, int tolerance) const;
  // Marks the classifier usable for guidance when the +-1 accuracy on the
  // held-out pieces reaches `threshold`. Returns that accuracy.
  double validate(const std::vector<TokenSequence>& held_out, double threshold = 0.9);
  bool validated() const { return validated_; }
  double validation_accuracy() const { return validation_accuracy_; }

  nlohmann::json to_json() const;
  static DensityClassifier from_json(const nlohmann::json& j);

 private:
  std::vector<double> w1_;  // kInputs x kHidden, row-major
  std::vector<double> b1_;
  std::vector<double> w2_;
  double b2_ = 0.0;
  std::uint64_t seed_ = 0;
  bool validated_ = false;
  double validation_accuracy_ = 0.0;
};

// Features of one measure of `track` from a probability grid.
DensityClassifier::Features measure_features(const ProbGrid& probs, int bar, int track = 0);
// Features of one measure of a concrete piece (one-hot probabilities).
DensityClassifier::Features measure_features(const TokenSequence& seq, int bar, int track = 0);

// Sum over measures of (predicted - target)^2; gradient written into `grad`
// (same shape as probs) when non-null.
double density_loss(const DensityClassifier& classifier, const ProbGrid& probs, const std::vector<int>& targets,
                    ProbGrid* grad);

// Guidance toward per-measure onset targets. Throws Error(kInvalidArgument)
// when the classifier has not passed validation.
GuidanceSpec density_guidance(const DensityClassifier& classifier, std::vector<int> targets, double scale);

}  // namespace symdiff
