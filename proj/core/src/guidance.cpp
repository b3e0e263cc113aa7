#include "symdiff/guidance.hpp"

#include <cmath>
#include <memory>

#include "symdiff/error.hpp"

namespace symdiff {
namespace {

struct Sample {
  DensityClassifier::Features x;
  double y;
};

std::vector<Sample> measures(const std::vector<TokenSequence>& pieces) {
  std::vector<Sample> out;
  for (const auto& p : pieces) {
    if (p.steps_per_bar() != kStepsPerBar) throw Error(ErrorKind::kUnsupported, "density features need 16 steps per bar");
    for (int b = 0; b < p.bars(); ++b) {
      Sample s{measure_features(p, b), 0.0};
      for (double v : s.x) s.y += v;
      out.push_back(s);
    }
  }
  return out;
}

}  // namespace

DensityClassifier::DensityClassifier(std::uint64_t seed)
    : w1_(kInputs * kHidden), b1_(kHidden, 0.0), w2_(kHidden), seed_(seed) {
  Rng rng(seed);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(kInputs));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(kHidden));
  for (double& w : w1_) w = s1 * normal01(rng);
  for (double& w : w2_) w = s2 * normal01(rng);
}

double DensityClassifier::predict(const Features& x) const {
  Features unused;
  return predict(x, unused);
}

double DensityClassifier::predict(const Features& x, Features& dx) const {
  double y = b2_;
  std::array<double, kHidden> dh{};
  for (int j = 0; j < kHidden; ++j) {
    double a = b1_[static_cast<std::size_t>(j)];
    for (int i = 0; i < kInputs; ++i) a += x[static_cast<std::size_t>(i)] * w1_[static_cast<std::size_t>(i * kHidden + j)];
    const double h = std::tanh(a);
    y += w2_[static_cast<std::size_t>(j)] * h;
    dh[static_cast<std::size_t>(j)] = w2_[static_cast<std::size_t>(j)] * (1.0 - h * h);
  }
  for (int i = 0; i < kInputs; ++i) {
    double g = 0.0;
    for (int j = 0; j < kHidden; ++j) g += w1_[static_cast<std::size_t>(i * kHidden + j)] * dh[static_cast<std::size_t>(j)];
    dx[static_cast<std::size_t>(i)] = g;
  }
  return y;
}

void DensityClassifier::train(const std::vector<TokenSequence>& pieces, int epochs, double learning_rate,
                              int soft_copies) {
  std::vector<Sample> data = measures(pieces);
  if (data.empty()) throw Error(ErrorKind::kInvalidArgument, "no measures to train the density classifier on");
  if (soft_copies < 0) throw Error(ErrorKind::kInvalidArgument, "soft_copies must be non-negative");
  Rng rng(derive_seed(seed_, 1));
  const std::size_t real = data.size();
  for (std::size_t k = 0; k < real; ++k)
    for (int c = 0; c < soft_copies; ++c) {
      Sample s{data[k].x, 0.0};
      const double mix = uniform01(rng);
      for (double& v : s.x) {
        v = (1.0 - mix) * v + mix * uniform01(rng);
        s.y += v;
      }
      data.push_back(s);
    }
  validated_ = false;
  validation_accuracy_ = 0.0;

  const std::size_t n1 = w1_.size(), n2 = b1_.size(), n3 = w2_.size();
  const std::size_t total = n1 + n2 + n3 + 1;
  std::vector<double> m(total, 0.0), v(total, 0.0), g(total);
  auto param = [&](std::size_t i) -> double& {
    if (i < n1) return w1_[i];
    if (i < n1 + n2) return b1_[i - n1];
    if (i < n1 + n2 + n3) return w2_[i - n1 - n2];
    return b2_;
  };
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    std::fill(g.begin(), g.end(), 0.0);
    for (const Sample& s : data) {
      std::array<double, kHidden> h{};
      double y = b2_;
      for (int j = 0; j < kHidden; ++j) {
        double a = b1_[static_cast<std::size_t>(j)];
        for (int i = 0; i < kInputs; ++i) a += s.x[static_cast<std::size_t>(i)] * w1_[static_cast<std::size_t>(i * kHidden + j)];
        h[static_cast<std::size_t>(j)] = std::tanh(a);
        y += w2_[static_cast<std::size_t>(j)] * h[static_cast<std::size_t>(j)];
      }
      const double dy = 2.0 * (y - s.y) / static_cast<double>(data.size());
      g[total - 1] += dy;
      for (int j = 0; j < kHidden; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        g[n1 + n2 + ju] += dy * h[ju];
        const double da = dy * w2_[ju] * (1.0 - h[ju] * h[ju]);
        g[n1 + ju] += da;
        for (int i = 0; i < kInputs; ++i) g[static_cast<std::size_t>(i * kHidden + j)] += da * s.x[static_cast<std::size_t>(i)];
      }
    }
    const double c1 = 1.0 - std::pow(0.9, epoch);
    const double c2 = 1.0 - std::pow(0.999, epoch);
    for (std::size_t i = 0; i < total; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      param(i) -= learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + 1e-8);
    }
  }
}

double DensityClassifier::accuracy(const std::vector<TokenSequence>& pieces, int tolerance) const {
  const std::vector<Sample> data = measures(pieces);
  if (data.empty()) throw Error(ErrorKind::kInvalidArgument, "no measures to evaluate the density classifier on");
  std::size_t hits = 0;
  for (const Sample& s : data)
    if (std::abs(std::lround(predict(s.x)) - std::lround(s.y)) <= tolerance) ++hits;
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

double DensityClassifier::validate(const std::vector<TokenSequence>& held_out, double threshold) {
  validation_accuracy_ = accuracy(held_out, 1);
  validated_ = validation_accuracy_ >= threshold;
  return validation_accuracy_;
}

nlohmann::json DensityClassifier::to_json() const {
  return {{"inputs", kInputs}, {"hidden", kHidden}, {"w1", w1_}, {"b1", b1_}, {"w2", w2_}, {"b2", b2_},
          {"validated", validated_}, {"validation_accuracy", validation_accuracy_}};
}

DensityClassifier DensityClassifier::from_json(const nlohmann::json& j) {
  DensityClassifier c;
  try {
    if (j.at("inputs") != kInputs || j.at("hidden") != kHidden)
      throw Error(ErrorKind::kShapeMismatch, "density classifier has a different shape");
    c.w1_ = j.at("w1").get<std::vector<double>>();
    c.b1_ = j.at("b1").get<std::vector<double>>();
    c.w2_ = j.at("w2").get<std::vector<double>>();
    c.b2_ = j.at("b2").get<double>();
    c.validated_ = j.value("validated", false);
    c.validation_accuracy_ = j.value("validation_accuracy", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("malformed density classifier: ") + e.what());
  }
  if (c.w1_.size() != static_cast<std::size_t>(kInputs * kHidden) || c.b1_.size() != kHidden || c.w2_.size() != kHidden)
    throw Error(ErrorKind::kShapeMismatch, "density classifier weights have the wrong size");
  return c;
}

DensityClassifier::Features measure_features(const ProbGrid& probs, int bar, int track) {
  const auto& block = probs.tracks.at(static_cast<std::size_t>(track));
  if (block.cols() != PitchVocab::kSize) throw Error(ErrorKind::kShapeMismatch, "density features need a pitch track");
  const int begin = bar * kStepsPerBar;
  if (bar < 0 || begin + kStepsPerBar > block.rows()) throw Error(ErrorKind::kOutOfRange, "bar outside the piece");
  DensityClassifier::Features f{};
  for (int s = 0; s < kStepsPerBar; ++s)
    f[static_cast<std::size_t>(s)] = block.row(begin + s).head(PitchVocab::kPitchCount).sum();
  return f;
}

DensityClassifier::Features measure_features(const TokenSequence& seq, int bar, int track) {
  if (seq.vocab_size(track) != PitchVocab::kSize) throw Error(ErrorKind::kShapeMismatch, "density features need a pitch track");
  const int begin = bar * seq.steps_per_bar();
  if (bar < 0 || bar >= seq.bars()) throw Error(ErrorKind::kOutOfRange, "bar outside the piece");
  DensityClassifier::Features f{};
  for (int s = 0; s < kStepsPerBar; ++s) f[static_cast<std::size_t>(s)] = PitchVocab::is_pitch(seq.at(begin + s, track)) ? 1.0 : 0.0;
  return f;
}

double density_loss(const DensityClassifier& classifier, const ProbGrid& probs, const std::vector<int>& targets,
                    ProbGrid* grad) {
  if (probs.tracks.empty()) throw Error(ErrorKind::kShapeMismatch, "empty probability grid");
  const auto bars = static_cast<std::size_t>(probs.tracks[0].rows() / kStepsPerBar);
  if (targets.size() != bars)
    throw Error(ErrorKind::kShapeMismatch, std::to_string(targets.size()) + " density targets for " +
                                               std::to_string(bars) + " bars");
  if (grad) {
    grad->tracks.resize(probs.tracks.size());
    for (std::size_t tr = 0; tr < probs.tracks.size(); ++tr)
      if (grad->tracks[tr].rows() != probs.tracks[tr].rows() || grad->tracks[tr].cols() != probs.tracks[tr].cols())
        grad->tracks[tr] = RowMatrix<double>::Zero(probs.tracks[tr].rows(), probs.tracks[tr].cols());
  }
  double loss = 0.0;
  for (std::size_t b = 0; b < bars; ++b) {
    const auto f = measure_features(probs, static_cast<int>(b));
    DensityClassifier::Features df;
    const double diff = classifier.predict(f, df) - targets[b];
    loss += diff * diff;
    if (grad)
      for (int s = 0; s < kStepsPerBar; ++s)
        grad->tracks[0].row(static_cast<Eigen::Index>(b) * kStepsPerBar + s).head(PitchVocab::kPitchCount).array() +=
            2.0 * diff * df[static_cast<std::size_t>(s)];
  }
  return loss;
}

GuidanceSpec density_guidance(const DensityClassifier& classifier, std::vector<int> targets, double scale) {
  if (!classifier.validated())
    throw Error(ErrorKind::kInvalidArgument, "density classifier has not passed validation; refusing guidance");
  auto shared = std::make_shared<const DensityClassifier>(classifier);
  GuidanceSpec spec;
  spec.scale = scale;
  spec.loss = [shared, targets = std::move(targets)](const ProbGrid& probs, ProbGrid& grad) {
    return density_loss(*shared, probs, targets, &grad);
  };
  return spec;
}

}  // namespace symdiff
