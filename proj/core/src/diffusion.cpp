#include "symdiff/diffusion.hpp"

#include <cmath>
#include <limits>

#include "symdiff/error.hpp"

namespace symdiff {
namespace {

// Entries of the absorbing kernels without materializing them.
double step_entry(const DiffusionSchedule& schedule, int t, int categories, int from, int to) {
  const int mask = categories;
  if (from == mask) return to == mask ? 1.0 : 0.0;
  const double beta = schedule.step_mask_prob(t);
  if (to == from) return 1.0 - beta;
  if (to == mask) return beta;
  return 0.0;
}

double cumulative_entry(const DiffusionSchedule& schedule, int t, int categories, int from, int to) {
  const int mask = categories;
  if (from == mask) return to == mask ? 1.0 : 0.0;
  const double m = schedule.mask_prob(t);
  if (to == from) return 1.0 - m;
  if (to == mask) return m;
  return 0.0;
}

double kl_divergence(const Eigen::VectorXd& q, const Eigen::VectorXd& p) {
  double kl = 0.0;
  for (Eigen::Index j = 0; j < q.size(); ++j) {
    if (q[j] <= 0.0) continue;
    if (p[j] <= 0.0) return std::numeric_limits<double>::infinity();
    kl += q[j] * (std::log(q[j]) - std::log(p[j]));
  }
  return kl;
}

void check_token(int token, int categories, bool allow_mask, const char* what) {
  const int limit = allow_mask ? categories : categories - 1;
  if (token < 0 || token > limit)
    throw Error(ErrorKind::kOutOfRange, std::string(what) + " token " + std::to_string(token) +
                                            " outside [0, " + std::to_string(limit) + "]");
}

}  // namespace

void DiffusionSchedule::check_timestep(int t, int lo) const {
  if (timesteps < 1) throw Error(ErrorKind::kInvalidArgument, "schedule needs at least one timestep");
  if (t < lo || t > timesteps)
    throw Error(ErrorKind::kOutOfRange, "timestep " + std::to_string(t) + " outside [" + std::to_string(lo) +
                                            ", " + std::to_string(timesteps) + "]");
}

TransitionMatrix step_matrix(const DiffusionSchedule& schedule, int t, int categories) {
  schedule.check_timestep(t);
  TransitionMatrix m{categories, Eigen::MatrixXd::Zero(categories + 1, categories + 1)};
  for (int i = 0; i <= categories; ++i)
    for (int j : {i, categories}) m.q(i, j) = step_entry(schedule, t, categories, i, j);
  return m;
}

TransitionMatrix cumulative_matrix(const DiffusionSchedule& schedule, int t, int categories) {
  schedule.check_timestep(t, 0);
  TransitionMatrix m{categories, Eigen::MatrixXd::Zero(categories + 1, categories + 1)};
  for (int i = 0; i <= categories; ++i)
    for (int j : {i, categories}) m.q(i, j) = cumulative_entry(schedule, t, categories, i, j);
  return m;
}

Eigen::VectorXd posterior(int xt, int x0, int t, const DiffusionSchedule& schedule, int categories) {
  schedule.check_timestep(t, 1);
  check_token(xt, categories, true, "x_t");
  check_token(x0, categories, false, "x_0");
  const double denom = cumulative_entry(schedule, t, categories, x0, xt);
  if (denom <= 0.0)
    throw Error(ErrorKind::kDomain, "x_t = " + std::to_string(xt) + " cannot arise from x_0 = " +
                                        std::to_string(x0) + " under the forward process");
  Eigen::VectorXd p = Eigen::VectorXd::Zero(categories + 1);
  // Only x_{t-1} in {x0, mask} has non-zero prior mass.
  for (int prev : {x0, categories})
    p[prev] = step_entry(schedule, t, categories, prev, xt) *
              cumulative_entry(schedule, t - 1, categories, x0, prev) / denom;
  return p;
}

Eigen::VectorXd posterior_from_matrices(const Eigen::MatrixXd& step, const Eigen::MatrixXd& cumulative_prev,
                                        const Eigen::MatrixXd& cumulative, int xt, int x0) {
  const double denom = cumulative(x0, xt);
  if (denom <= 0.0)
    throw Error(ErrorKind::kDomain, "x_t = " + std::to_string(xt) + " cannot arise from x_0 = " + std::to_string(x0));
  Eigen::VectorXd p = step.col(xt).cwiseProduct(cumulative_prev.row(x0).transpose());
  return p / denom;
}

CorruptedBatch q_sample(const TokenSequence& x0, int t, const DiffusionSchedule& schedule, Rng& rng,
                        const std::vector<int>* tracks) {
  schedule.check_timestep(t);
  if (x0.has_masks()) throw Error(ErrorKind::kInvalidArgument, "q_sample needs a mask-free x_0");
  std::vector<bool> eligible(static_cast<std::size_t>(x0.tracks()), tracks == nullptr);
  if (tracks) {
    for (int tr : *tracks) {
      if (tr < 0 || tr >= x0.tracks()) throw Error(ErrorKind::kOutOfRange, "track subset out of range");
      eligible[static_cast<std::size_t>(tr)] = true;
    }
  }
  CorruptedBatch out{x0, x0, t, MaskPattern(x0.steps(), x0.tracks())};
  const double p = schedule.mask_prob(t);
  for (int s = 0; s < x0.steps(); ++s) {
    for (int tr = 0; tr < x0.tracks(); ++tr) {
      if (!eligible[static_cast<std::size_t>(tr)]) continue;
      if (uniform01(rng) < p) {
        out.xt.set(s, tr, x0.mask_id(tr));
        out.mask.set(s, tr, true);
      }
    }
  }
  return out;
}

std::vector<int> sample_track_subset(int tracks, Rng& rng) {
  const auto bits = uniform_int(rng, 1, (std::int64_t{1} << tracks) - 1);
  std::vector<int> subset;
  for (int tr = 0; tr < tracks; ++tr)
    if (bits & (std::int64_t{1} << tr)) subset.push_back(tr);
  return subset;
}

double loss_weight(int t, const DiffusionSchedule& schedule, LossWeighting weighting) {
  if (weighting == LossWeighting::kUniform) return 1.0;
  const double T = schedule.timesteps;
  return std::max(0.0, (T - t - 1.0) / T);
}

template <typename Scalar>
LossResult training_loss(const TokenSequence& x0, const LogitsT<Scalar>& logits, const MaskPattern& mask, int t,
                         const DiffusionSchedule& schedule, LossWeighting weighting, LogitsT<Scalar>* grad) {
  schedule.check_timestep(t);
  if (!mask.matches(x0) || static_cast<int>(logits.tracks.size()) != x0.tracks())
    throw Error(ErrorKind::kShapeMismatch, "logits/mask do not match the piece");
  const double w = loss_weight(t, schedule, weighting);
  if (grad) {
    grad->tracks.resize(logits.tracks.size());
    for (std::size_t tr = 0; tr < logits.tracks.size(); ++tr)
      grad->tracks[tr] = RowMatrix<Scalar>::Zero(logits.tracks[tr].rows(), logits.tracks[tr].cols());
  }
  LossResult result;
  double total = 0.0;
  for (int tr = 0; tr < x0.tracks(); ++tr) {
    const auto& block = logits.tracks[static_cast<std::size_t>(tr)];
    if (block.rows() != x0.steps() || block.cols() != x0.vocab_size(tr))
      throw Error(ErrorKind::kShapeMismatch, "logit block " + std::to_string(tr) + " has the wrong shape");
    for (int s = 0; s < x0.steps(); ++s) {
      if (!mask.at(s, tr)) continue;
      ++result.masked;
      const Eigen::RowVectorXd row = block.row(s).template cast<double>();
      const double mx = row.maxCoeff();
      const double lse = mx + std::log((row.array() - mx).exp().sum());
      total += lse - row[x0.at(s, tr)];
      if (grad && w != 0.0) {
        auto g = grad->tracks[static_cast<std::size_t>(tr)].row(s);
        for (Eigen::Index k = 0; k < row.size(); ++k) {
          const double p = std::exp(row[k] - lse);
          g[k] = static_cast<Scalar>(w * (p - (k == x0.at(s, tr) ? 1.0 : 0.0)));
        }
      }
    }
  }
  result.loss = w * total;
  result.no_masked_positions = result.masked == 0;
  return result;
}

template LossResult training_loss<float>(const TokenSequence&, const LogitsT<float>&, const MaskPattern&, int,
                                         const DiffusionSchedule&, LossWeighting, LogitsT<float>*);
template LossResult training_loss<double>(const TokenSequence&, const LogitsT<double>&, const MaskPattern&, int,
                                          const DiffusionSchedule&, LossWeighting, LogitsT<double>*);

ElboTerms elbo_terms_at(const TokenSequence& x0, const TokenSequence& xt, int t, const X0Predictor& model,
                        const DiffusionSchedule& schedule) {
  schedule.check_timestep(t);
  if (x0.steps() != xt.steps() || x0.tracks() != xt.tracks())
    throw Error(ErrorKind::kShapeMismatch, "x_0 and x_t shapes differ");
  ElboTerms terms;
  terms.t = t;

  for (int tr = 0; tr < x0.tracks(); ++tr) {
    const int k = x0.vocab_size(tr);
    Eigen::VectorXd prior = Eigen::VectorXd::Zero(k + 1);
    prior[k] = 1.0;
    for (int s = 0; s < x0.steps(); ++s) {
      Eigen::VectorXd q_final = Eigen::VectorXd::Zero(k + 1);
      for (int to : {static_cast<int>(x0.at(s, tr)), k})
        q_final[to] = cumulative_entry(schedule, schedule.timesteps, k, x0.at(s, tr), to);
      terms.prior += kl_divergence(q_final, prior);
    }
  }

  const ProbGrid probs = model(xt);
  if (static_cast<int>(probs.tracks.size()) != x0.tracks())
    throw Error(ErrorKind::kShapeMismatch, "model returned the wrong number of tracks");

  for (int tr = 0; tr < x0.tracks(); ++tr) {
    const int k = x0.vocab_size(tr);
    const auto& p0 = probs.tracks[static_cast<std::size_t>(tr)];
    for (int s = 0; s < x0.steps(); ++s) {
      const int a = xt.at(s, tr);
      const int clean = x0.at(s, tr);
      if (a != k) {
        if (a != clean) throw Error(ErrorKind::kDomain, "x_t changed an unmasked token");
        continue;  // both posteriors are the same point mass
      }
      if (t == 1) {
        terms.reconstruction -= std::log(p0(s, clean));
        continue;
      }
      const Eigen::VectorXd q = posterior(k, clean, t, schedule, k);
      Eigen::VectorXd p = Eigen::VectorXd::Zero(k + 1);
      for (int cand = 0; cand < k; ++cand) {
        const double w = p0(s, cand);
        if (w != 0.0) p += w * posterior(k, cand, t, schedule, k);
      }
      terms.kl += kl_divergence(q, p);
    }
  }
  return terms;
}

ElboTerms elbo_terms(const TokenSequence& x0, const X0Predictor& model, const DiffusionSchedule& schedule, Rng& rng) {
  const int t = static_cast<int>(uniform_int(rng, 1, schedule.timesteps));
  const CorruptedBatch batch = q_sample(x0, t, schedule, rng);
  return elbo_terms_at(x0, batch.xt, t, model, schedule);
}

}  // namespace symdiff
