#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace symdiff::testing {

namespace {

double beta(int timesteps, int t) { return 1.0 / static_cast<double>(timesteps - t + 1); }

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

void put_varlen(std::vector<std::uint8_t>& out, std::uint32_t v) {
  std::uint8_t buf[5];
  int n = 0;
  buf[n++] = v & 0x7f;
  while ((v >>= 7) != 0) buf[n++] = static_cast<std::uint8_t>(0x80 | (v & 0x7f));
  while (n > 0) out.push_back(buf[--n]);
}

}  // namespace

Eigen::MatrixXd absorbing_step(int categories, int timesteps, int t) {
  const int n = categories + 1;
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n, n);
  const double b = beta(timesteps, t);
  for (int i = 0; i < categories; ++i) {
    q(i, i) = 1.0 - b;
    q(i, categories) = b;
  }
  q(categories, categories) = 1.0;
  return q;
}

Eigen::MatrixXd uniform_step(int states, int timesteps, int t) {
  const double b = beta(timesteps, t);
  Eigen::MatrixXd q = Eigen::MatrixXd::Constant(states, states, b / states);
  q.diagonal().array() += 1.0 - b;
  return q;
}

Eigen::MatrixXd uniform_cumulative(int states, int timesteps, int t) {
  double abar = 1.0;
  for (int s = 1; s <= t; ++s) abar *= 1.0 - beta(timesteps, s);
  Eigen::MatrixXd q = Eigen::MatrixXd::Constant(states, states, (1.0 - abar) / states);
  q.diagonal().array() += abar;
  return q;
}

Eigen::MatrixXd compose(const std::function<Eigen::MatrixXd(int)>& step, int t, int states) {
  Eigen::MatrixXd q = Eigen::MatrixXd::Identity(states, states);
  for (int s = 1; s <= t; ++s) q = q * step(s);
  return q;
}

Eigen::VectorXd path_marginal(const std::function<Eigen::MatrixXd(int)>& step, int t, int states, int x0) {
  std::vector<Eigen::MatrixXd> kernels;
  for (int s = 1; s <= t; ++s) kernels.push_back(step(s));
  Eigen::VectorXd out = Eigen::VectorXd::Zero(states);
  std::vector<int> path(static_cast<std::size_t>(t), 0);
  // Odometer over all states^t paths.
  while (true) {
    double p = 1.0;
    int prev = x0;
    for (int s = 0; s < t && p != 0.0; ++s) {
      p *= kernels[static_cast<std::size_t>(s)](prev, path[static_cast<std::size_t>(s)]);
      prev = path[static_cast<std::size_t>(s)];
    }
    if (t == 0) {
      out(x0) = 1.0;
      return out;
    }
    out(path.back()) += p;
    int k = t - 1;
    while (k >= 0 && ++path[static_cast<std::size_t>(k)] == states) path[static_cast<std::size_t>(k--)] = 0;
    if (k < 0) break;
  }
  return out;
}

std::vector<double> brute_force_sequence_posterior(const std::vector<int>& xt, const std::vector<int>& x0, int t,
                                                   int categories, int timesteps) {
  const int n = categories + 1;
  const auto step = [&](int s) { return absorbing_step(categories, timesteps, s); };
  const Eigen::MatrixXd prev_marginal = compose(step, t - 1, n);
  const Eigen::MatrixXd qt = step(t);
  const std::size_t len = xt.size();
  std::size_t total = 1;
  for (std::size_t i = 0; i < len; ++i) total *= static_cast<std::size_t>(n);
  std::vector<double> joint(total, 0.0);
  double norm = 0.0;
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t rest = code;
    double p = 1.0;
    for (std::size_t i = len; i-- > 0;) {
      const int y = static_cast<int>(rest % static_cast<std::size_t>(n));
      rest /= static_cast<std::size_t>(n);
      p *= prev_marginal(x0[i], y) * qt(y, xt[i]);
    }
    joint[code] = p;
    norm += p;
  }
  if (norm == 0.0) return {};
  for (double& p : joint) p /= norm;
  return joint;
}

double overlap_area_quadrature(const Gaussian& a, const Gaussian& b) {
  const double sa = std::sqrt(a.variance);
  const double sb = std::sqrt(b.variance);
  const auto pdf = [](double x, double mu, double s) {
    const double z = (x - mu) / s;
    return std::exp(-0.5 * z * z) / (s * std::sqrt(2.0 * M_PI));
  };
  const auto f = [&](double x) { return std::min(pdf(x, a.mean, sa), pdf(x, b.mean, sb)); };
  const double smax = std::max(sa, sb);
  const double lo = std::min(a.mean, b.mean) - 40.0 * smax;
  const double hi = std::max(a.mean, b.mean) + 40.0 * smax;

  std::vector<double> cuts{lo, hi};
  for (const double k : {0.0, 1.0, 3.0, 6.0, 10.0}) {
    for (const double sgn : {-1.0, 1.0}) {
      cuts.push_back(a.mean + sgn * k * sa);
      cuts.push_back(b.mean + sgn * k * sb);
    }
  }
  // Crossings of the two densities: sign changes of the log ratio on a fine
  // grid, refined by bisection.
  const auto g = [&](double x) {
    const double za = (x - a.mean) / sa;
    const double zb = (x - b.mean) / sb;
    return (-0.5 * za * za - std::log(sa)) - (-0.5 * zb * zb - std::log(sb));
  };
  std::vector<double> grid(cuts);
  std::sort(grid.begin(), grid.end());
  std::vector<double> scan;
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    if (grid[i] < lo || grid[i + 1] > hi || grid[i + 1] <= grid[i]) continue;
    constexpr int kSub = 2000;
    for (int j = 0; j < kSub; ++j) scan.push_back(grid[i] + (grid[i + 1] - grid[i]) * j / kSub);
  }
  scan.push_back(hi);
  for (std::size_t i = 0; i + 1 < scan.size(); ++i) {
    double x0 = scan[i], x1 = scan[i + 1];
    double g0 = g(x0);
    const double g1 = g(x1);
    if ((g0 < 0.0) == (g1 < 0.0)) continue;
    for (int it = 0; it < 200 && x1 - x0 > 1e-15 * (1.0 + std::abs(x0)); ++it) {
      const double mid = 0.5 * (x0 + x1);
      const double gm = g(mid);
      if ((gm < 0.0) == (g0 < 0.0)) {
        x0 = mid;
        g0 = gm;
      } else {
        x1 = mid;
      }
    }
    cuts.push_back(0.5 * (x0 + x1));
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  double total = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    if (cuts[i] < lo || cuts[i + 1] > hi) continue;
    total += boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, cuts[i], cuts[i + 1], 12, 1e-11);
  }
  return total;
}

Logits OracleModel::logits(const TokenSequence&) const {
  Logits out;
  for (int k = 0; k < x0_.tracks(); ++k) {
    RowMatrix<float> block = RowMatrix<float>::Constant(x0_.steps(), x0_.vocab_size(k), -1e4F);
    for (int s = 0; s < x0_.steps(); ++s) block(s, x0_.at(s, k)) = 0.0F;
    out.tracks.push_back(std::move(block));
  }
  return out;
}

Logits FlatModel::logits(const TokenSequence& xt) const {
  ++calls;
  Logits out;
  for (int k = 0; k < tracks_; ++k) out.tracks.push_back(RowMatrix<float>::Zero(steps_, xt.vocab_size(k)));
  return out;
}

std::vector<std::uint8_t> handmade_midi(int ticks_per_quarter, const std::vector<std::vector<RawEvent>>& tracks,
                                        int numerator, int denominator_pow2, int tempo_us) {
  std::vector<std::uint8_t> out{'M', 'T', 'h', 'd', 0, 0, 0, 6, 0, 1};
  out.push_back(0);
  out.push_back(static_cast<std::uint8_t>(tracks.size() + 1));
  out.push_back(static_cast<std::uint8_t>(ticks_per_quarter >> 8));
  out.push_back(static_cast<std::uint8_t>(ticks_per_quarter & 0xff));

  const auto chunk = [&](const std::vector<std::uint8_t>& body) {
    out.insert(out.end(), {'M', 'T', 'r', 'k'});
    put_u32(out, static_cast<std::uint32_t>(body.size()));
    out.insert(out.end(), body.begin(), body.end());
  };
  std::vector<std::uint8_t> conductor{0x00, 0xff, 0x51, 0x03, static_cast<std::uint8_t>(tempo_us >> 16),
                                      static_cast<std::uint8_t>(tempo_us >> 8), static_cast<std::uint8_t>(tempo_us),
                                      0x00, 0xff, 0x58, 0x04, static_cast<std::uint8_t>(numerator),
                                      static_cast<std::uint8_t>(denominator_pow2), 24, 8, 0x00, 0xff, 0x2f, 0x00};
  chunk(conductor);
  for (auto events : tracks) {
    std::stable_sort(events.begin(), events.end(), [](const RawEvent& x, const RawEvent& y) { return x.tick < y.tick; });
    std::vector<std::uint8_t> body;
    unsigned now = 0;
    for (const auto& e : events) {
      put_varlen(body, e.tick - now);
      now = e.tick;
      body.push_back(static_cast<std::uint8_t>(e.status));
      body.push_back(static_cast<std::uint8_t>(e.data1));
      if ((e.status & 0xf0) != 0xc0 && (e.status & 0xf0) != 0xd0) body.push_back(static_cast<std::uint8_t>(e.data2));
    }
    body.insert(body.end(), {0x00, 0xff, 0x2f, 0x00});
    chunk(body);
  }
  return out;
}

}  // namespace symdiff::testing
