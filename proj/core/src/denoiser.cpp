#include "symdiff/denoiser.hpp"

#include <cmath>

#include "symdiff/error.hpp"

namespace symdiff {
namespace {

constexpr double kLayerNormEps = 1e-5;

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// y = xhat * gain + bias with xhat = (x - mean) * rstd, row-wise.
template <typename Scalar, typename In>
void layer_norm(const In& x, const Eigen::Map<const RowMatrix<Scalar>>& gain,
                const Eigen::Map<const RowMatrix<Scalar>>& bias, RowMatrix<Scalar>& xhat, Vec<Scalar>& rstd,
                RowMatrix<Scalar>& y) {
  const auto n = x.rows();
  const auto d = x.cols();
  xhat.resize(n, d);
  rstd.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar mean = x.row(i).mean();
    const Scalar var = (x.row(i).array() - mean).square().mean();
    rstd[i] = Scalar(1) / std::sqrt(var + static_cast<Scalar>(kLayerNormEps));
    xhat.row(i) = (x.row(i).array() - mean) * rstd[i];
  }
  y = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
}

template <typename Scalar>
RowMatrix<Scalar> layer_norm_backward(const RowMatrix<Scalar>& dy, const RowMatrix<Scalar>& xhat,
                                      const Vec<Scalar>& rstd, const Eigen::Map<const RowMatrix<Scalar>>& gain,
                                      Eigen::Map<RowMatrix<Scalar>> dgain, Eigen::Map<RowMatrix<Scalar>> dbias) {
  dgain.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
  dbias.row(0) += dy.colwise().sum();
  RowMatrix<Scalar> dxhat = dy.array().rowwise() * gain.row(0).array();
  RowMatrix<Scalar> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const Scalar m1 = dxhat.row(i).mean();
    const Scalar m2 = (dxhat.row(i).array() * xhat.row(i).array()).mean();
    dx.row(i) = (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2) * rstd[i];
  }
  return dx;
}

// tanh-approximated GELU and its derivative.
template <typename Scalar>
Scalar gelu(Scalar x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  const Scalar u = static_cast<Scalar>(c) * (x + Scalar(0.044715) * x * x * x);
  return Scalar(0.5) * x * (Scalar(1) + std::tanh(u));
}

template <typename Scalar>
Scalar gelu_grad(Scalar x) {
  constexpr double c = 0.7978845608028654;
  const Scalar u = static_cast<Scalar>(c) * (x + Scalar(0.044715) * x * x * x);
  const Scalar th = std::tanh(u);
  const Scalar du = static_cast<Scalar>(c) * (Scalar(1) + Scalar(3 * 0.044715) * x * x);
  return Scalar(0.5) * (Scalar(1) + th) + Scalar(0.5) * x * (Scalar(1) - th * th) * du;
}

template <typename Scalar>
void softmax_rows(RowMatrix<Scalar>& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const Scalar mx = m.row(i).maxCoeff();
    m.row(i) = (m.row(i).array() - mx).exp();
    m.row(i) /= m.row(i).sum();
  }
}

}  // namespace

std::vector<int> DenoiserConfig::vocab_sizes() const {
  if (tracks == 1) return {PitchVocab::kSize};
  return {PitchVocab::kSize, PitchVocab::kSize, DrumVocab::kSize};
}

void DenoiserConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::kInvalidArgument, "denoiser config: " + msg); };
  if (tracks != 1 && tracks != 3) fail("tracks must be 1 or 3");
  if (conv_kernel < 1) fail("conv_kernel must be positive");
  if (steps <= 0 || steps % conv_kernel != 0) fail("steps must be a positive multiple of conv_kernel");
  if (steps % kStepsPerBar != 0) fail("steps must be a whole number of bars");
  if (embed_dim < 1 || summary_dim < 1 || layers < 0 || ff_multiplier < 1) fail("dimensions must be positive");
  if (heads < 1 || summary_dim % heads != 0) fail("heads must divide summary_dim");
  if (!(init_std > 0)) fail("init_std must be positive");
}

DenoiserConfig DenoiserConfig::desk(int tracks) {
  DenoiserConfig c;
  c.tracks = tracks;
  return c;
}

DenoiserConfig DenoiserConfig::full_melody() {
  DenoiserConfig c;
  c.tracks = 1;
  c.steps = 1024;
  c.embed_dim = 128;
  c.summary_dim = 512;
  c.layers = 24;
  c.heads = 8;
  return c;
}

DenoiserConfig DenoiserConfig::full_trio() {
  DenoiserConfig c = full_melody();
  c.tracks = 3;
  return c;
}

nlohmann::json config_to_json(const DenoiserConfig& c) {
  return {{"tracks", c.tracks},       {"steps", c.steps},   {"embed_dim", c.embed_dim},
          {"summary_dim", c.summary_dim}, {"conv_kernel", c.conv_kernel}, {"layers", c.layers},
          {"heads", c.heads},         {"ff_multiplier", c.ff_multiplier}, {"init_std", c.init_std}};
}

DenoiserConfig config_from_json(const nlohmann::json& j) {
  DenoiserConfig c;
  try {
    c.tracks = j.value("tracks", c.tracks);
    c.steps = j.value("steps", c.steps);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.summary_dim = j.value("summary_dim", c.summary_dim);
    c.conv_kernel = j.value("conv_kernel", c.conv_kernel);
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.ff_multiplier = j.value("ff_multiplier", c.ff_multiplier);
    c.init_std = j.value("init_std", c.init_std);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("malformed denoiser config: ") + e.what());
  }
  c.validate();
  return c;
}

template <typename Scalar>
int DenoiserT<Scalar>::add_tensor(const std::string& name, int rows, int cols) {
  const std::size_t offset = tensors_.empty() ? 0 : tensors_.back().offset + tensors_.back().size();
  tensors_.push_back({name, offset, rows, cols});
  return static_cast<int>(tensors_.size()) - 1;
}

template <typename Scalar>
void DenoiserT<Scalar>::build_layout() {
  config_.validate();
  tensors_.clear();
  track_index_.clear();
  layer_index_.clear();
  const int E = config_.embed_dim;
  const int D = config_.summary_dim;
  const int k = config_.conv_kernel;
  const int F = config_.ff_multiplier * D;
  const auto vocab = config_.vocab_sizes();

  for (int tr = 0; tr < config_.tracks; ++tr) {
    const std::string p = "track" + std::to_string(tr) + ".";
    TrackIndex ti{};
    ti.embed = add_tensor(p + "embed", vocab[static_cast<std::size_t>(tr)] + 1, E);
    ti.conv_w = add_tensor(p + "conv.weight", k * E, D);
    ti.conv_b = add_tensor(p + "conv.bias", 1, D);
    track_index_.push_back(ti);
  }
  pos_ = add_tensor("pos_embed", config_.summary_length(), D);
  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    LayerIndex li{};
    li.ln1_g = add_tensor(p + "ln1.gain", 1, D);
    li.ln1_b = add_tensor(p + "ln1.bias", 1, D);
    li.qkv_w = add_tensor(p + "attn.qkv.weight", D, 3 * D);
    li.qkv_b = add_tensor(p + "attn.qkv.bias", 1, 3 * D);
    li.proj_w = add_tensor(p + "attn.proj.weight", D, D);
    li.proj_b = add_tensor(p + "attn.proj.bias", 1, D);
    li.ln2_g = add_tensor(p + "ln2.gain", 1, D);
    li.ln2_b = add_tensor(p + "ln2.bias", 1, D);
    li.fc1_w = add_tensor(p + "mlp.fc1.weight", D, F);
    li.fc1_b = add_tensor(p + "mlp.fc1.bias", 1, F);
    li.fc2_w = add_tensor(p + "mlp.fc2.weight", F, D);
    li.fc2_b = add_tensor(p + "mlp.fc2.bias", 1, D);
    layer_index_.push_back(li);
  }
  lnf_g_ = add_tensor("ln_f.gain", 1, D);
  lnf_b_ = add_tensor("ln_f.bias", 1, D);
  for (int tr = 0; tr < config_.tracks; ++tr) {
    const std::string p = "track" + std::to_string(tr) + ".";
    auto& ti = track_index_[static_cast<std::size_t>(tr)];
    ti.tconv_w = add_tensor(p + "tconv.weight", D, k * E);
    ti.tconv_b = add_tensor(p + "tconv.bias", 1, E);
    ti.head_w = add_tensor(p + "head.weight", E, vocab[static_cast<std::size_t>(tr)]);
    ti.head_b = add_tensor(p + "head.bias", 1, vocab[static_cast<std::size_t>(tr)]);
  }
}

template <typename Scalar>
std::size_t DenoiserT<Scalar>::layout_size(const DenoiserConfig& config) {
  DenoiserT<Scalar> shell;
  shell.config_ = config;
  shell.build_layout();
  return shell.tensors_.back().offset + shell.tensors_.back().size();
}

template <typename Scalar>
DenoiserT<Scalar>::DenoiserT(const DenoiserConfig& config, std::uint64_t seed) : config_(config) {
  build_layout();
  params_.assign(tensors_.back().offset + tensors_.back().size(), Scalar(0));
  Rng rng(seed);
  const double residual_std = config_.init_std / std::sqrt(2.0 * std::max(1, config_.layers));
  for (const auto& t : tensors_) {
    const bool is_gain = t.name.find(".gain") != std::string::npos;
    const bool is_bias = t.name.find(".bias") != std::string::npos;
    Scalar* p = params_.data() + t.offset;
    if (is_gain) {
      std::fill(p, p + t.size(), Scalar(1));
    } else if (!is_bias) {
      const bool residual = t.name.find("proj.weight") != std::string::npos ||
                            t.name.find("fc2.weight") != std::string::npos;
      const double sd = residual ? residual_std : config_.init_std;
      for (std::size_t i = 0; i < t.size(); ++i) p[i] = static_cast<Scalar>(sd * normal01(rng));
    }
  }
}

template <typename Scalar>
void DenoiserT<Scalar>::adopt(const DenoiserConfig& config, std::vector<TensorInfo> tensors,
                              std::vector<Scalar> params) {
  config_ = config;
  build_layout();
  if (tensors.size() != tensors_.size())
    throw Error(ErrorKind::kShapeMismatch, "tensor count does not match the configuration");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& a = tensors[i];
    const auto& b = tensors_[i];
    if (a.name != b.name || a.rows != b.rows || a.cols != b.cols)
      throw Error(ErrorKind::kShapeMismatch, "tensor " + a.name + " (" + std::to_string(a.rows) + "x" +
                                                 std::to_string(a.cols) + ") does not match " + b.name + " (" +
                                                 std::to_string(b.rows) + "x" + std::to_string(b.cols) + ")");
  }
  if (params.size() != tensors_.back().offset + tensors_.back().size())
    throw Error(ErrorKind::kShapeMismatch, "parameter buffer size does not match the configuration");
  params_.assign(params.begin(), params.end());
}

template <typename Scalar>
Eigen::Map<const typename DenoiserT<Scalar>::Matrix> DenoiserT<Scalar>::view(int id) const {
  const auto& t = tensors_[static_cast<std::size_t>(id)];
  return Eigen::Map<const Matrix>(params_.data() + t.offset, t.rows, t.cols);
}

template <typename Scalar>
LogitsT<Scalar> DenoiserT<Scalar>::forward(const TokenSequence& xt) const {
  BatchLogits<Scalar> batch = forward_batch(std::span<const TokenSequence>(&xt, 1));
  return LogitsT<Scalar>{std::move(batch.tracks)};
}

template <typename Scalar>
BatchLogits<Scalar> DenoiserT<Scalar>::forward_batch(std::span<const TokenSequence> xt, Tape* tape) const {
  const int B = static_cast<int>(xt.size());
  const int L = config_.steps;
  const int k = config_.conv_kernel;
  const int P = config_.summary_length();
  const int E = config_.embed_dim;
  const int D = config_.summary_dim;
  const int H = config_.heads;
  const int dh = D / H;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  const auto vocab = config_.vocab_sizes();

  for (const auto& seq : xt) {
    if (seq.steps() != L || seq.tracks() != config_.tracks)
      throw Error(ErrorKind::kShapeMismatch, "input piece is " + std::to_string(seq.steps()) + "x" +
                                                 std::to_string(seq.tracks()) + ", model expects " +
                                                 std::to_string(L) + "x" + std::to_string(config_.tracks));
  }

  Tape local;
  Tape& tp = tape ? *tape : local;
  tp.batch = B;
  tp.tokens.assign(static_cast<std::size_t>(config_.tracks), {});
  tp.embedded.resize(static_cast<std::size_t>(config_.tracks));
  tp.layers.resize(static_cast<std::size_t>(config_.layers));
  tp.upsampled.resize(static_cast<std::size_t>(config_.tracks));

  Matrix h = Matrix::Zero(B * P, D);
  for (int tr = 0; tr < config_.tracks; ++tr) {
    const auto& ti = track_index_[static_cast<std::size_t>(tr)];
    const auto embed = view(ti.embed);
    auto& tokens = tp.tokens[static_cast<std::size_t>(tr)];
    tokens.resize(static_cast<std::size_t>(B) * L);
    Matrix& x = tp.embedded[static_cast<std::size_t>(tr)];
    x.resize(B * L, E);
    for (int b = 0; b < B; ++b) {
      for (int s = 0; s < L; ++s) {
        const Token tok = xt[static_cast<std::size_t>(b)].at(s, tr);
        if (tok > vocab[static_cast<std::size_t>(tr)])
          throw Error(ErrorKind::kOutOfRange, "token " + std::to_string(tok) + " exceeds the mask id");
        tokens[static_cast<std::size_t>(b) * L + s] = tok;
        x.row(b * L + s) = embed.row(tok);
      }
    }
    const Eigen::Map<const Matrix> xr(x.data(), B * P, k * E);
    h.noalias() += xr * view(ti.conv_w);
    h.rowwise() += view(ti.conv_b).row(0);
  }
  const auto pos = view(pos_);
  for (int b = 0; b < B; ++b) h.middleRows(b * P, P) += pos;

  for (int l = 0; l < config_.layers; ++l) {
    const auto& li = layer_index_[static_cast<std::size_t>(l)];
    auto& lt = tp.layers[static_cast<std::size_t>(l)];

    layer_norm<Scalar>(h, view(li.ln1_g), view(li.ln1_b), lt.xhat1, lt.rstd1, lt.attn_in);
    lt.qkv.noalias() = lt.attn_in * view(li.qkv_w);
    lt.qkv.rowwise() += view(li.qkv_b).row(0);
    lt.probs.resize(B * H * P, P);
    lt.attn_out.resize(B * P, D);
    for (int b = 0; b < B; ++b) {
      for (int hd = 0; hd < H; ++hd) {
        const auto q = lt.qkv.block(b * P, hd * dh, P, dh);
        const auto kk = lt.qkv.block(b * P, D + hd * dh, P, dh);
        const auto v = lt.qkv.block(b * P, 2 * D + hd * dh, P, dh);
        Matrix scores = (q * kk.transpose()) * scale;
        softmax_rows(scores);
        lt.probs.middleRows((b * H + hd) * P, P) = scores;
        lt.attn_out.block(b * P, hd * dh, P, dh).noalias() = scores * v;
      }
    }
    h.noalias() += lt.attn_out * view(li.proj_w);
    h.rowwise() += view(li.proj_b).row(0);

    layer_norm<Scalar>(h, view(li.ln2_g), view(li.ln2_b), lt.xhat2, lt.rstd2, lt.mlp_in);
    lt.pre_act.noalias() = lt.mlp_in * view(li.fc1_w);
    lt.pre_act.rowwise() += view(li.fc1_b).row(0);
    lt.act = lt.pre_act.unaryExpr([](Scalar v) { return gelu(v); });
    h.noalias() += lt.act * view(li.fc2_w);
    h.rowwise() += view(li.fc2_b).row(0);
  }

  layer_norm<Scalar>(h, view(lnf_g_), view(lnf_b_), tp.final_xhat, tp.final_rstd, tp.final_out);

  BatchLogits<Scalar> out;
  out.tracks.resize(static_cast<std::size_t>(config_.tracks));
  for (int tr = 0; tr < config_.tracks; ++tr) {
    const auto& ti = track_index_[static_cast<std::size_t>(tr)];
    Matrix& up = tp.upsampled[static_cast<std::size_t>(tr)];
    up.resize(B * L, E);
    Eigen::Map<Matrix> upr(up.data(), B * P, k * E);
    upr.noalias() = tp.final_out * view(ti.tconv_w);
    up.rowwise() += view(ti.tconv_b).row(0);
    Matrix& logits = out.tracks[static_cast<std::size_t>(tr)];
    logits.noalias() = up * view(ti.head_w);
    logits.rowwise() += view(ti.head_b).row(0);
  }
  return out;
}

template <typename Scalar>
void DenoiserT<Scalar>::backward(const Tape& tp, const BatchLogits<Scalar>& dlogits, std::span<Scalar> grad) const {
  if (grad.size() != params_.size()) throw Error(ErrorKind::kShapeMismatch, "gradient buffer has the wrong size");
  const int B = tp.batch;
  const int L = config_.steps;
  const int k = config_.conv_kernel;
  const int P = config_.summary_length();
  const int E = config_.embed_dim;
  const int D = config_.summary_dim;
  const int H = config_.heads;
  const int dh = D / H;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

  auto g = [&](int id) {
    const auto& t = tensors_[static_cast<std::size_t>(id)];
    return Eigen::Map<Matrix>(grad.data() + t.offset, t.rows, t.cols);
  };

  Matrix dz = Matrix::Zero(B * P, D);
  for (int tr = 0; tr < config_.tracks; ++tr) {
    const auto& ti = track_index_[static_cast<std::size_t>(tr)];
    const Matrix& dlog = dlogits.tracks[static_cast<std::size_t>(tr)];
    const Matrix& up = tp.upsampled[static_cast<std::size_t>(tr)];
    g(ti.head_w).noalias() += up.transpose() * dlog;
    g(ti.head_b).row(0) += dlog.colwise().sum();
    Matrix dup = dlog * view(ti.head_w).transpose();
    g(ti.tconv_b).row(0) += dup.colwise().sum();
    const Eigen::Map<const Matrix> dupr(dup.data(), B * P, k * E);
    g(ti.tconv_w).noalias() += tp.final_out.transpose() * dupr;
    dz.noalias() += dupr * view(ti.tconv_w).transpose();
  }
  Matrix dh_res = layer_norm_backward<Scalar>(dz, tp.final_xhat, tp.final_rstd, view(lnf_g_), g(lnf_g_), g(lnf_b_));

  for (int l = config_.layers - 1; l >= 0; --l) {
    const auto& li = layer_index_[static_cast<std::size_t>(l)];
    const auto& lt = tp.layers[static_cast<std::size_t>(l)];

    g(li.fc2_w).noalias() += lt.act.transpose() * dh_res;
    g(li.fc2_b).row(0) += dh_res.colwise().sum();
    Matrix dact = dh_res * view(li.fc2_w).transpose();
    Matrix dpre = dact.cwiseProduct(lt.pre_act.unaryExpr([](Scalar v) { return gelu_grad(v); }));
    g(li.fc1_w).noalias() += lt.mlp_in.transpose() * dpre;
    g(li.fc1_b).row(0) += dpre.colwise().sum();
    const Matrix dmlp_in = dpre * view(li.fc1_w).transpose();
    dh_res += layer_norm_backward<Scalar>(dmlp_in, lt.xhat2, lt.rstd2, view(li.ln2_g), g(li.ln2_g), g(li.ln2_b));

    g(li.proj_w).noalias() += lt.attn_out.transpose() * dh_res;
    g(li.proj_b).row(0) += dh_res.colwise().sum();
    const Matrix dattn = dh_res * view(li.proj_w).transpose();
    Matrix dqkv(B * P, 3 * D);
    for (int b = 0; b < B; ++b) {
      for (int hd = 0; hd < H; ++hd) {
        const auto probs = lt.probs.middleRows((b * H + hd) * P, P);
        const auto q = lt.qkv.block(b * P, hd * dh, P, dh);
        const auto kk = lt.qkv.block(b * P, D + hd * dh, P, dh);
        const auto v = lt.qkv.block(b * P, 2 * D + hd * dh, P, dh);
        const auto dout = dattn.block(b * P, hd * dh, P, dh);
        const Matrix dprobs = dout * v.transpose();
        dqkv.block(b * P, 2 * D + hd * dh, P, dh).noalias() = probs.transpose() * dout;
        Matrix dscores = probs.cwiseProduct(dprobs);
        const Vec<Scalar> rows = dscores.rowwise().sum();
        dscores -= probs.cwiseProduct(rows.replicate(1, P));
        dscores *= scale;
        dqkv.block(b * P, hd * dh, P, dh).noalias() = dscores * kk;
        dqkv.block(b * P, D + hd * dh, P, dh).noalias() = dscores.transpose() * q;
      }
    }
    g(li.qkv_w).noalias() += lt.attn_in.transpose() * dqkv;
    g(li.qkv_b).row(0) += dqkv.colwise().sum();
    const Matrix dattn_in = dqkv * view(li.qkv_w).transpose();
    dh_res += layer_norm_backward<Scalar>(dattn_in, lt.xhat1, lt.rstd1, view(li.ln1_g), g(li.ln1_g), g(li.ln1_b));
  }

  auto gpos = g(pos_);
  for (int b = 0; b < B; ++b) gpos += dh_res.middleRows(b * P, P);

  for (int tr = 0; tr < config_.tracks; ++tr) {
    const auto& ti = track_index_[static_cast<std::size_t>(tr)];
    const Matrix& x = tp.embedded[static_cast<std::size_t>(tr)];
    const Eigen::Map<const Matrix> xr(x.data(), B * P, k * E);
    g(ti.conv_w).noalias() += xr.transpose() * dh_res;
    g(ti.conv_b).row(0) += dh_res.colwise().sum();
    Matrix dxr = dh_res * view(ti.conv_w).transpose();
    const Eigen::Map<const Matrix> dx(dxr.data(), B * L, E);
    auto gembed = g(ti.embed);
    const auto& tokens = tp.tokens[static_cast<std::size_t>(tr)];
    for (std::size_t i = 0; i < tokens.size(); ++i) gembed.row(tokens[i]) += dx.row(static_cast<Eigen::Index>(i));
  }
}

template class DenoiserT<float>;
template class DenoiserT<double>;

}  // namespace symdiff
