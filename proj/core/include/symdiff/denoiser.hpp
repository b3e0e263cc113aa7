#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "symdiff/diffusion.hpp"
#include "symdiff/random.hpp"
#include "symdiff/token_model.hpp"

namespace symdiff {

struct DenoiserConfig {
  int tracks = 1;
  int steps = 256;
  int embed_dim = 64;
  int summary_dim = 128;
  // Kernel size and stride of the summarizing convolution (and its transpose).
  int conv_kernel = 4;
  int layers = 2;
  int heads = 4;
  int ff_multiplier = 4;
  double init_std = 0.02;

  int summary_length() const { return steps / conv_kernel; }
  std::vector<int> vocab_sizes() const;
  // Throws Error(kInvalidArgument) describing the first violated constraint.
  void validate() const;

  // Desk-scale melody model (16 bars).
  static DenoiserConfig desk(int tracks = 1);
  // Full-size melody model: 1024 steps, 128-d tokens, 24 x 512-d blocks, 8 heads.
  static DenoiserConfig full_melody();
  static DenoiserConfig full_trio();

  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

nlohmann::json config_to_json(const DenoiserConfig& c);
DenoiserConfig config_from_json(const nlohmann::json& j);

struct TensorInfo {
  std::string name;
  std::size_t offset = 0;
  int rows = 0;
  int cols = 0;

  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

// Logits for a whole batch: per track a (batch * steps) x vocab block.
template <typename Scalar>
using BatchLogits = TrackBlocks<Scalar>;

// The unmasking network f(x_t) -> logits over x_0.
//
// Per track, tokens (the mask id has its own embedding row) are embedded and
// summarized by a kernel-k stride-k convolution; per-track summaries are
// summed, given learned positional embeddings and passed through pre-norm
// bidirectional transformer blocks. A final LayerNorm feeds per-track
// transposed convolutions back to full length and per-track linear heads.
//
// All parameters live in one flat buffer so the optimizer and the checkpoint
// code can treat them uniformly; `tensors()` names every slice.
template <typename Scalar>
class DenoiserT {
 public:
  using Matrix = RowMatrix<Scalar>;

  // Activations kept for the backward pass.
  struct Tape {
    int batch = 0;
    std::vector<std::vector<Token>> tokens;  // per track, batch * steps
    std::vector<Matrix> embedded;            // per track, (B*L) x E
    struct Layer {
      Matrix xhat1, attn_in, qkv, probs, attn_out, xhat2, mlp_in, pre_act, act;
      Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rstd1, rstd2;
    };
    std::vector<Layer> layers;
    Matrix final_xhat, final_out;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> final_rstd;
    std::vector<Matrix> upsampled;  // per track, (B*L) x E
  };

  DenoiserT() = default;
  // Parameters drawn from N(0, init_std); LayerNorm gains 1, biases 0.
  DenoiserT(const DenoiserConfig& config, std::uint64_t seed);

  const DenoiserConfig& config() const { return config_; }
  std::size_t parameter_count() const { return params_.size(); }
  std::span<Scalar> parameters() { return params_; }
  std::span<const Scalar> parameters() const { return params_; }
  const std::vector<TensorInfo>& tensors() const { return tensors_; }

  // Single piece; reentrant.
  LogitsT<Scalar> forward(const TokenSequence& xt) const;
  // Batched forward. Pass a tape to record activations for `backward`.
  BatchLogits<Scalar> forward_batch(std::span<const TokenSequence> xt, Tape* tape = nullptr) const;
  // Accumulates dLoss/dParams into `grad` (same layout as parameters()).
  void backward(const Tape& tape, const BatchLogits<Scalar>& dlogits, std::span<Scalar> grad) const;

  // Cast of the same parameters to another scalar type.
  template <typename Other>
  DenoiserT<Other> cast() const {
    DenoiserT<Other> out;
    out.adopt(config_, tensors_, std::vector<Other>(params_.begin(), params_.end()));
    return out;
  }
  void adopt(const DenoiserConfig& config, std::vector<TensorInfo> tensors, std::vector<Scalar> params);

  // Total parameter count implied by a configuration, without allocating it.
  static std::size_t layout_size(const DenoiserConfig& config);

 private:
  struct TrackIndex {
    int embed, conv_w, conv_b, tconv_w, tconv_b, head_w, head_b;
  };
  struct LayerIndex {
    int ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b, ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
  };

  void build_layout();
  int add_tensor(const std::string& name, int rows, int cols);
  Eigen::Map<const Matrix> view(int id) const;

  DenoiserConfig config_;
  std::vector<TensorInfo> tensors_;
  // Fixed alignment: Eigen's vectorized reductions peel according to the
  // address, so equal buffers at different alignments would round differently.
  std::vector<Scalar, Eigen::aligned_allocator<Scalar>> params_;
  std::vector<TrackIndex> track_index_;
  std::vector<LayerIndex> layer_index_;
  int pos_ = -1;
  int lnf_g_ = -1;
  int lnf_b_ = -1;
};

using Denoiser = DenoiserT<float>;

inline std::size_t count_parameters(const DenoiserConfig& config) {
  return DenoiserT<float>::layout_size(config);
}

}  // namespace symdiff
