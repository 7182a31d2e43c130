#pragma once

#include <torch/torch.h>

#include "rdr/backbone.hpp"

namespace rdr {

inline constexpr int64_t kDynMid = 12;
inline constexpr int64_t kConditionLength = kHighChannels + 64;  // 384
inline constexpr int64_t kOmega1 = kDynMid * kLowChannels + kDynMid;  // 300
inline constexpr int64_t kOmega2 = kDynMid * kDynMid + kDynMid;       // 156
inline constexpr int64_t kOmega3 = kLowChannels * kDynMid + kLowChannels;  // 312
inline constexpr int64_t kDynamicParamCount = kOmega1 + kOmega2 + kOmega3;  // 768

/// Generated parameters of the three dynamic 1x1 convolutions, one row per sample.
///
/// Layout of each 768-long row: omega1 | omega2 | omega3, each being a
/// row-major (out x in) weight matrix followed by its bias:
///   omega1: W1 12x24, b1 12    omega2: W2 12x12, b2 12    omega3: W3 24x12, b3 24
struct DynamicParams {
  torch::Tensor flat;  // [N,768]

  explicit DynamicParams(torch::Tensor f);
  int64_t batch() const { return flat.size(0); }
  torch::Tensor omega(int layer) const;  // [N, 300|156|312]
  torch::Tensor weight(int layer) const;  // [N,out,in]
  torch::Tensor bias(int layer) const;    // [N,out]
  static const char* layout();
};

/// ReLU(ReLU(ReLU(F_l * w1) * w2) * w3) with per-sample 1x1 convolutions and biases.
torch::Tensor apply_dyconv(const torch::Tensor& low, const DynamicParams& params);

class LfrModuleImpl : public torch::nn::Module {
 public:
  explicit LfrModuleImpl(int64_t latent_dim);

  /// [GAP(F_h) | MLP(z)]; z is detached so no gradient reaches the VAE encoder.
  /// With use_latent=false the MLP half is zero (the "baseline + LFR" ablation).
  torch::Tensor condition_vector(const torch::Tensor& high, const torch::Tensor& z, bool use_latent);
  DynamicParams generate_params(const torch::Tensor& condition);
  torch::Tensor forward(const torch::Tensor& low, const torch::Tensor& high, const torch::Tensor& z, bool use_latent);

  torch::nn::Sequential mlp{nullptr};
  torch::nn::Linear generator{nullptr};  // 1x1 conv over a 1x1 grid, 384 -> 768
};
TORCH_MODULE(LfrModule);

}  // namespace rdr
