#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <utility>

#include <torch/torch.h>

#include "rdr/config.hpp"

namespace rdr {

/// Raised when a tensor violates a shape or channel contract.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr int64_t kLowChannels = 24;
inline constexpr int64_t kHighChannels = 320;
inline constexpr int64_t kFusedChannels = kHighChannels + kLowChannels;

/// Encoder outputs and the fused decoder input. low is stride 4, high stride 16.
struct FeatureBundle {
  torch::Tensor low;      // F_l [N,24,H/4,W/4]
  torch::Tensor high;     // F_h [N,320,H/16,W/16]
  torch::Tensor refined;  // F_r [N,24,H/4,W/4]; undefined until fused
  torch::Tensor fused;    // F_s [N,344,H/4,W/4]; undefined until fused
};

/// Sigmoid maps at input resolution; *_small are the stride-4 decoder outputs.
struct PredictionPair {
  torch::Tensor edge;    // B_hat [N,1,H,W]
  torch::Tensor region;  // Y_hat [N,2,H,W] (OD, OC)
  torch::Tensor edge_small;
  torch::Tensor region_small;
  torch::Tensor entropy;  // optional, [N,2,H,W]
};

void check_image_batch(const torch::Tensor& x);

/// MobileNetV2 inverted residual block.
class InvertedResidualImpl : public torch::nn::Module {
 public:
  InvertedResidualImpl(int64_t in, int64_t out, int64_t stride, int64_t expand, int64_t dilation);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential body_{nullptr};
  bool residual_;
};
TORCH_MODULE(InvertedResidual);

/// Shared encoder. kFaithful is a MobileNetV2 trunk at output stride 16 (the
/// stride-32 stage is dilated); kToy is a small strided-conv trunk with the
/// same output contract.
class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(EncoderVariant variant);
  FeatureBundle forward(const torch::Tensor& x);
  EncoderVariant variant() const { return variant_; }

  torch::nn::Sequential low_stage{nullptr};
  torch::nn::Sequential high_stage{nullptr};

 private:
  EncoderVariant variant_;
};
TORCH_MODULE(Encoder);

/// Three 3x3 convs (width, width, 1); conv -> BN -> ReLU on the first two, sigmoid on the last.
class EdgeDecoderImpl : public torch::nn::Module {
 public:
  explicit EdgeDecoderImpl(int64_t width, int64_t in_channels = kFusedChannels);
  torch::Tensor forward(const torch::Tensor& fused);
  int64_t conv_parameter_count() const;

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr};
};
TORCH_MODULE(EdgeDecoder);

/// A single 3x3 conv from [F_s, B_hat] to two independent sigmoid channels.
class RegionDecoderImpl : public torch::nn::Module {
 public:
  explicit RegionDecoderImpl(int64_t in_channels = kFusedChannels + 1);
  torch::Tensor forward(const torch::Tensor& fused, const torch::Tensor& edge);

  torch::nn::Conv2d conv{nullptr};
};
TORCH_MODULE(RegionDecoder);

using RefineHook = std::function<torch::Tensor(const FeatureBundle&)>;

class BackboneImpl : public torch::nn::Module {
 public:
  BackboneImpl(EncoderVariant variant, int64_t decoder_width);

  FeatureBundle encode(const torch::Tensor& x);
  /// Sets refined (defaulting to low) and fused, runs both decoders and upsamples to out_h x out_w.
  PredictionPair decode(FeatureBundle& features, int64_t out_h, int64_t out_w);
  std::pair<FeatureBundle, PredictionPair> forward(const torch::Tensor& x, const RefineHook& refine = nullptr);

  Encoder encoder{nullptr};
  EdgeDecoder edge_decoder{nullptr};
  RegionDecoder region_decoder{nullptr};
};
TORCH_MODULE(Backbone);

/// Upsamples F_h to F_r's resolution and concatenates [F_h, F_r] along channels.
torch::Tensor fuse_features(const torch::Tensor& high, const torch::Tensor& refined);

int64_t count_parameters(const torch::nn::Module& module, bool trainable_only = false);

/// Loads matching named parameters/buffers from a torch archive written by save_module_weights.
void load_module_weights(torch::nn::Module& module, const std::string& path);
void save_module_weights(const torch::nn::Module& module, const std::string& path);

}  // namespace rdr
