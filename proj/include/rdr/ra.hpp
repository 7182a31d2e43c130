#pragma once

#include <optional>
#include <string>

#include <torch/torch.h>

#include "rdr/backbone.hpp"

namespace rdr {

inline constexpr int64_t kVaeReducedChannels = 16;
inline constexpr double kLogVarClamp = 10.0;

/// Posterior of the VAE branch; tensors are [N,D].
struct LatentCode {
  torch::Tensor mu;
  torch::Tensor log_var;
  torch::Tensor eps;  // undefined until reparameterized
  torch::Tensor z;    // undefined until reparameterized
};

/// z = mu + exp(0.5 * log_var) * eps, with log_var clamped to [-10, 10].
torch::Tensor reparameterize_with(const LatentCode& code, const torch::Tensor& eps);
/// Draws eps ~ N(0,1) from gen, stores eps and z in code and returns z.
torch::Tensor reparameterize(LatentCode& code, at::Generator& gen);

/// VAE over (F_l, F_h) reconstructing the input image.
///
/// Encoder: avg-pool F_l by 4, concat with F_h (344 ch), 1x1 conv to 16 ch,
/// instance norm, flatten, linear to 2D = [mu | log_var].
/// Decoder: linear + ReLU to (H/16 x W/16 x 16), four [bilinear x2, 3x3 conv,
/// instance norm, ReLU] blocks 16->64->32->16->8, 3x3 conv to RGB, sigmoid.
class VaeBranchImpl : public torch::nn::Module {
 public:
  VaeBranchImpl(int64_t image_size, int64_t latent_dim);

  LatentCode encode(const torch::Tensor& low, const torch::Tensor& high);
  torch::Tensor decode(const torch::Tensor& z);

  int64_t latent_dim() const { return latent_dim_; }
  int64_t grid() const { return grid_; }
  /// Parameters used at inference (reduction conv + posterior head).
  int64_t inference_parameter_count() const;

  torch::nn::Conv2d reduce{nullptr};
  torch::nn::InstanceNorm2d reduce_norm{nullptr};
  torch::nn::Linear head{nullptr};
  torch::nn::Linear expand{nullptr};
  torch::nn::ModuleList blocks{nullptr};
  torch::nn::Conv2d out_conv{nullptr};

 private:
  int64_t latent_dim_;
  int64_t grid_;
};
TORCH_MODULE(VaeBranch);

/// (1/D) * sum_d |mu^2 + sigma^2 - log sigma^2 - 1|, averaged over the batch.
torch::Tensor kl_loss(const LatentCode& code);
/// kl_loss + (1/M) sum_pixels sum_channels (R - X)^2, averaged over the batch.
torch::Tensor recon_loss(const torch::Tensor& recon, const torch::Tensor& image, const LatentCode& code);
/// Pixel term of recon_loss alone.
torch::Tensor recon_mse(const torch::Tensor& recon, const torch::Tensor& image);

/// Frozen VGG19 prefix (conv1_1, conv1_2, pool, conv2_1, conv2_2, each conv + ReLU)
/// after ImageNet channel normalisation. Parameters never require grad.
class StyleEncoderImpl : public torch::nn::Module {
 public:
  /// Loads pretrained weights from weights_path if non-empty; otherwise a
  /// fixed-seed random prefix is used (see random_fallback()).
  explicit StyleEncoderImpl(const std::string& weights_path = "");
  torch::Tensor forward(const torch::Tensor& image);
  bool random_fallback() const { return random_fallback_; }
  int64_t channels() const { return 128; }

  torch::nn::Conv2d conv1_1{nullptr}, conv1_2{nullptr}, conv2_1{nullptr}, conv2_2{nullptr};

 private:
  bool random_fallback_ = true;
};
TORCH_MODULE(StyleEncoder);

/// Gram matrices G[j,k] = <vec F_j, vec F_k> for features [N,C,h,w] -> [N,C,C].
torch::Tensor gram(const torch::Tensor& features);

/// sum((G_s - G_t)^2) / (4 C^2 M^2) with M the style-feature pixel count.
/// Grams may be [C,C] or batched [N,C,C] (compared elementwise and averaged).
torch::Tensor style_loss(const torch::Tensor& gram_s, const torch::Tensor& gram_t, int64_t pixels);

/// Batch estimator: mean source Gram vs mean target Gram.
torch::Tensor batch_style_loss(const torch::Tensor& style_s, const torch::Tensor& style_t);

}  // namespace rdr
