#include "rdr/ra.hpp"

#include <filesystem>
#include <iostream>
#include <mutex>

namespace rdr {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

torch::Tensor reparameterize_with(const LatentCode& code, const torch::Tensor& eps) {
  auto sigma = torch::exp(0.5 * code.log_var.clamp(-kLogVarClamp, kLogVarClamp));
  return code.mu + sigma * eps;
}

torch::Tensor reparameterize(LatentCode& code, at::Generator& gen) {
  code.eps = torch::randn(code.mu.sizes(), gen, code.mu.options().requires_grad(false));
  code.z = reparameterize_with(code, code.eps);
  return code.z;
}

VaeBranchImpl::VaeBranchImpl(int64_t image_size, int64_t latent_dim)
    : latent_dim_(latent_dim), grid_(image_size / 16) {
  if (image_size % 16 != 0) throw ContractError("VAE image size must be divisible by 16");
  const int64_t flat = kVaeReducedChannels * grid_ * grid_;
  reduce = register_module("reduce", nn::Conv2d(nn::Conv2dOptions(kFusedChannels, kVaeReducedChannels, 1)));
  reduce_norm = register_module("reduce_norm", nn::InstanceNorm2d(nn::InstanceNorm2dOptions(kVaeReducedChannels).affine(true)));
  head = register_module("head", nn::Linear(flat, 2 * latent_dim));
  expand = register_module("expand", nn::Linear(latent_dim, flat));
  blocks = register_module("blocks", nn::ModuleList());
  const std::array<int64_t, 5> plan{kVaeReducedChannels, 64, 32, 16, 8};
  for (size_t i = 0; i + 1 < plan.size(); ++i) {
    nn::Sequential block;
    block->push_back(nn::Conv2d(nn::Conv2dOptions(plan[i], plan[i + 1], 3).padding(1)));
    block->push_back(nn::InstanceNorm2d(nn::InstanceNorm2dOptions(plan[i + 1]).affine(true)));
    block->push_back(nn::ReLU());
    blocks->push_back(block);
  }
  out_conv = register_module("out_conv", nn::Conv2d(nn::Conv2dOptions(8, 3, 3).padding(1)));
}

LatentCode VaeBranchImpl::encode(const torch::Tensor& low, const torch::Tensor& high) {
  if (low.size(1) != kLowChannels || high.size(1) != kHighChannels) {
    throw ContractError("VAE encoder expects F_l with 24 and F_h with 320 channels");
  }
  if (high.size(2) != grid_ || high.size(3) != grid_) {
    throw ContractError("VAE encoder expects F_h of " + std::to_string(grid_) + "x" + std::to_string(grid_) + ", got " +
                        std::to_string(high.size(2)) + "x" + std::to_string(high.size(3)));
  }
  auto pooled = F::avg_pool2d(low, F::AvgPool2dFuncOptions(4).stride(4));
  auto x = reduce_norm->forward(reduce->forward(torch::cat({pooled, high}, 1)));
  auto h = head->forward(x.flatten(1));
  LatentCode code;
  code.mu = h.narrow(1, 0, latent_dim_);
  code.log_var = h.narrow(1, latent_dim_, latent_dim_);
  return code;
}

torch::Tensor VaeBranchImpl::decode(const torch::Tensor& z) {
  if (z.dim() != 2 || z.size(1) != latent_dim_) {
    throw ContractError("VAE decoder expects z of length " + std::to_string(latent_dim_));
  }
  auto x = torch::relu(expand->forward(z)).view({z.size(0), kVaeReducedChannels, grid_, grid_});
  for (const auto& block : *blocks) {
    x = F::interpolate(x, F::InterpolateFuncOptions()
                              .scale_factor(std::vector<double>{2.0, 2.0})
                              .mode(torch::kBilinear)
                              .align_corners(false));
    x = block->as<nn::Sequential>()->forward(x);
  }
  return torch::sigmoid(out_conv->forward(x));
}

int64_t VaeBranchImpl::inference_parameter_count() const {
  return count_parameters(*reduce) + count_parameters(*reduce_norm) + count_parameters(*head);
}

torch::Tensor kl_loss(const LatentCode& code) {
  auto log_var = code.log_var.clamp(-kLogVarClamp, kLogVarClamp);
  auto terms = code.mu.pow(2) + log_var.exp() - log_var - 1.0;
  return terms.abs().mean(1).mean();
}

torch::Tensor recon_mse(const torch::Tensor& recon, const torch::Tensor& image) {
  if (recon.sizes() != image.sizes()) throw ContractError("reconstruction and image shapes differ");
  // Per image: sum over channels and pixels divided by the pixel count M = H*W.
  return (recon - image).pow(2).sum({1, 2, 3}).div(static_cast<double>(image.size(2) * image.size(3))).mean();
}

torch::Tensor recon_loss(const torch::Tensor& recon, const torch::Tensor& image, const LatentCode& code) {
  return kl_loss(code) + recon_mse(recon, image);
}

StyleEncoderImpl::StyleEncoderImpl(const std::string& weights_path) {
  auto conv = [](int64_t in, int64_t out) { return nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1)); };
  conv1_1 = register_module("conv1_1", conv(3, 64));
  conv1_2 = register_module("conv1_2", conv(64, 64));
  conv2_1 = register_module("conv2_1", conv(64, 128));
  conv2_2 = register_module("conv2_2", conv(128, 128));
  if (!weights_path.empty() && std::filesystem::exists(weights_path)) {
    load_module_weights(*this, weights_path);
    random_fallback_ = false;
  } else {
    static std::once_flag warned;
    std::call_once(warned, [&] {
      std::cerr << "warning: no style encoder weights"
                << (weights_path.empty() ? std::string() : " at " + weights_path)
                << "; using the frozen random VGG prefix\n";
    });
    // Fixed seed independent of the experiment seed, He-normal init.
    auto gen = at::detail::createCPUGenerator(0x5747e1ULL);
    torch::NoGradGuard guard;
    for (auto* c : {&conv1_1, &conv1_2, &conv2_1, &conv2_2}) {
      auto& w = (*c)->weight;
      const double fan_in = static_cast<double>(w.size(1) * w.size(2) * w.size(3));
      w.copy_(torch::randn(w.sizes(), gen, w.options()) * std::sqrt(2.0 / fan_in));
      (*c)->bias.zero_();
    }
  }
  for (auto& p : parameters()) p.set_requires_grad(false);
}

namespace {

torch::Tensor conv_cl(nn::Conv2d& c, const torch::Tensor& x) {
  return F::conv2d(x, c->weight.contiguous(at::MemoryFormat::ChannelsLast),
                   F::Conv2dFuncOptions().bias(c->bias).padding(1));
}

}  // namespace

torch::Tensor StyleEncoderImpl::forward(const torch::Tensor& image) {
  auto opts = image.options();
  auto mean = torch::tensor({0.485, 0.456, 0.406}, opts).view({1, 3, 1, 1});
  auto stdv = torch::tensor({0.229, 0.224, 0.225}, opts).view({1, 3, 1, 1});
  // channels-last runs noticeably faster on CPU for these wide 3x3 convs
  auto x = ((image - mean) / stdv).contiguous(at::MemoryFormat::ChannelsLast);
  x = torch::relu(conv_cl(conv1_1, x));
  x = torch::relu(conv_cl(conv1_2, x));
  x = F::max_pool2d(x, F::MaxPool2dFuncOptions(2).stride(2));
  x = torch::relu(conv_cl(conv2_1, x));
  return torch::relu(conv_cl(conv2_2, x)).contiguous();
}

torch::Tensor gram(const torch::Tensor& features) {
  TORCH_CHECK(features.dim() == 4, "gram expects [N,C,h,w]");
  auto f = features.flatten(2);  // [N,C,M]
  return torch::bmm(f, f.transpose(1, 2));
}

torch::Tensor style_loss(const torch::Tensor& gram_s, const torch::Tensor& gram_t, int64_t pixels) {
  if (gram_s.sizes() != gram_t.sizes()) throw ContractError("style_loss: Gram matrices differ in shape");
  const auto c = static_cast<double>(gram_s.size(-1));
  const auto m = static_cast<double>(pixels);
  auto diff = (gram_s - gram_t).pow(2);
  auto per = gram_s.dim() == 3 ? diff.sum({1, 2}).mean() : diff.sum();
  return per / (4.0 * c * c * m * m);
}

torch::Tensor batch_style_loss(const torch::Tensor& style_s, const torch::Tensor& style_t) {
  if (style_s.size(1) != style_t.size(1) || style_s.size(2) != style_t.size(2) || style_s.size(3) != style_t.size(3)) {
    throw ContractError("batch_style_loss: style feature maps differ in shape");
  }
  auto gs = gram(style_s).mean(0);
  auto gt = gram(style_t).mean(0);
  return style_loss(gs, gt, style_s.size(2) * style_s.size(3));
}

}  // namespace rdr
