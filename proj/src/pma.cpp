#include "rdr/pma.hpp"

#include <array>

namespace rdr {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

torch::Tensor entropy_map(const torch::Tensor& probs) {
  auto p = probs.clamp(kProbClamp, 1.0 - kProbClamp);
  return -p * torch::log(p);
}

DiscriminatorImpl::DiscriminatorImpl(int64_t in_channels) : in_channels_(in_channels) {
  convs = register_module("convs", nn::ModuleList());
  const std::array<int64_t, 5> widths{64, 128, 256, 512, 1};
  int64_t in = in_channels;
  for (auto w : widths) {
    convs->push_back(nn::Conv2d(nn::Conv2dOptions(in, w, 4).stride(2).padding(1)));
    in = w;
  }
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& maps) {
  if (maps.dim() != 4 || maps.size(1) != in_channels_) {
    throw ContractError("discriminator expects " + std::to_string(in_channels_) + "-channel maps");
  }
  if (maps.size(2) < 32 || maps.size(3) < 32) {
    throw ContractError("discriminator input must be at least 32x32, got " + std::to_string(maps.size(2)) + "x" +
                        std::to_string(maps.size(3)));
  }
  auto x = maps;
  const auto n = convs->size();
  for (size_t i = 0; i < n; ++i) {
    x = convs[i]->as<nn::Conv2d>()->forward(x);
    if (i + 1 < n) x = F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2));
  }
  return x;
}

torch::Tensor bce_logits(const torch::Tensor& logits, double label) {
  return F::binary_cross_entropy_with_logits(logits, torch::full_like(logits, label));
}

torch::Tensor discriminator_loss_from_logits(const torch::Tensor& logits_s, const torch::Tensor& logits_t) {
  return 0.5 * (bce_logits(logits_s, 1.0) + bce_logits(logits_t, 0.0));
}

torch::Tensor adversarial_loss_from_logits(const torch::Tensor& logits_t) { return bce_logits(logits_t, 1.0); }

namespace {

// Source and target share one forward pass when their shapes agree; the
// discriminator has no batch statistics, so this only saves time.
torch::Tensor joint_discriminator_loss(Discriminator& d, const torch::Tensor& in_s, const torch::Tensor& in_t) {
  if (in_s.sizes().slice(1) != in_t.sizes().slice(1)) {
    return discriminator_loss_from_logits(d->forward(in_s), d->forward(in_t));
  }
  auto logits = d->forward(torch::cat({in_s, in_t}));
  const auto n = in_s.size(0);
  return discriminator_loss_from_logits(logits.slice(0, 0, n), logits.slice(0, n));
}

}  // namespace

torch::Tensor discriminator_loss_region(Discriminator& d, const torch::Tensor& region_s, const torch::Tensor& region_t) {
  return joint_discriminator_loss(d, entropy_map(region_s.detach()), entropy_map(region_t.detach()));
}

torch::Tensor adversarial_loss_region(Discriminator& d, const torch::Tensor& region_t) {
  return with_frozen(*d, [&] { return adversarial_loss_from_logits(d->forward(entropy_map(region_t))); });
}

torch::Tensor discriminator_loss_edge(Discriminator& d, const torch::Tensor& edge_s, const torch::Tensor& edge_t) {
  return joint_discriminator_loss(d, edge_s.detach(), edge_t.detach());
}

torch::Tensor adversarial_loss_edge(Discriminator& d, const torch::Tensor& edge_t) {
  return with_frozen(*d, [&] { return adversarial_loss_from_logits(d->forward(edge_t)); });
}

}  // namespace rdr
