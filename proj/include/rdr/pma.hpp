#pragma once

#include <torch/torch.h>

#include "rdr/backbone.hpp"

namespace rdr {

inline constexpr double kProbClamp = 1e-7;

/// -Y log Y elementwise (natural log) after clamping Y to [1e-7, 1-1e-7].
torch::Tensor entropy_map(const torch::Tensor& probs);

/// Patch discriminator: five 4x4 stride-2 padding-1 convs with channels
/// [64, 128, 256, 512, 1]; LeakyReLU(0.2) after all but the last.
class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(int64_t in_channels);
  torch::Tensor forward(const torch::Tensor& maps);
  int64_t in_channels() const { return in_channels_; }

  torch::nn::ModuleList convs{nullptr};

 private:
  int64_t in_channels_;
};
TORCH_MODULE(Discriminator);

/// Mean BCE of logits against a constant label.
torch::Tensor bce_logits(const torch::Tensor& logits, double label);

/// Discriminator objective from logits: mean of BCE(source, 1) and BCE(target, 0).
torch::Tensor discriminator_loss_from_logits(const torch::Tensor& logits_s, const torch::Tensor& logits_t);
/// Generator-side objective: BCE(target, 1).
torch::Tensor adversarial_loss_from_logits(const torch::Tensor& logits_t);

/// L_D_r on entropy maps of detached region predictions.
torch::Tensor discriminator_loss_region(Discriminator& d, const torch::Tensor& region_s, const torch::Tensor& region_t);
/// L_r^adv: D_r(E(Y_t)) against label 1; gradient flows into the predictions only.
torch::Tensor adversarial_loss_region(Discriminator& d, const torch::Tensor& region_t);
/// L_D_e on detached raw edge maps.
torch::Tensor discriminator_loss_edge(Discriminator& d, const torch::Tensor& edge_s, const torch::Tensor& edge_t);
/// L_e^adv: D_e(B_t) against label 1.
torch::Tensor adversarial_loss_edge(Discriminator& d, const torch::Tensor& edge_t);

/// Runs fn with d's parameters temporarily excluded from autograd.
template <typename Fn>
auto with_frozen(torch::nn::Module& d, Fn&& fn) {
  std::vector<bool> prior;
  for (auto& p : d.parameters()) {
    prior.push_back(p.requires_grad());
    p.set_requires_grad(false);
  }
  struct Restore {
    torch::nn::Module& m;
    std::vector<bool>& flags;
    ~Restore() {
      size_t i = 0;
      for (auto& p : m.parameters()) p.set_requires_grad(flags[i++]);
    }
  } restore{d, prior};
  return fn();
}

}  // namespace rdr
