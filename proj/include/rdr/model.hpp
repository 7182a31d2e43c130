#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"
#include "rdr/backbone.hpp"
#include "rdr/config.hpp"
#include "rdr/lfr.hpp"
#include "rdr/pma.hpp"
#include "rdr/ra.hpp"

namespace rdr {

struct ModelOutputs {
  FeatureBundle features;
  PredictionPair pred;
  std::optional<LatentCode> code;
  torch::Tensor z;      // sampled code during training, mu otherwise; undefined without RA
  torch::Tensor recon;  // undefined unless RA is active and reconstruction was requested
};

/// Segmentation network: backbone plus whichever of the RA and LFR branches the
/// config enables. Discriminators live in DiscriminatorPair so the two
/// optimizers never share a parameter.
class RdrNetImpl : public torch::nn::Module {
 public:
  explicit RdrNetImpl(const ExperimentConfig& config);

  /// gen == nullptr gives deterministic inference with z := mu.
  ModelOutputs forward(const torch::Tensor& images, at::Generator* gen = nullptr, bool reconstruct = false);
  torch::Tensor style_features(const torch::Tensor& recon);

  bool has_vae() const { return !vae.is_empty(); }
  bool has_lfr() const { return !lfr.is_empty(); }
  const ExperimentConfig& config() const { return config_; }
  /// Parameters the network optimizer updates (the frozen style encoder is excluded).
  std::vector<torch::Tensor> trainable_parameters() const;

  Backbone backbone{nullptr};
  VaeBranch vae{nullptr};
  LfrModule lfr{nullptr};
  StyleEncoder style{nullptr};

 private:
  ExperimentConfig config_;
};
TORCH_MODULE(RdrNet);

class DiscriminatorPairImpl : public torch::nn::Module {
 public:
  DiscriminatorPairImpl();
  Discriminator region{nullptr};  // consumes 2-channel entropy maps
  Discriminator edge{nullptr};    // consumes 1-channel edge maps
};
TORCH_MODULE(DiscriminatorPair);

struct ParameterReport {
  std::vector<std::pair<std::string, int64_t>> modules;
  int64_t inference = 0;       // backbone + VAE reduction conv/head + LFR
  int64_t training = 0;        // every trainable network parameter
  int64_t frozen = 0;          // style encoder
  int64_t total = 0;           // trainable network weights; frozen style net and discriminators listed apart
  int64_t discriminators = 0;  // both discriminators, reported separately

  nlohmann::json to_json() const;
};

ParameterReport parameter_report(const RdrNet& net, const DiscriminatorPair* discriminators = nullptr);

/// FNV-1a over the raw bytes of every parameter, in registration order.
std::uint64_t parameter_hash(const torch::nn::Module& module);

}  // namespace rdr
