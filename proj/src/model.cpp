#include "rdr/model.hpp"

#include <cstring>

namespace rdr {

namespace {

// Each component draws its initialisation from its own stream, so toggling a
// module never changes how the others start.
void seed_component(const ExperimentConfig& config, std::uint64_t component) {
  torch::manual_seed(RngHandle(config.seed).derive("init", {component}));
}

int64_t numel_of(const std::vector<torch::Tensor>& params) {
  int64_t n = 0;
  for (const auto& p : params) n += p.numel();
  return n;
}

}  // namespace

RdrNetImpl::RdrNetImpl(const ExperimentConfig& config) : config_(config) {
  seed_component(config, 0);
  backbone = register_module("backbone", Backbone(config.encoder_variant, config.effective_decoder_channels()));
  if (!config.pretrained_encoder.empty()) load_module_weights(*backbone->encoder, config.pretrained_encoder);
  const bool uda = config.mode == Mode::kUda;
  if (uda && config.modules.ra) {
    seed_component(config, 1);
    vae = register_module("vae", VaeBranch(config.image_size, config.latent_dim));
    style = register_module("style", StyleEncoder(config.pretrained_style));
  }
  if (uda && config.modules.lfr) {
    seed_component(config, 2);
    lfr = register_module("lfr", LfrModule(config.latent_dim));
  }
}

ModelOutputs RdrNetImpl::forward(const torch::Tensor& images, at::Generator* gen, bool reconstruct) {
  ModelOutputs out;
  out.features = backbone->encode(images);
  if (has_vae()) {
    out.code = vae->encode(out.features.low, out.features.high);
    out.z = gen ? reparameterize(*out.code, *gen) : out.code->mu;
  }
  if (has_lfr()) {
    out.features.refined = lfr->forward(out.features.low, out.features.high, out.z, has_vae());
  }
  out.pred = backbone->decode(out.features, images.size(2), images.size(3));
  if (reconstruct && has_vae()) out.recon = vae->decode(out.z);
  return out;
}

torch::Tensor RdrNetImpl::style_features(const torch::Tensor& recon) {
  if (style.is_empty()) throw ContractError("style features requested without the RA branch");
  return style->forward(recon);
}

std::vector<torch::Tensor> RdrNetImpl::trainable_parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& p : parameters()) {
    if (p.requires_grad()) out.push_back(p);
  }
  return out;
}

DiscriminatorPairImpl::DiscriminatorPairImpl() {
  region = register_module("region", Discriminator(2));
  edge = register_module("edge", Discriminator(1));
}

nlohmann::json ParameterReport::to_json() const {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [name, n] : modules) per[name] = n;
  return {{"modules", per},
          {"inference", inference},
          {"training", training},
          {"frozen", frozen},
          {"total", total},
          {"discriminators", discriminators}};
}

ParameterReport parameter_report(const RdrNet& net, const DiscriminatorPair* discriminators) {
  ParameterReport r;
  const auto& b = net->backbone;
  auto add = [&](const std::string& name, int64_t n) { r.modules.emplace_back(name, n); };
  add("encoder", count_parameters(*b->encoder));
  add("edge_decoder", count_parameters(*b->edge_decoder));
  add("region_decoder", count_parameters(*b->region_decoder));
  r.inference = count_parameters(*b);
  if (net->has_vae()) {
    const int64_t vae_inference = net->vae->inference_parameter_count();
    add("vae.encoder", vae_inference);
    add("vae.decoder", count_parameters(*net->vae) - vae_inference);
    r.inference += vae_inference;
    r.frozen = count_parameters(*net->style);
    add("style_encoder.frozen", r.frozen);
  }
  if (net->has_lfr()) {
    add("lfr.mlp", count_parameters(*net->lfr->mlp));
    add("lfr.generator", count_parameters(*net->lfr->generator));
    r.inference += count_parameters(*net->lfr);
  }
  r.training = numel_of(net->trainable_parameters());
  r.total = r.training;
  if (discriminators) {
    add("discriminator.region", count_parameters(*(*discriminators)->region));
    add("discriminator.edge", count_parameters(*(*discriminators)->edge));
    r.discriminators = count_parameters(**discriminators);
  }
  return r;
}

std::uint64_t parameter_hash(const torch::nn::Module& module) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : module.parameters()) {
    auto c = p.detach().contiguous().cpu();
    const auto* bytes = static_cast<const unsigned char*>(c.data_ptr());
    const size_t n = c.numel() * c.element_size();
    for (size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace rdr
