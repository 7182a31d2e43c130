#include "rdr/lfr.hpp"

#include <cmath>

namespace rdr {

namespace nn = torch::nn;

namespace {

struct Slot {
  int64_t offset, out, in;
};

Slot slot(int layer) {
  switch (layer) {
    case 1: return {0, kDynMid, kLowChannels};
    case 2: return {kOmega1, kDynMid, kDynMid};
    case 3: return {kOmega1 + kOmega2, kLowChannels, kDynMid};
    default: throw ContractError("dynamic layer index must be 1, 2 or 3");
  }
}

}  // namespace

DynamicParams::DynamicParams(torch::Tensor f) : flat(std::move(f)) {
  if (flat.dim() != 2 || flat.size(1) != kDynamicParamCount) {
    throw ContractError("dynamic parameters must be [N,768]");
  }
}

torch::Tensor DynamicParams::omega(int layer) const {
  const auto s = slot(layer);
  return flat.narrow(1, s.offset, s.out * s.in + s.out);
}

torch::Tensor DynamicParams::weight(int layer) const {
  const auto s = slot(layer);
  return flat.narrow(1, s.offset, s.out * s.in).view({batch(), s.out, s.in});
}

torch::Tensor DynamicParams::bias(int layer) const {
  const auto s = slot(layer);
  return flat.narrow(1, s.offset + s.out * s.in, s.out);
}

const char* DynamicParams::layout() {
  return "omega1[W 12x24 row-major, b 12] | omega2[W 12x12, b 12] | omega3[W 24x12, b 24]";
}

torch::Tensor apply_dyconv(const torch::Tensor& low, const DynamicParams& params) {
  if (low.dim() != 4 || low.size(1) != kLowChannels) throw ContractError("apply_dyconv expects F_l with 24 channels");
  if (low.size(0) != params.batch()) throw ContractError("apply_dyconv: batch of F_l and parameters differ");
  const auto n = low.size(0);
  const auto h = low.size(2);
  const auto w = low.size(3);
  auto x = low.reshape({n, kLowChannels, h * w});
  for (int layer = 1; layer <= 3; ++layer) {
    x = torch::relu(torch::baddbmm(params.bias(layer).unsqueeze(2), params.weight(layer), x));
  }
  return x.view({n, kLowChannels, h, w});
}

LfrModuleImpl::LfrModuleImpl(int64_t latent_dim) {
  nn::Sequential m;
  m->push_back(nn::Linear(latent_dim, 128));
  m->push_back(nn::GELU());
  m->push_back(nn::Linear(128, 64));
  m->push_back(nn::GELU());
  m->push_back(nn::Linear(64, 64));
  mlp = register_module("mlp", m);
  generator = register_module("generator", nn::Linear(kConditionLength, kDynamicParamCount));
  torch::NoGradGuard guard;
  const double bound = 1.0 / std::sqrt(static_cast<double>(kConditionLength));
  generator->weight.uniform_(-bound, bound);
  generator->bias.zero_();
}

torch::Tensor LfrModuleImpl::condition_vector(const torch::Tensor& high, const torch::Tensor& z, bool use_latent) {
  if (high.dim() != 4 || high.size(1) != kHighChannels) throw ContractError("condition_vector expects F_h with 320 channels");
  auto pooled = high.mean({2, 3});
  torch::Tensor latent;
  if (use_latent) {
    if (!z.defined() || z.dim() != 2 || z.size(0) != high.size(0)) throw ContractError("condition_vector expects z [N,D]");
    latent = mlp->forward(z.detach());
  } else {
    latent = torch::zeros({high.size(0), 64}, high.options());
  }
  return torch::cat({pooled, latent}, 1);
}

DynamicParams LfrModuleImpl::generate_params(const torch::Tensor& condition) {
  if (condition.dim() != 2 || condition.size(1) != kConditionLength) {
    throw ContractError("generate_params expects a [N,384] condition");
  }
  return DynamicParams(generator->forward(condition));
}

torch::Tensor LfrModuleImpl::forward(const torch::Tensor& low, const torch::Tensor& high, const torch::Tensor& z,
                                     bool use_latent) {
  return apply_dyconv(low, generate_params(condition_vector(high, z, use_latent)));
}

}  // namespace rdr
