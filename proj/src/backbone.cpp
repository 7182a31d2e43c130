#include "rdr/backbone.hpp"

#include <array>

namespace rdr {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

void check_image_batch(const torch::Tensor& x) {
  if (x.dim() != 4) throw ContractError("image batch must be [N,3,H,W], got rank " + std::to_string(x.dim()));
  if (x.size(1) != 3) throw ContractError("image batch channel dimension must be 3, got " + std::to_string(x.size(1)));
  if (x.size(2) % 16 != 0) throw ContractError("image height " + std::to_string(x.size(2)) + " is not divisible by 16");
  if (x.size(3) % 16 != 0) throw ContractError("image width " + std::to_string(x.size(3)) + " is not divisible by 16");
}

namespace {

// Appends conv -> BN -> ReLU6 (or ReLU) to s; Sequentials cannot nest in libtorch.
void conv_bn(nn::Sequential& s, int64_t in, int64_t out, int64_t k, int64_t stride, int64_t groups = 1,
             int64_t dilation = 1, bool relu6 = true) {
  const int64_t pad = (k / 2) * dilation;
  s->push_back(
      nn::Conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding(pad).dilation(dilation).groups(groups).bias(false)));
  s->push_back(nn::BatchNorm2d(out));
  if (relu6) {
    s->push_back(nn::ReLU6());
  } else {
    s->push_back(nn::ReLU());
  }
}

}  // namespace

InvertedResidualImpl::InvertedResidualImpl(int64_t in, int64_t out, int64_t stride, int64_t expand, int64_t dilation)
    : residual_(stride == 1 && in == out) {
  const int64_t hidden = in * expand;
  nn::Sequential body;
  if (expand != 1) conv_bn(body, in, hidden, 1, 1);
  conv_bn(body, hidden, hidden, 3, stride, hidden, dilation);
  body->push_back(nn::Conv2d(nn::Conv2dOptions(hidden, out, 1).bias(false)));
  body->push_back(nn::BatchNorm2d(out));
  body_ = register_module("body", body);
}

torch::Tensor InvertedResidualImpl::forward(const torch::Tensor& x) {
  auto y = body_->forward(x);
  return residual_ ? x + y : y;
}

EncoderImpl::EncoderImpl(EncoderVariant variant) : variant_(variant) {
  nn::Sequential low;
  nn::Sequential high;
  if (variant == EncoderVariant::kFaithful) {
    // {expand, channels, repeats, stride}; the stride-2 160 stage runs dilated at stride 1.
    struct Stage {
      int64_t t, c, n, s, d;
    };
    const std::array<Stage, 7> stages{{{1, 16, 1, 1, 1},
                                       {6, 24, 2, 2, 1},
                                       {6, 32, 3, 2, 1},
                                       {6, 64, 4, 2, 1},
                                       {6, 96, 3, 1, 1},
                                       {6, 160, 3, 1, 2},
                                       {6, 320, 1, 1, 2}}};
    conv_bn(low, 3, 32, 3, 2);
    int64_t in = 32;
    for (size_t i = 0; i < stages.size(); ++i) {
      const auto& st = stages[i];
      for (int64_t r = 0; r < st.n; ++r) {
        auto block = InvertedResidual(in, st.c, r == 0 ? st.s : 1, st.t, st.d);
        // F_l is the output of the 24-channel stage (stride 4).
        if (i < 2) {
          low->push_back(block);
        } else {
          high->push_back(block);
        }
        in = st.c;
      }
    }
  } else {
    conv_bn(low, 3, 16, 3, 2, 1, 1, false);
    conv_bn(low, 16, 24, 3, 2, 1, 1, false);
    conv_bn(low, 24, kLowChannels, 3, 1, 1, 1, false);
    conv_bn(high, kLowChannels, 48, 3, 2, 1, 1, false);
    conv_bn(high, 48, 96, 3, 2, 1, 1, false);
    conv_bn(high, 96, kHighChannels, 1, 1, 1, 1, false);
  }
  low_stage = register_module("low_stage", low);
  high_stage = register_module("high_stage", high);
}

FeatureBundle EncoderImpl::forward(const torch::Tensor& x) {
  check_image_batch(x);
  FeatureBundle f;
  f.low = low_stage->forward(x);
  f.high = high_stage->forward(f.low);
  return f;
}

EdgeDecoderImpl::EdgeDecoderImpl(int64_t width, int64_t in_channels) {
  conv1 = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(in_channels, width, 3).padding(1)));
  bn1 = register_module("bn1", nn::BatchNorm2d(width));
  conv2 = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(width, width, 3).padding(1)));
  bn2 = register_module("bn2", nn::BatchNorm2d(width));
  conv3 = register_module("conv3", nn::Conv2d(nn::Conv2dOptions(width, 1, 3).padding(1)));
}

torch::Tensor EdgeDecoderImpl::forward(const torch::Tensor& fused) {
  if (fused.dim() != 4 || fused.size(1) != conv1->options.in_channels()) {
    throw ContractError("edge decoder expects " + std::to_string(conv1->options.in_channels()) +
                        " input channels, got " + (fused.dim() == 4 ? std::to_string(fused.size(1)) : "rank " + std::to_string(fused.dim())));
  }
  auto x = torch::relu(bn1->forward(conv1->forward(fused)));
  x = torch::relu(bn2->forward(conv2->forward(x)));
  return torch::sigmoid(conv3->forward(x));
}

int64_t EdgeDecoderImpl::conv_parameter_count() const {
  int64_t n = 0;
  for (const auto* c : {&conv1, &conv2, &conv3}) {
    for (const auto& p : (*c)->parameters()) n += p.numel();
  }
  return n;
}

RegionDecoderImpl::RegionDecoderImpl(int64_t in_channels) {
  conv = register_module("conv", nn::Conv2d(nn::Conv2dOptions(in_channels, 2, 3).padding(1)));
}

torch::Tensor RegionDecoderImpl::forward(const torch::Tensor& fused, const torch::Tensor& edge) {
  if (fused.dim() != 4 || edge.dim() != 4 || fused.size(0) != edge.size(0) || fused.size(2) != edge.size(2) ||
      fused.size(3) != edge.size(3)) {
    throw ContractError("region decoder inputs must share batch and spatial dimensions");
  }
  if (fused.size(1) + edge.size(1) != conv->options.in_channels()) {
    throw ContractError("region decoder expects " + std::to_string(conv->options.in_channels()) +
                        " concatenated channels, got " + std::to_string(fused.size(1) + edge.size(1)));
  }
  return torch::sigmoid(conv->forward(torch::cat({fused, edge}, 1)));
}

torch::Tensor fuse_features(const torch::Tensor& high, const torch::Tensor& refined) {
  if (high.size(1) != kHighChannels) throw ContractError("F_h must have 320 channels, got " + std::to_string(high.size(1)));
  if (refined.size(1) != kLowChannels) throw ContractError("F_r must have 24 channels, got " + std::to_string(refined.size(1)));
  auto up = F::interpolate(high, F::InterpolateFuncOptions()
                                     .size(std::vector<int64_t>{refined.size(2), refined.size(3)})
                                     .mode(torch::kBilinear)
                                     .align_corners(false));
  return torch::cat({up, refined}, 1);
}

BackboneImpl::BackboneImpl(EncoderVariant variant, int64_t decoder_width) {
  encoder = register_module("encoder", Encoder(variant));
  edge_decoder = register_module("edge_decoder", EdgeDecoder(decoder_width));
  region_decoder = register_module("region_decoder", RegionDecoder());
}

FeatureBundle BackboneImpl::encode(const torch::Tensor& x) { return encoder->forward(x); }

PredictionPair BackboneImpl::decode(FeatureBundle& f, int64_t out_h, int64_t out_w) {
  if (!f.refined.defined()) f.refined = f.low;
  f.fused = fuse_features(f.high, f.refined);
  PredictionPair p;
  p.edge_small = edge_decoder->forward(f.fused);
  p.region_small = region_decoder->forward(f.fused, p.edge_small);
  auto up = F::InterpolateFuncOptions().size(std::vector<int64_t>{out_h, out_w}).mode(torch::kBilinear).align_corners(false);
  p.edge = F::interpolate(p.edge_small, up);
  p.region = F::interpolate(p.region_small, up);
  return p;
}

std::pair<FeatureBundle, PredictionPair> BackboneImpl::forward(const torch::Tensor& x, const RefineHook& refine) {
  auto f = encode(x);
  if (refine) f.refined = refine(f);
  auto p = decode(f, x.size(2), x.size(3));
  return {std::move(f), std::move(p)};
}

int64_t count_parameters(const torch::nn::Module& module, bool trainable_only) {
  int64_t n = 0;
  for (const auto& p : module.parameters()) {
    if (!trainable_only || p.requires_grad()) n += p.numel();
  }
  return n;
}

void save_module_weights(const torch::nn::Module& module, const std::string& path) {
  torch::serialize::OutputArchive archive;
  for (const auto& p : module.named_parameters()) archive.write(p.key(), p.value());
  for (const auto& b : module.named_buffers()) archive.write(b.key(), b.value(), /*is_buffer=*/true);
  archive.save_to(path);
}

void load_module_weights(torch::nn::Module& module, const std::string& path) {
  torch::serialize::InputArchive archive;
  archive.load_from(path);
  torch::NoGradGuard guard;
  for (auto& p : module.named_parameters()) {
    torch::Tensor t;
    if (!archive.try_read(p.key(), t)) throw std::runtime_error("weight file " + path + " lacks parameter " + p.key());
    if (t.sizes() != p.value().sizes()) throw std::runtime_error("weight file " + path + ": shape mismatch for " + p.key());
    p.value().copy_(t);
  }
  for (auto& b : module.named_buffers()) {
    torch::Tensor t;
    if (archive.try_read(b.key(), t, /*is_buffer=*/true) && t.sizes() == b.value().sizes()) b.value().copy_(t);
  }
}

}  // namespace rdr
