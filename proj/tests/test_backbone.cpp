#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rdr/backbone.hpp"
#include "rdr/losses.hpp"

using namespace rdr;

namespace {

std::vector<int64_t> dims(const torch::Tensor& t) { return t.sizes().vec(); }

}  // namespace

TEST(Encoder, FaithfulContractAt256) {
  torch::manual_seed(0);
  Encoder enc(EncoderVariant::kFaithful);
  enc->eval();
  torch::NoGradGuard g;
  auto f = enc->forward(torch::rand({1, 3, 256, 256}));
  EXPECT_EQ(dims(f.low), (std::vector<int64_t>{1, 24, 64, 64}));
  EXPECT_EQ(dims(f.high), (std::vector<int64_t>{1, 320, 16, 16}));
}

TEST(Encoder, ToyContractAt64KeepsBatch) {
  torch::manual_seed(0);
  Encoder enc(EncoderVariant::kToy);
  auto f = enc->forward(torch::rand({8, 3, 64, 64}));
  EXPECT_EQ(dims(f.low), (std::vector<int64_t>{8, 24, 16, 16}));
  EXPECT_EQ(dims(f.high), (std::vector<int64_t>{8, 320, 4, 4}));
}

TEST(Encoder, ShapeViolationsNameTheDimension) {
  Encoder enc(EncoderVariant::kToy);
  try {
    enc->forward(torch::rand({1, 3, 40, 64}));
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("height"), std::string::npos);
  }
  try {
    enc->forward(torch::rand({1, 4, 64, 64}));
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("channel"), std::string::npos);
  }
}

TEST(EdgeDecoder, ZeroInputAndBiasGiveHalf) {
  torch::manual_seed(1);
  EdgeDecoder dec(256);
  torch::NoGradGuard g;
  dec->conv3->bias.zero_();
  auto out = dec->forward(torch::zeros({2, kFusedChannels, 8, 8}));
  // Batch statistics of a constant map leave float rounding, scaled up by 1/sqrt(eps).
  EXPECT_LT((out - 0.5).abs().max().item<float>(), 1e-5);
}

TEST(EdgeDecoder, OutputInOpenUnitInterval) {
  torch::manual_seed(2);
  EdgeDecoder dec(64);
  auto out = dec->forward(torch::randn({2, kFusedChannels, 8, 8}) * 3);
  EXPECT_GT(out.min().item<float>(), 0.0f);
  EXPECT_LT(out.max().item<float>(), 1.0f);
}

TEST(EdgeDecoder, ParameterCountMatchesFormula) {
  EdgeDecoder dec(256);
  const int64_t expect = 344 * 256 * 9 + 256 + 256 * 256 * 9 + 256 + 256 * 1 * 9 + 1;
  EXPECT_EQ(dec->conv_parameter_count(), expect);
  EXPECT_THROW(dec->forward(torch::zeros({1, 343, 4, 4})), ContractError);
}

TEST(RegionDecoder, ZeroWeightsGiveHalf) {
  RegionDecoder dec;
  torch::NoGradGuard g;
  dec->conv->weight.zero_();
  dec->conv->bias.zero_();
  auto out = dec->forward(torch::randn({1, kFusedChannels, 4, 4}), torch::rand({1, 1, 4, 4}));
  EXPECT_EQ(dims(out), (std::vector<int64_t>{1, 2, 4, 4}));
  EXPECT_TRUE(torch::equal(out, torch::full_like(out, 0.5)));
}

TEST(RegionDecoder, ChannelsAreIndependent) {
  torch::manual_seed(3);
  RegionDecoder dec;
  auto fs = torch::randn({1, kFusedChannels, 4, 4});
  auto b = torch::rand({1, 1, 4, 4});
  torch::NoGradGuard g;
  auto before = dec->forward(fs, b);
  dec->conv->weight[1].zero_();
  dec->conv->bias[1].zero_();
  auto after = dec->forward(fs, b);
  EXPECT_TRUE(torch::equal(before[0][0], after[0][0]));
  EXPECT_TRUE(torch::equal(after[0][1], torch::full_like(after[0][1], 0.5)));
  EXPECT_THROW(dec->forward(fs, torch::rand({1, 1, 3, 4})), ContractError);
}

TEST(RegionDecoder, RegionLossGradientMatchesFiniteDifferences) {
  torch::manual_seed(4);
  RegionDecoder dec;
  dec->to(torch::kFloat64);
  auto fs = torch::randn({2, kFusedChannels, 4, 4}, torch::kFloat64) * 0.1;
  auto b = torch::rand({2, 1, 4, 4}, torch::kFloat64);
  auto y = (torch::rand({2, 2, 4, 4}, torch::kFloat64) > 0.5).to(torch::kFloat64);
  y[0][0][0][0] = 1.0;
  auto loss = [&] { return region_loss(dec->forward(fs, b), y); };
  EXPECT_LT(oracle::fd_relative_error(loss, {dec->conv->weight, dec->conv->bias}, 40), 1e-4);
}

TEST(Backbone, FullResolutionOutputs) {
  torch::manual_seed(5);
  Backbone net(EncoderVariant::kFaithful, 256);
  net->eval();
  torch::NoGradGuard g;
  auto [f, p] = net->forward(torch::rand({1, 3, 256, 256}));
  EXPECT_EQ(dims(p.edge), (std::vector<int64_t>{1, 1, 256, 256}));
  EXPECT_EQ(dims(p.region), (std::vector<int64_t>{1, 2, 256, 256}));
  EXPECT_EQ(dims(f.fused), (std::vector<int64_t>{1, 344, 64, 64}));
  EXPECT_GT(p.region.min().item<float>(), 0.0f);
  EXPECT_LT(p.region.max().item<float>(), 1.0f);
}

TEST(Backbone, IdentityHookMatchesNoHook) {
  torch::manual_seed(6);
  Backbone net(EncoderVariant::kToy, 64);
  net->eval();
  torch::NoGradGuard g;
  auto x = torch::rand({2, 3, 32, 32});
  auto a = net->forward(x);
  auto b = net->forward(x, [](const FeatureBundle& f) { return f.low; });
  EXPECT_TRUE(torch::equal(a.second.region, b.second.region));
  EXPECT_TRUE(torch::equal(a.second.edge, b.second.edge));
  EXPECT_TRUE(torch::equal(a.first.refined, a.first.low));
}

TEST(Backbone, EdgePathIsLive) {
  torch::manual_seed(7);
  Backbone net(EncoderVariant::kToy, 64);
  net->eval();
  torch::NoGradGuard g;
  auto x = torch::rand({1, 3, 32, 32});
  auto before = net->forward(x).second.region;
  // Zero the region filter taps on the edge-map input channel (the last one).
  net->region_decoder->conv->weight.select(1, kFusedChannels).zero_();
  auto after = net->forward(x).second.region;
  EXPECT_GT((before - after).abs().max().item<float>(), 0.0f);
}

TEST(Backbone, EndToEndGradientsOnSmallInput) {
  torch::manual_seed(8);
  Backbone net(EncoderVariant::kToy, 16);
  net->to(torch::kFloat64);
  net->eval();  // fixed BN statistics keep the objective a smooth function of the weights
  auto x = torch::rand({1, 3, 32, 32}, torch::kFloat64);
  auto y = torch::zeros({1, 2, 32, 32}, torch::kFloat64);
  y[0][0].slice(0, 8, 24).slice(1, 8, 24).fill_(1.0);
  y[0][1].slice(0, 12, 20).slice(1, 12, 20).fill_(1.0);
  auto b = torch::rand({1, 1, 32, 32}, torch::kFloat64);
  auto loss = [&] {
    auto p = net->forward(x).second;
    return region_loss(p.region, y) + edge_loss(p.edge, b);
  };
  std::vector<torch::Tensor> groups;
  for (const auto& p : net->named_parameters()) {
    if (p.key().find("weight") != std::string::npos) groups.push_back(p.value());
  }
  EXPECT_LT(oracle::fd_relative_error(loss, groups, 4), 1e-4);
}
