#include <cmath>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rdr/data.hpp"
#include "rdr/ra.hpp"

using namespace rdr;

namespace {

LatentCode code_of(torch::Tensor mu, torch::Tensor log_var) {
  LatentCode c;
  c.mu = std::move(mu);
  c.log_var = std::move(log_var);
  return c;
}

}  // namespace

TEST(Vae, EncodeShapesAt256) {
  torch::manual_seed(0);
  VaeBranch vae(256, 128);
  EXPECT_EQ(vae->head->options.in_features(), 16 * 16 * 16);
  auto code = vae->encode(torch::randn({2, 24, 64, 64}), torch::randn({2, 320, 16, 16}));
  EXPECT_EQ(code.mu.sizes(), (std::vector<int64_t>{2, 128}));
  EXPECT_EQ(code.log_var.sizes(), (std::vector<int64_t>{2, 128}));
  auto r = vae->decode(code.mu);
  EXPECT_EQ(r.sizes(), (std::vector<int64_t>{2, 3, 256, 256}));
  EXPECT_GT(r.min().item<float>(), 0.0f);
  EXPECT_LT(r.max().item<float>(), 1.0f);
}

TEST(Vae, ZeroHeadGivesStandardPosterior) {
  VaeBranch vae(64, 128);
  torch::NoGradGuard g;
  vae->head->weight.zero_();
  vae->head->bias.zero_();
  auto code = vae->encode(torch::zeros({3, 24, 16, 16}), torch::zeros({3, 320, 4, 4}));
  EXPECT_EQ(code.mu.abs().max().item<float>(), 0.0f);
  EXPECT_EQ(code.log_var.abs().max().item<float>(), 0.0f);
  EXPECT_EQ(code.mu.size(0), 3);
  EXPECT_THROW(vae->encode(torch::zeros({1, 24, 16, 16}), torch::zeros({1, 320, 8, 8})), ContractError);
  EXPECT_THROW(vae->decode(torch::zeros({1, 64})), ContractError);
}

TEST(Reparameterize, Identities) {
  auto mu = torch::randn({2, 8});
  auto code = code_of(mu, torch::randn({2, 8}));
  EXPECT_TRUE(torch::equal(reparameterize_with(code, torch::zeros({2, 8})), mu));
  auto e = torch::randn({2, 8});
  auto unit = code_of(mu, torch::zeros({2, 8}));
  EXPECT_TRUE(torch::allclose(reparameterize_with(unit, e), mu + e, 0, 0));
  // Stored eps reproduces z bit-exactly.
  auto gen = at::detail::createCPUGenerator(3);
  reparameterize(code, gen);
  EXPECT_TRUE(torch::equal(code.z, code.mu + torch::exp(0.5 * code.log_var) * code.eps));
}

TEST(Reparameterize, MonteCarloMean) {
  const int64_t n = 100000;
  auto mu = torch::tensor({0.5, -1.0, 2.0}, torch::kFloat64);
  auto log_var = torch::tensor({0.0, std::log(4.0), std::log(0.25)}, torch::kFloat64);
  auto code = code_of(mu.expand({n, 3}).contiguous(), log_var.expand({n, 3}).contiguous());
  auto gen = at::detail::createCPUGenerator(11);
  auto z = reparameterize(code, gen);
  auto mean = z.mean(0);
  auto sigma = torch::exp(0.5 * log_var);
  for (int d = 0; d < 3; ++d) {
    EXPECT_NEAR(mean[d].item<double>(), mu[d].item<double>(), 3.0 * sigma[d].item<double>() / std::sqrt(double(n)));
  }
}

TEST(KlLoss, AnalyticValues) {
  EXPECT_DOUBLE_EQ(kl_loss(code_of(torch::zeros({1, 128}, torch::kFloat64), torch::zeros({1, 128}, torch::kFloat64)))
                       .item<double>(),
                   0.0);
  EXPECT_NEAR(kl_loss(code_of(torch::ones({1, 128}, torch::kFloat64), torch::zeros({1, 128}, torch::kFloat64)))
                  .item<double>(),
              1.0, 1e-12);
}

TEST(KlLoss, MatchesElementwiseLoopAndIsNonNegative) {
  torch::manual_seed(12);
  auto mu = torch::randn({4, 16}, torch::kFloat64);
  auto lv = torch::randn({4, 16}, torch::kFloat64);
  double acc = 0;
  for (int b = 0; b < 4; ++b) {
    double row = 0;
    for (int d = 0; d < 16; ++d) {
      const double m = mu[b][d].item<double>(), l = lv[b][d].item<double>();
      row += std::abs(m * m + std::exp(l) - l - 1.0);
    }
    acc += row / 16.0;
  }
  const double kl = kl_loss(code_of(mu, lv)).item<double>();
  EXPECT_NEAR(kl, acc / 4.0, 1e-12);
  EXPECT_GT(kl, 0.0);
}

TEST(ReconLoss, AnalyticValues) {
  auto x = torch::rand({2, 3, 8, 8}, torch::kFloat64);
  auto zero = code_of(torch::zeros({2, 128}, torch::kFloat64), torch::zeros({2, 128}, torch::kFloat64));
  EXPECT_EQ(recon_loss(x, x, zero).item<double>(), 0.0);
  EXPECT_NEAR(recon_mse(x + 0.1, x).item<double>(), 0.03, 1e-12);
  EXPECT_THROW(recon_mse(x, x.slice(2, 0, 4)), ContractError);
}

TEST(ReconLoss, GradientMatchesFiniteDifferences) {
  torch::manual_seed(13);
  auto r = torch::rand({2, 3, 8, 8}, torch::kFloat64).requires_grad_();
  auto x = torch::rand({2, 3, 8, 8}, torch::kFloat64);
  auto mu = torch::randn({2, 8}, torch::kFloat64).requires_grad_();
  auto lv = (torch::randn({2, 8}, torch::kFloat64) * 0.5).requires_grad_();
  auto loss = [&] { return recon_loss(r, x, code_of(mu, lv)); };
  EXPECT_LT(oracle::fd_relative_error(loss, {r, mu, lv}, 30), 1e-4);
}

TEST(Vae, OverfitsOneImage) {
  torch::manual_seed(14);
  const auto [spec, unused] = default_domain_specs(32);
  std::mt19937_64 rng(5);
  auto img = render_synthetic(spec, rng, Domain::kSource, "x").image.unsqueeze(0);
  VaeBranch vae(32, 128);
  auto low = torch::randn({1, 24, 8, 8});
  auto high = torch::randn({1, 320, 2, 2});
  torch::optim::Adam opt(vae->parameters(), torch::optim::AdamOptions(1e-3));
  double mse = 1.0;
  for (int i = 0; i < 500; ++i) {
    opt.zero_grad();
    auto loss = recon_mse(vae->decode(vae->encode(low, high).mu), img);
    loss.backward();
    opt.step();
    mse = loss.item<double>();
  }
  EXPECT_LT(mse, 0.01);
}

TEST(StyleEncoder, ChannelsFrozenAndLiveInputGradient) {
  StyleEncoder style;
  EXPECT_TRUE(style->random_fallback());
  auto r = torch::rand({2, 3, 16, 16}).requires_grad_();
  auto f = style->forward(r);
  EXPECT_EQ(f.sizes(), (std::vector<int64_t>{2, 128, 8, 8}));
  for (const auto& p : style->parameters()) EXPECT_FALSE(p.requires_grad());
  auto loss = batch_style_loss(f.slice(0, 0, 1), f.slice(0, 1, 2));
  loss.backward();
  for (const auto& p : style->parameters()) EXPECT_FALSE(p.grad().defined());
  EXPECT_GT(r.grad().abs().sum().item<float>(), 0.0f);
}

TEST(StyleEncoder, FallbackIsFixed) {
  StyleEncoder a, b;
  for (size_t i = 0; i < a->parameters().size(); ++i) {
    EXPECT_TRUE(torch::equal(a->parameters()[i], b->parameters()[i]));
  }
}

TEST(Gram, OrthonormalChannels) {
  auto f = torch::tensor({1.0, 0.0, 0.0, 1.0}, torch::kFloat64).view({1, 2, 1, 2});
  EXPECT_TRUE(torch::equal(gram(f)[0], torch::eye(2, torch::kFloat64)));
}

TEST(Gram, SymmetricPsd) {
  torch::manual_seed(15);
  auto g = gram(torch::randn({3, 6, 4, 5}, torch::kFloat64));
  EXPECT_EQ((g - g.transpose(1, 2)).abs().max().item<double>(), 0.0);
  auto eig = torch::linalg_eigvalsh(g);
  EXPECT_GE(eig.min().item<double>(), -1e-9);
}

TEST(StyleLoss, AnalyticValuesAndSymmetry) {
  auto g = torch::randn({4, 4}, torch::kFloat64);
  EXPECT_EQ(style_loss(g, g, 10).item<double>(), 0.0);
  EXPECT_DOUBLE_EQ(style_loss(torch::full({1, 1}, 2.0, torch::kFloat64), torch::zeros({1, 1}, torch::kFloat64), 1)
                       .item<double>(),
                   1.0);
  auto h = torch::randn({4, 4}, torch::kFloat64);
  EXPECT_DOUBLE_EQ(style_loss(g, h, 7).item<double>(), style_loss(h, g, 7).item<double>());
  EXPECT_GE(style_loss(g, h, 7).item<double>(), 0.0);
  EXPECT_THROW(style_loss(g, torch::zeros({3, 3}, torch::kFloat64), 7), ContractError);
}

TEST(StyleLoss, InvariantUnderPixelPermutation) {
  torch::manual_seed(16);
  auto fs = torch::randn({2, 5, 4, 4}, torch::kFloat64);
  auto ft = torch::randn({2, 5, 4, 4}, torch::kFloat64);
  auto perm = torch::randperm(16);
  auto shuffle = [&](const torch::Tensor& f) { return f.flatten(2).index_select(2, perm).view({2, 5, 4, 4}); };
  EXPECT_NEAR(batch_style_loss(fs, ft).item<double>(), batch_style_loss(shuffle(fs), shuffle(ft)).item<double>(),
              1e-12);
}

TEST(StyleLoss, GradientThroughStylePath) {
  torch::manual_seed(17);
  StyleEncoder style;
  style->to(torch::kFloat64);
  auto rs = torch::rand({2, 3, 16, 16}, torch::kFloat64).requires_grad_();
  auto rt = torch::rand({2, 3, 16, 16}, torch::kFloat64);
  auto loss = [&] { return batch_style_loss(style->forward(rs), style->forward(rt)); };
  EXPECT_LT(oracle::fd_relative_error(loss, {rs}, 40), 1e-3);
}
