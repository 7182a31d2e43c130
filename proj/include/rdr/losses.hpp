#pragma once

#include <stdexcept>

#include <torch/torch.h>

#include "rdr/config.hpp"

namespace rdr {

class LossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kDiceSmooth = 1e-7;

/// w_l = 1 - sum(Y_l) / sum_l sum(Y_l) over the whole batch; returns [2].
torch::Tensor class_weights(const torch::Tensor& labels);

/// 1 - 2 sum_l w_l sum(Yh_l Y_l) / (sum_l w_l sum(Yh_l + Y_l) + 1e-7).
torch::Tensor gdl(const torch::Tensor& pred, const torch::Tensor& labels, const torch::Tensor& weights);
/// Plain (unweighted, per-class averaged) Dice loss for the loss-function comparison.
torch::Tensor dice_loss(const torch::Tensor& pred, const torch::Tensor& labels);
/// Per-channel binary cross-entropy averaged over batch, channels and pixels.
torch::Tensor bce_loss(const torch::Tensor& pred, const torch::Tensor& labels);
/// bce_loss + gdl (or + dice_loss).
torch::Tensor region_loss(const torch::Tensor& pred, const torch::Tensor& labels,
                          SegLossKind kind = SegLossKind::kGeneralizedDice);
/// (1/M) sum (B - B_hat)^2 per image, averaged over the batch.
torch::Tensor edge_loss(const torch::Tensor& pred, const torch::Tensor& target);

/// Network-side loss terms. Disabled modules leave their terms undefined (contributing 0).
struct LossParts {
  torch::Tensor region, edge, recon_s, recon_t, style, adv_region, adv_edge;
};

/// L_r + L_e + l1 (L_re^s + L_re^t) + l2 L_sty + l3 (L_r^adv + L_e^adv).
torch::Tensor total_objective(const LossParts& parts, const LossWeights& weights);

/// Scalar record of one optimisation step.
struct LossReport {
  double l_r = 0, l_e = 0, l_re_s = 0, l_re_t = 0, l_sty = 0, l_adv_r = 0, l_adv_e = 0, total = 0;
  double l_d_r = 0, l_d_e = 0;

  bool finite() const;
  nlohmann::json to_json() const;
};

LossReport make_report(const LossParts& parts, const torch::Tensor& total);

}  // namespace rdr
