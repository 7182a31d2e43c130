#include "rdr/losses.hpp"

#include <cmath>

#include "rdr/pma.hpp"

namespace rdr {

namespace F = torch::nn::functional;

namespace {

void check_region_shapes(const torch::Tensor& pred, const torch::Tensor& labels) {
  if (pred.sizes() != labels.sizes()) throw LossError("prediction and label shapes differ");
  if (pred.dim() != 4 || pred.size(1) != 2) throw LossError("region maps must be [N,2,H,W]");
}

}  // namespace

torch::Tensor class_weights(const torch::Tensor& labels) {
  if (labels.dim() != 4 || labels.size(1) != 2) throw LossError("labels must be [N,2,H,W]");
  auto per_class = labels.detach().to(torch::kFloat64).sum({0, 2, 3});
  const double total = per_class.sum().item<double>();
  if (total <= 0) throw LossError("class_weights: batch has no foreground pixels");
  return (1.0 - per_class / total).to(labels.scalar_type());
}

torch::Tensor gdl(const torch::Tensor& pred, const torch::Tensor& labels, const torch::Tensor& weights) {
  check_region_shapes(pred, labels);
  auto inter = (pred * labels).sum({0, 2, 3});
  auto denom = (pred + labels).sum({0, 2, 3});
  auto w = weights.to(pred.scalar_type());
  return 1.0 - 2.0 * (w * inter).sum() / ((w * denom).sum() + kDiceSmooth);
}

torch::Tensor dice_loss(const torch::Tensor& pred, const torch::Tensor& labels) {
  check_region_shapes(pred, labels);
  auto inter = (pred * labels).sum({0, 2, 3});
  auto denom = (pred + labels).sum({0, 2, 3});
  return (1.0 - 2.0 * inter / (denom + kDiceSmooth)).mean();
}

torch::Tensor bce_loss(const torch::Tensor& pred, const torch::Tensor& labels) {
  check_region_shapes(pred, labels);
  auto p = pred.clamp(kProbClamp, 1.0 - kProbClamp);
  return -(labels * torch::log(p) + (1.0 - labels) * torch::log(1.0 - p)).mean();
}

torch::Tensor region_loss(const torch::Tensor& pred, const torch::Tensor& labels, SegLossKind kind) {
  auto ce = bce_loss(pred, labels);
  if (kind == SegLossKind::kDice) return ce + dice_loss(pred, labels);
  return ce + gdl(pred, labels, class_weights(labels));
}

torch::Tensor edge_loss(const torch::Tensor& pred, const torch::Tensor& target) {
  if (pred.sizes() != target.sizes()) throw LossError("edge_loss: prediction and target shapes differ");
  return (target - pred).pow(2).mean();
}

torch::Tensor total_objective(const LossParts& p, const LossWeights& w) {
  torch::Tensor total;
  auto add = [&](const torch::Tensor& t, double scale) {
    if (!t.defined()) return;
    total = total.defined() ? total + scale * t : scale * t;
  };
  add(p.region, 1.0);
  add(p.edge, 1.0);
  add(p.recon_s, w.lambda1);
  add(p.recon_t, w.lambda1);
  add(p.style, w.lambda2);
  add(p.adv_region, w.lambda3);
  add(p.adv_edge, w.lambda3);
  if (!total.defined()) throw LossError("total_objective: no loss terms");
  return total;
}

bool LossReport::finite() const {
  for (double v : {l_r, l_e, l_re_s, l_re_t, l_sty, l_adv_r, l_adv_e, total, l_d_r, l_d_e}) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

nlohmann::json LossReport::to_json() const {
  return {{"l_r", l_r},         {"l_e", l_e},         {"l_re_s", l_re_s}, {"l_re_t", l_re_t},
          {"l_sty", l_sty},     {"l_adv_r", l_adv_r}, {"l_adv_e", l_adv_e}, {"total", total},
          {"l_D_r", l_d_r},     {"l_D_e", l_d_e}};
}

LossReport make_report(const LossParts& p, const torch::Tensor& total) {
  auto v = [](const torch::Tensor& t) { return t.defined() ? t.item<double>() : 0.0; };
  LossReport r;
  r.l_r = v(p.region);
  r.l_e = v(p.edge);
  r.l_re_s = v(p.recon_s);
  r.l_re_t = v(p.recon_t);
  r.l_sty = v(p.style);
  r.l_adv_r = v(p.adv_region);
  r.l_adv_e = v(p.adv_edge);
  r.total = v(total);
  return r;
}

}  // namespace rdr
