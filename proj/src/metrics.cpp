#include "rdr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rdr {

torch::Tensor binarize(const torch::Tensor& probs, double threshold) {
  if (probs.dim() != 3 && probs.dim() != 4) throw MetricsError("binarize expects [2,H,W] or [N,2,H,W]");
  const int64_t ch = probs.dim() - 3;
  if (probs.size(ch) != 2) throw MetricsError("binarize expects two channels (OD, OC)");
  auto m = probs > threshold;
  auto od = m.select(ch, 0);
  auto oc = torch::logical_and(m.select(ch, 1), od);
  return torch::stack({od, oc}, ch);
}

namespace {

double ratio_or_one(int64_t num, int64_t den) {
  return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

std::array<ClassScores, 2> dice_miou_acc(const torch::Tensor& pred, const torch::Tensor& gt) {
  if (pred.sizes() != gt.sizes() || pred.dim() != 3 || pred.size(0) != 2) {
    throw MetricsError("dice_miou_acc expects equal [2,H,W] masks");
  }
  auto p = pred.to(torch::kBool);
  auto g = gt.to(torch::kBool);
  const int64_t total = p.size(1) * p.size(2);
  std::array<ClassScores, 2> out;
  for (int c = 0; c < 2; ++c) {
    auto pc = p[c];
    auto gc = g[c];
    const int64_t tp = torch::logical_and(pc, gc).sum().item<int64_t>();
    const int64_t np = pc.sum().item<int64_t>();
    const int64_t ng = gc.sum().item<int64_t>();
    const int64_t uni = np + ng - tp;
    const int64_t tn = total - uni;
    const int64_t bg_pred = total - np;
    const int64_t bg_gt = total - ng;
    const int64_t bg_uni = bg_pred + bg_gt - tn;
    ClassScores s;
    s.dice = ratio_or_one(2 * tp, np + ng);
    s.iou = ratio_or_one(tp, uni);
    s.iou_fgbg = 0.5 * (s.iou + ratio_or_one(tn, bg_uni));
    s.acc = static_cast<double>(tp + tn) / static_cast<double>(total);
    out[c] = s;
  }
  return out;
}

CdrMeasure vertical_diameters(const torch::Tensor& mask) {
  if (mask.dim() != 3 || mask.size(0) != 2) throw MetricsError("vertical_diameters expects [2,H,W]");
  auto extent = [](const torch::Tensor& m) -> int64_t {
    auto rows = torch::nonzero(m.to(torch::kBool).any(1));
    if (rows.size(0) == 0) return 0;
    return rows.max().item<int64_t>() - rows.min().item<int64_t>() + 1;
  };
  return {extent(mask[1]), extent(mask[0])};
}

double cdr_delta(const torch::Tensor& pred, const torch::Tensor& gt) {
  const auto g = vertical_diameters(gt);
  if (g.d_disc == 0) throw MetricsError("cdr_delta: ground-truth disc is empty");
  const auto p = vertical_diameters(pred);
  const double pred_ratio = p.d_disc == 0 ? 0.0 : static_cast<double>(p.d_cup) / static_cast<double>(p.d_disc);
  const double gt_ratio = static_cast<double>(g.d_cup) / static_cast<double>(g.d_disc);
  return std::abs(pred_ratio - gt_ratio);
}

ImageRecord evaluate_image(const std::string& id, const torch::Tensor& pred, const torch::Tensor& gt) {
  ImageRecord r;
  r.id = id;
  r.scores = dice_miou_acc(pred, gt);
  r.delta = cdr_delta(pred, gt);
  return r;
}

MetricsReport aggregate(std::vector<ImageRecord> records) {
  MetricsReport m;
  m.n_images = static_cast<int>(records.size());
  if (records.empty()) return m;
  const double n = static_cast<double>(records.size());
  for (const auto& r : records) {
    for (int c = 0; c < 2; ++c) {
      m.dice[c] += r.scores[c].dice / n;
      m.miou[c] += r.scores[c].iou / n;
      m.miou_fgbg[c] += r.scores[c].iou_fgbg / n;
      m.acc[c] += r.scores[c].acc / n;
    }
    m.delta += r.delta / n;
  }
  m.per_image = std::move(records);
  return m;
}

nlohmann::json MetricsReport::to_json(bool include_per_image) const {
  nlohmann::json j = {
      {"n_images", n_images},
      {"dice_od", dice[0]},
      {"dice_oc", dice[1]},
      {"miou_od", miou[0]},
      {"miou_oc", miou[1]},
      {"miou_fgbg_od", miou_fgbg[0]},
      {"miou_fgbg_oc", miou_fgbg[1]},
      {"acc_od", acc[0]},
      {"acc_oc", acc[1]},
      {"delta", delta},
      {"mean_dice", mean_dice()},
  };
  if (include_per_image) {
    auto arr = nlohmann::json::array();
    for (const auto& r : per_image) {
      arr.push_back({{"id", r.id},
                     {"dice_od", r.scores[0].dice},
                     {"dice_oc", r.scores[1].dice},
                     {"miou_od", r.scores[0].iou},
                     {"miou_oc", r.scores[1].iou},
                     {"miou_fgbg_od", r.scores[0].iou_fgbg},
                     {"miou_fgbg_oc", r.scores[1].iou_fgbg},
                     {"acc_od", r.scores[0].acc},
                     {"acc_oc", r.scores[1].acc},
                     {"delta", r.delta}});
    }
    j["per_image"] = std::move(arr);
  }
  return j;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  std::vector<ImageRecord> records;
  if (j.contains("per_image")) {
    for (const auto& e : j.at("per_image")) {
      ImageRecord r;
      r.id = e.at("id").get<std::string>();
      const char* keys[2] = {"od", "oc"};
      for (int c = 0; c < 2; ++c) {
        const std::string k = keys[c];
        r.scores[c].dice = e.at("dice_" + k).get<double>();
        r.scores[c].iou = e.at("miou_" + k).get<double>();
        r.scores[c].iou_fgbg = e.at("miou_fgbg_" + k).get<double>();
        r.scores[c].acc = e.at("acc_" + k).get<double>();
      }
      r.delta = e.at("delta").get<double>();
      records.push_back(std::move(r));
    }
  }
  if (!records.empty()) return aggregate(std::move(records));
  MetricsReport m;
  m.n_images = j.at("n_images").get<int>();
  m.dice = {j.at("dice_od").get<double>(), j.at("dice_oc").get<double>()};
  m.miou = {j.at("miou_od").get<double>(), j.at("miou_oc").get<double>()};
  m.miou_fgbg = {j.at("miou_fgbg_od").get<double>(), j.at("miou_fgbg_oc").get<double>()};
  m.acc = {j.at("acc_od").get<double>(), j.at("acc_oc").get<double>()};
  m.delta = j.at("delta").get<double>();
  return m;
}

std::vector<double> midranks(std::span<const double> values) {
  const size_t n = values.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t i, size_t j) { return values[i] < values[j]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double rank_sum_test(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw MetricsError("rank_sum_test: both samples must be non-empty");
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const auto ranks = midranks(pooled);
  const size_t na = a.size();
  const size_t n = pooled.size();

  if (n <= 20) {
    // Doubled midranks are integers; count subsets of size na by doubled rank sum.
    std::vector<int64_t> twice(n);
    for (size_t i = 0; i < n; ++i) twice[i] = static_cast<int64_t>(std::llround(2.0 * ranks[i]));
    const int64_t max_sum = std::accumulate(twice.begin(), twice.end(), int64_t{0});
    std::vector<std::vector<double>> ways(na + 1, std::vector<double>(static_cast<size_t>(max_sum) + 1, 0.0));
    ways[0][0] = 1.0;
    for (size_t i = 0; i < n; ++i) {
      for (size_t k = std::min(i + 1, na); k >= 1; --k) {
        for (int64_t s = max_sum; s >= twice[i]; --s) ways[k][s] += ways[k - 1][s - twice[i]];
      }
    }
    int64_t observed = 0;
    for (size_t i = 0; i < na; ++i) observed += twice[i];
    const int64_t centre = static_cast<int64_t>(na) * static_cast<int64_t>(n + 1);  // 2 * E[W]
    const int64_t dev = std::llabs(observed - centre);
    double extreme = 0.0;
    double all = 0.0;
    for (int64_t s = 0; s <= max_sum; ++s) {
      all += ways[na][s];
      if (std::llabs(s - centre) >= dev) extreme += ways[na][s];
    }
    return std::min(1.0, extreme / all);
  }

  double w = 0.0;
  for (size_t i = 0; i < na; ++i) w += ranks[i];
  const double nad = static_cast<double>(na);
  const double nbd = static_cast<double>(n - na);
  const double nd = static_cast<double>(n);
  const double mean = nad * (nd + 1.0) / 2.0;
  std::vector<double> sorted = ranks;
  std::sort(sorted.begin(), sorted.end());
  double ties = 0.0;
  for (size_t i = 0; i < n;) {
    size_t j = i;
    while (j < n && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    ties += t * t * t - t;
    i = j;
  }
  const double var = nad * nbd / 12.0 * ((nd + 1.0) - ties / (nd * (nd - 1.0)));
  if (var <= 0) return 1.0;
  const double diff = std::abs(w - mean);
  const double z = std::max(diff - 0.5, 0.0) / std::sqrt(var);
  return std::clamp(std::erfc(z / std::sqrt(2.0)), std::numeric_limits<double>::min(), 1.0);
}

}  // namespace rdr
