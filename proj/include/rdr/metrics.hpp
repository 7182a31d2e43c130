#pragma once

#include <array>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"

namespace rdr {

class MetricsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thresholds [2,H,W] (or [N,2,H,W]) probabilities; the OC mask is intersected with OD.
torch::Tensor binarize(const torch::Tensor& probs, double threshold);

struct ClassScores {
  double dice = 0;
  double iou = 0;        // |P n G| / |P u G|; reported as the primary mIoU column
  double iou_fgbg = 0;   // mean of foreground and background-complement IoU
  double acc = 0;
};

/// Per-class scores for one image; masks are bool [2,H,W]. Both-empty classes score 1.
std::array<ClassScores, 2> dice_miou_acc(const torch::Tensor& pred, const torch::Tensor& gt);

struct CdrMeasure {
  int64_t d_cup = 0;
  int64_t d_disc = 0;
};

/// Vertical extents (max_row - min_row + 1) of the cup and disc masks.
CdrMeasure vertical_diameters(const torch::Tensor& mask);

/// |d_c^ / d_d^ - d_c / d_d|. An empty predicted disc has ratio 0.
double cdr_delta(const torch::Tensor& pred, const torch::Tensor& gt);

struct ImageRecord {
  std::string id;
  std::array<ClassScores, 2> scores;
  double delta = 0;
  double mean_dice() const { return 0.5 * (scores[0].dice + scores[1].dice); }
};

struct MetricsReport {
  std::array<double, 2> dice{};
  std::array<double, 2> miou{};
  std::array<double, 2> miou_fgbg{};
  std::array<double, 2> acc{};
  double delta = 0;
  int n_images = 0;
  std::vector<ImageRecord> per_image;

  double mean_dice() const { return 0.5 * (dice[0] + dice[1]); }
  nlohmann::json to_json(bool include_per_image = true) const;
  static MetricsReport from_json(const nlohmann::json& j);
};

ImageRecord evaluate_image(const std::string& id, const torch::Tensor& pred, const torch::Tensor& gt);
/// Averages per-image records in their given order.
MetricsReport aggregate(std::vector<ImageRecord> records);

/// Two-sided Wilcoxon rank-sum p-value with midranks for ties; exact
/// enumeration when the pooled size is at most 20, else a tie-corrected
/// normal approximation with continuity correction.
double rank_sum_test(std::span<const double> a, std::span<const double> b);

/// Pooled midranks (1-based) of the concatenation a ++ b.
std::vector<double> midranks(std::span<const double> values);

}  // namespace rdr
