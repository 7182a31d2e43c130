#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rdr/embedding.hpp"

namespace rdr {

struct BoxStats {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;  // whisker ends at 1.5 IQR
  std::vector<double> outliers;
};

/// Quartiles by linear interpolation between order statistics.
BoxStats box_stats(std::vector<double> values);

struct BoxSeries {
  std::string label;
  std::vector<double> values;
};

struct BoxGroup {
  std::string title;  // e.g. "OD"
  std::vector<BoxSeries> series;
};

/// One panel per group, one box per series; values are assumed to lie in [0,1].
void write_boxplot_svg(const std::filesystem::path& path, const std::vector<BoxGroup>& groups,
                       const std::string& y_label = "Dice");

/// Two side-by-side scatter panels (before / after refinement), coloured by domain.
void write_embedding_svg(const std::filesystem::path& path, const EmbeddingResult& embedding);

}  // namespace rdr
