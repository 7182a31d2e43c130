#pragma once

#include <vector>

#include <torch/torch.h>

#include "rdr/data.hpp"
#include "rdr/model.hpp"

namespace rdr {

/// Spatially pooled F_l and F_r ([N,24] each). F_r equals F_l without LFR.
struct PooledFeatures {
  torch::Tensor pre;
  torch::Tensor post;
  std::vector<Domain> domains;
};

PooledFeatures pooled_low_features(RdrNet& net, const std::vector<ImageSample>& samples, int batch_size = 16);

/// Deterministic 2-D projection: centre, divide by the global RMS, project onto
/// the top-k principal axes. Components are sign-fixed so the largest-magnitude
/// loading of each axis is positive.
torch::Tensor pca_project(const torch::Tensor& x, int k = 2);

/// Euclidean distance between the source and target centroids of points [N,d].
double centroid_distance(const torch::Tensor& points, const std::vector<Domain>& domains);

struct EmbeddingResult {
  torch::Tensor pre;   // [N,2]
  torch::Tensor post;  // [N,2]
  std::vector<Domain> domains;
  double distance_pre = 0;
  double distance_post = 0;
};

EmbeddingResult embed_domains(RdrNet& net, const std::vector<ImageSample>& source,
                              const std::vector<ImageSample>& target);

}  // namespace rdr
