#include "rdr/embedding.hpp"

#include <stdexcept>

namespace rdr {

PooledFeatures pooled_low_features(RdrNet& net, const std::vector<ImageSample>& samples, int batch_size) {
  if (samples.empty()) throw std::invalid_argument("pooled_low_features: no samples");
  const bool was_training = net->is_training();
  net->eval();
  torch::NoGradGuard guard;
  std::vector<torch::Tensor> pre;
  std::vector<torch::Tensor> post;
  PooledFeatures out;
  for (size_t begin = 0; begin < samples.size(); begin += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(samples.size(), begin + static_cast<size_t>(batch_size));
    std::vector<ImageSample> chunk(samples.begin() + static_cast<std::ptrdiff_t>(begin),
                                   samples.begin() + static_cast<std::ptrdiff_t>(end));
    auto o = net->forward(stack_batch(chunk).images);
    pre.push_back(o.features.low.mean({2, 3}).to(torch::kFloat64));
    post.push_back(o.features.refined.mean({2, 3}).to(torch::kFloat64));
    for (const auto& s : chunk) out.domains.push_back(s.domain);
  }
  net->train(was_training);
  out.pre = torch::cat(pre);
  out.post = torch::cat(post);
  return out;
}

torch::Tensor pca_project(const torch::Tensor& x, int k) {
  auto centred = x.to(torch::kFloat64) - x.to(torch::kFloat64).mean(0, true);
  const double rms = centred.pow(2).mean().sqrt().item<double>();
  if (rms > 0) centred = centred / rms;
  auto [u, s, vh] = torch::linalg_svd(centred, false);
  auto axes = vh.slice(0, 0, std::min<int64_t>(k, vh.size(0))).clone();  // [k,d]
  for (int64_t i = 0; i < axes.size(0); ++i) {
    const auto j = axes[i].abs().argmax().item<int64_t>();
    if (axes[i][j].item<double>() < 0) axes[i].neg_();
  }
  return centred.matmul(axes.t());
}

double centroid_distance(const torch::Tensor& points, const std::vector<Domain>& domains) {
  std::vector<int64_t> src;
  std::vector<int64_t> tgt;
  for (size_t i = 0; i < domains.size(); ++i) (domains[i] == Domain::kSource ? src : tgt).push_back(static_cast<int64_t>(i));
  if (src.empty() || tgt.empty()) throw std::invalid_argument("centroid_distance needs both domains");
  auto cs = points.index_select(0, torch::tensor(src)).mean(0);
  auto ct = points.index_select(0, torch::tensor(tgt)).mean(0);
  return (cs - ct).norm().item<double>();
}

EmbeddingResult embed_domains(RdrNet& net, const std::vector<ImageSample>& source,
                              const std::vector<ImageSample>& target) {
  std::vector<ImageSample> all = source;
  all.insert(all.end(), target.begin(), target.end());
  for (size_t i = 0; i < all.size(); ++i) all[i].domain = i < source.size() ? Domain::kSource : Domain::kTarget;
  auto pooled = pooled_low_features(net, all);
  EmbeddingResult r;
  r.domains = pooled.domains;
  r.pre = pca_project(pooled.pre);
  r.post = pca_project(pooled.post);
  r.distance_pre = centroid_distance(r.pre, r.domains);
  r.distance_post = centroid_distance(r.post, r.domains);
  return r;
}

}  // namespace rdr
