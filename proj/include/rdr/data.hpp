#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "rdr/config.hpp"

namespace rdr {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Domain { kSource, kTarget };
std::string to_string(Domain domain);

/// One fundus image. Tensors are channel-first float32:
/// image [3,H,W] in [0,1]; label [2,H,W] in {0,1} (channel 0 OD, 1 OC);
/// edge [1,H,W] in [0,1]. edge is present iff label is present.
struct ImageSample {
  torch::Tensor image;
  std::optional<torch::Tensor> label;
  std::optional<torch::Tensor> edge;
  Domain domain = Domain::kSource;
  std::string id;

  bool labeled() const { return label.has_value(); }
  int64_t height() const { return image.size(1); }
  int64_t width() const { return image.size(2); }
  /// Copy without label/edge, used to hand target samples to training.
  ImageSample unlabeled_view() const;
};

/// Mask file encoding: 0 background, 128 OD only, 255 OD and OC.
torch::Tensor decode_mask(const torch::Tensor& gray_u8);
torch::Tensor encode_mask(const torch::Tensor& label);

struct EdgeMapOptions {
  int kernel = 5;
  double sigma = 1.0;
};

/// Soft boundary map: per-channel Sobel magnitude, max over channels,
/// Gaussian blur, then rescaled so the maximum is 1 (an all-zero map stays zero).
torch::Tensor make_edge_map(const torch::Tensor& label, const EdgeMapOptions& options = {});

/// Reads root/images (+ root/masks when present), sorted by file stem.
std::vector<ImageSample> load_dataset(const std::filesystem::path& root, Domain domain,
                                      const EdgeMapOptions& edge_options = {});
/// Writes images as PNG (and masks when labeled) in the layout load_dataset reads.
void write_dataset(const std::filesystem::path& root, const std::vector<ImageSample>& samples);

torch::Tensor read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const torch::Tensor& image);
void write_gray(const std::filesystem::path& path, const torch::Tensor& gray_u8);

struct PixelCoord {
  double row = 0;
  double col = 0;
};

/// OD centroid of a labeled sample, image center otherwise.
PixelCoord roi_center(const ImageSample& sample);

/// Crops roi x roi around center (replicate padding past the border) and resamples
/// to out x out: bilinear for image and edge map, nearest for labels.
ImageSample crop_roi(const ImageSample& sample, PixelCoord center, int roi, int out);

/// Which augmentations may fire; each enabled one is gated by an independent coin.
struct AugmentSwitches {
  bool scale = true;
  bool rotate = true;
  bool flip = true;
  bool elastic = true;
  bool salt_pepper = true;
  bool erase = true;
  bool brightness = true;

  static AugmentSwitches none() { return {false, false, false, false, false, false, false}; }
};

struct AugmentParams {
  AugmentConfig config;
  AugmentSwitches switches;
  /// Forces every enabled coin to land heads; used to pin a transform in tests.
  bool force = false;
  /// Fixed rotation in degrees when rotation fires, instead of a random angle.
  std::optional<double> rotation_deg;
};

ImageSample augment(const ImageSample& sample, std::mt19937_64& rng, const AugmentParams& params);

struct SyntheticDomainSpec {
  std::pair<double, double> disc_radius_range{12.0, 16.0};  // vertical radius in pixels
  std::pair<double, double> cup_ratio_range{0.35, 0.65};    // vertical cup/disc ratio
  std::array<double, 3> tone_shift{0.0, 0.0, 0.0};
  double contrast = 1.0;
  double brightness = 0.0;
  double noise_sigma = 0.02;
  double vessel_density = 1.0;  // expected vessels = 6 * density
  double blur = 0.0;            // optional Gaussian blur sigma applied to the rendered image
  int image_size = 64;

  void validate() const;
};

struct SyntheticPair {
  std::vector<ImageSample> source;
  std::vector<ImageSample> target;  // labeled; strip with unlabeled_view() for training
};

SyntheticPair generate_synthetic_pair(const SyntheticDomainSpec& source_spec, const SyntheticDomainSpec& target_spec,
                                      int n, std::mt19937_64& rng, const EdgeMapOptions& edge_options = {});

/// Renders one labeled sample for a domain.
ImageSample render_synthetic(const SyntheticDomainSpec& spec, std::mt19937_64& rng, Domain domain,
                             const std::string& id, const EdgeMapOptions& edge_options = {});

/// Default desk-scale domain pair: the target differs in tone, contrast, brightness and noise.
std::pair<SyntheticDomainSpec, SyntheticDomainSpec> default_domain_specs(int image_size);

/// Source and target training sets plus a disjoint labeled target evaluation set.
struct SyntheticSplits {
  std::vector<ImageSample> source;
  std::vector<ImageSample> target_train;  // labeled; training only sees unlabeled views
  std::vector<ImageSample> target_eval;
};

/// Renders the default domain pair at image_size from one data seed.
SyntheticSplits synthetic_splits(int image_size, int n_train, int n_eval, std::uint64_t data_seed,
                                 const EdgeMapOptions& edge_options = {});

/// Stacks samples into [N,...] batches.
struct Batch {
  torch::Tensor images;
  torch::Tensor labels;  // undefined when unlabeled
  torch::Tensor edges;   // undefined when unlabeled
};
Batch stack_batch(const std::vector<ImageSample>& samples);

}  // namespace rdr
