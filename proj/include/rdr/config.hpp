#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <ATen/core/Generator.h>
#include "json.hpp"

namespace rdr {

/// Thrown for any malformed or inconsistent experiment configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Mode { kUda, kNoAdapt, kUpperBound };
enum class EncoderVariant { kFaithful, kToy };
enum class SegLossKind { kGeneralizedDice, kDice };

std::string to_string(Mode mode);
std::string to_string(EncoderVariant variant);
std::string to_string(SegLossKind kind);

struct LossWeights {
  double lambda1 = 0.1;    // reconstruction
  double lambda2 = 0.001;  // style consistency
  double lambda3 = 0.05;   // adversarial

  bool operator==(const LossWeights&) const = default;
};

struct ModuleFlags {
  bool ra = true;
  bool lfr = true;
  bool pma = true;

  bool any() const { return ra || lfr || pma; }
  bool operator==(const ModuleFlags&) const = default;
};

struct AugmentConfig {
  bool enabled = true;
  double probability = 0.5;  // per-transform coin
  double scale_min = 0.9;
  double scale_max = 1.1;
  double max_rotation_deg = 15.0;
  double elastic_alpha = 20.0;  // at 256 px, scaled linearly with image size
  double elastic_sigma = 4.0;
  double salt_pepper_fraction = 0.01;
  double erase_max_fraction = 0.1;
  double brightness_delta = 0.1;

  bool operator==(const AugmentConfig&) const = default;
};

struct ExperimentConfig {
  int image_size = 256;
  int roi_size = 512;
  int latent_dim = 128;
  LossWeights loss_weights;
  int batch_size = 8;
  int epochs = 200;
  double lr_network = 1e-3;
  double lr_network_decay = 0.1;
  int lr_decay_every = 100;
  double lr_discriminator = 2.5e-5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double sgd_momentum = 0.9;
  ModuleFlags modules;
  Mode mode = Mode::kUda;
  std::uint64_t seed = 0;
  EncoderVariant encoder_variant = EncoderVariant::kFaithful;
  double eval_threshold = 0.5;
  /// Hidden width of the edge decoder; 0 selects 256 (faithful) or 64 (toy).
  int decoder_channels = 0;
  SegLossKind seg_loss = SegLossKind::kGeneralizedDice;
  int edge_kernel = 5;
  double edge_sigma = 1.0;
  AugmentConfig augment;
  int eval_every = 1;
  std::string pretrained_encoder;
  std::string pretrained_style;

  int effective_decoder_channels() const;
  bool operator==(const ExperimentConfig&) const = default;
};

/// Validates invariants and applies mode dominance. Returns warnings.
std::vector<std::string> normalize(ExperimentConfig& config);

/// Parses a JSON document; unknown keys and type errors name the offending key.
ExperimentConfig config_from_json(const nlohmann::json& doc, std::vector<std::string>* warnings = nullptr);
nlohmann::json config_to_json(const ExperimentConfig& config);

/// Loads a config file. An empty file yields all defaults.
ExperimentConfig load_config(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr);
void save_config(const ExperimentConfig& config, const std::filesystem::path& path);

/// Applies RDR_SEED from the environment when set.
void apply_env_overrides(ExperimentConfig& config);

/// Deterministic derivation of named random streams from one experiment seed.
///
/// Every stochastic subsystem asks for its own stream by name plus optional
/// integer coordinates (epoch, step, sample index), so draws never depend on
/// the order in which subsystems run.
class RngHandle {
 public:
  explicit RngHandle(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t derive(std::string_view name, std::initializer_list<std::uint64_t> coords = {}) const;
  std::mt19937_64 stream(std::string_view name, std::initializer_list<std::uint64_t> coords = {}) const;
  at::Generator torch_generator(std::string_view name, std::initializer_list<std::uint64_t> coords = {}) const;

 private:
  std::uint64_t seed_;
};

/// Seeds the global torch generator and pins CPU execution to one thread.
RngHandle seed_all(std::uint64_t seed);

}  // namespace rdr
