#include "rdr/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

namespace rdr {

namespace {

using nlohmann::json;

template <typename T>
void read_key(const json& obj, const std::string& prefix, const std::string& key, T& out) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + prefix + key + "': " + e.what());
  }
}

void reject_unknown(const json& obj, const std::string& prefix, std::initializer_list<const char*> known) {
  if (!obj.is_object()) throw ConfigError("config key '" + prefix + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    bool found = false;
    for (const char* k : known) found = found || key == k;
    if (!found) throw ConfigError("unknown config key '" + prefix + key + "'");
  }
}

template <typename E>
E parse_enum(const json& obj, const std::string& key, E fallback,
             std::initializer_list<std::pair<const char*, E>> table) {
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  if (!it->is_string()) throw ConfigError("config key '" + key + "' must be a string");
  const auto s = it->get<std::string>();
  for (const auto& [name, value] : table) {
    if (s == name) return value;
  }
  std::string allowed;
  for (const auto& [name, value] : table) allowed += std::string(allowed.empty() ? "" : ", ") + name;
  throw ConfigError("config key '" + key + "': invalid value '" + s + "' (expected one of " + allowed + ")");
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::kUda: return "uda";
    case Mode::kNoAdapt: return "no_adapt";
    case Mode::kUpperBound: return "upper_bound";
  }
  return "?";
}

std::string to_string(EncoderVariant variant) {
  return variant == EncoderVariant::kFaithful ? "faithful" : "toy";
}

std::string to_string(SegLossKind kind) { return kind == SegLossKind::kGeneralizedDice ? "gdl" : "dice"; }

int ExperimentConfig::effective_decoder_channels() const {
  if (decoder_channels > 0) return decoder_channels;
  return encoder_variant == EncoderVariant::kFaithful ? 256 : 64;
}

std::vector<std::string> normalize(ExperimentConfig& c) {
  std::vector<std::string> warnings;
  if (c.image_size <= 0 || c.image_size % 16 != 0) {
    throw ConfigError("config key 'image_size': " + std::to_string(c.image_size) + " is not a positive multiple of 16");
  }
  if (c.roi_size <= 0) throw ConfigError("config key 'roi_size' must be positive");
  if (c.latent_dim <= 0) throw ConfigError("config key 'latent_dim' must be positive");
  if (c.batch_size <= 0) throw ConfigError("config key 'batch_size' must be positive");
  if (c.epochs <= 0) throw ConfigError("config key 'epochs' must be positive");
  if (c.lr_decay_every <= 0) throw ConfigError("config key 'lr_decay_every' must be positive");
  if (c.eval_every <= 0) throw ConfigError("config key 'eval_every' must be positive");
  if (c.decoder_channels < 0) throw ConfigError("config key 'decoder_channels' must be >= 0");
  if (c.edge_kernel <= 0 || c.edge_kernel % 2 == 0) throw ConfigError("config key 'edge_kernel' must be odd and positive");
  if (c.edge_sigma <= 0) throw ConfigError("config key 'edge_sigma' must be positive");
  if (!(c.eval_threshold > 0.0 && c.eval_threshold < 1.0)) {
    throw ConfigError("config key 'eval_threshold' must lie in (0,1)");
  }
  const auto& w = c.loss_weights;
  if (w.lambda1 < 0) throw ConfigError("config key 'loss_weights.lambda1' must be >= 0");
  if (w.lambda2 < 0) throw ConfigError("config key 'loss_weights.lambda2' must be >= 0");
  if (w.lambda3 < 0) throw ConfigError("config key 'loss_weights.lambda3' must be >= 0");
  if (c.lr_network <= 0 || c.lr_discriminator < 0) throw ConfigError("learning rates must be positive");
  if (!(c.augment.probability >= 0 && c.augment.probability <= 1)) {
    throw ConfigError("config key 'augment.probability' must lie in [0,1]");
  }
  if (c.mode != Mode::kUda && c.modules.any()) {
    warnings.push_back("mode=" + to_string(c.mode) + " disables all adaptation modules (RA/LFR/PMA forced false)");
    c.modules = ModuleFlags{false, false, false};
  }
  return warnings;
}

ExperimentConfig config_from_json(const json& doc, std::vector<std::string>* warnings) {
  ExperimentConfig c;
  if (doc.is_null()) {
    auto w = normalize(c);
    if (warnings) *warnings = std::move(w);
    return c;
  }
  reject_unknown(doc, "",
                 {"image_size", "roi_size", "latent_dim", "loss_weights", "batch_size", "epochs", "lr_network",
                  "lr_network_decay", "lr_decay_every", "lr_discriminator", "adam_beta1", "adam_beta2",
                  "sgd_momentum", "modules", "mode", "seed", "encoder_variant", "eval_threshold",
                  "decoder_channels", "seg_loss", "edge_kernel", "edge_sigma", "augment", "eval_every",
                  "pretrained_encoder", "pretrained_style"});
  read_key(doc, "", "image_size", c.image_size);
  read_key(doc, "", "roi_size", c.roi_size);
  read_key(doc, "", "latent_dim", c.latent_dim);
  read_key(doc, "", "batch_size", c.batch_size);
  read_key(doc, "", "epochs", c.epochs);
  read_key(doc, "", "lr_network", c.lr_network);
  read_key(doc, "", "lr_network_decay", c.lr_network_decay);
  read_key(doc, "", "lr_decay_every", c.lr_decay_every);
  read_key(doc, "", "lr_discriminator", c.lr_discriminator);
  read_key(doc, "", "adam_beta1", c.adam_beta1);
  read_key(doc, "", "adam_beta2", c.adam_beta2);
  read_key(doc, "", "sgd_momentum", c.sgd_momentum);
  read_key(doc, "", "seed", c.seed);
  read_key(doc, "", "eval_threshold", c.eval_threshold);
  read_key(doc, "", "decoder_channels", c.decoder_channels);
  read_key(doc, "", "edge_kernel", c.edge_kernel);
  read_key(doc, "", "edge_sigma", c.edge_sigma);
  read_key(doc, "", "eval_every", c.eval_every);
  read_key(doc, "", "pretrained_encoder", c.pretrained_encoder);
  read_key(doc, "", "pretrained_style", c.pretrained_style);
  c.mode = parse_enum(doc, "mode", c.mode,
                      {{"uda", Mode::kUda}, {"no_adapt", Mode::kNoAdapt}, {"upper_bound", Mode::kUpperBound}});
  c.encoder_variant = parse_enum(doc, "encoder_variant", c.encoder_variant,
                                 {{"faithful", EncoderVariant::kFaithful}, {"toy", EncoderVariant::kToy}});
  c.seg_loss = parse_enum(doc, "seg_loss", c.seg_loss,
                          {{"gdl", SegLossKind::kGeneralizedDice}, {"dice", SegLossKind::kDice}});
  if (auto it = doc.find("loss_weights"); it != doc.end()) {
    reject_unknown(*it, "loss_weights.", {"lambda1", "lambda2", "lambda3"});
    read_key(*it, "loss_weights.", "lambda1", c.loss_weights.lambda1);
    read_key(*it, "loss_weights.", "lambda2", c.loss_weights.lambda2);
    read_key(*it, "loss_weights.", "lambda3", c.loss_weights.lambda3);
  }
  if (auto it = doc.find("modules"); it != doc.end()) {
    reject_unknown(*it, "modules.", {"ra", "lfr", "pma"});
    read_key(*it, "modules.", "ra", c.modules.ra);
    read_key(*it, "modules.", "lfr", c.modules.lfr);
    read_key(*it, "modules.", "pma", c.modules.pma);
  }
  if (auto it = doc.find("augment"); it != doc.end()) {
    auto& a = c.augment;
    reject_unknown(*it, "augment.",
                   {"enabled", "probability", "scale_min", "scale_max", "max_rotation_deg", "elastic_alpha",
                    "elastic_sigma", "salt_pepper_fraction", "erase_max_fraction", "brightness_delta"});
    read_key(*it, "augment.", "enabled", a.enabled);
    read_key(*it, "augment.", "probability", a.probability);
    read_key(*it, "augment.", "scale_min", a.scale_min);
    read_key(*it, "augment.", "scale_max", a.scale_max);
    read_key(*it, "augment.", "max_rotation_deg", a.max_rotation_deg);
    read_key(*it, "augment.", "elastic_alpha", a.elastic_alpha);
    read_key(*it, "augment.", "elastic_sigma", a.elastic_sigma);
    read_key(*it, "augment.", "salt_pepper_fraction", a.salt_pepper_fraction);
    read_key(*it, "augment.", "erase_max_fraction", a.erase_max_fraction);
    read_key(*it, "augment.", "brightness_delta", a.brightness_delta);
  }
  auto w = normalize(c);
  if (warnings) *warnings = std::move(w);
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  const auto& a = c.augment;
  return json{
      {"image_size", c.image_size},
      {"roi_size", c.roi_size},
      {"latent_dim", c.latent_dim},
      {"loss_weights",
       {{"lambda1", c.loss_weights.lambda1}, {"lambda2", c.loss_weights.lambda2}, {"lambda3", c.loss_weights.lambda3}}},
      {"batch_size", c.batch_size},
      {"epochs", c.epochs},
      {"lr_network", c.lr_network},
      {"lr_network_decay", c.lr_network_decay},
      {"lr_decay_every", c.lr_decay_every},
      {"lr_discriminator", c.lr_discriminator},
      {"adam_beta1", c.adam_beta1},
      {"adam_beta2", c.adam_beta2},
      {"sgd_momentum", c.sgd_momentum},
      {"modules", {{"ra", c.modules.ra}, {"lfr", c.modules.lfr}, {"pma", c.modules.pma}}},
      {"mode", to_string(c.mode)},
      {"seed", c.seed},
      {"encoder_variant", to_string(c.encoder_variant)},
      {"eval_threshold", c.eval_threshold},
      {"decoder_channels", c.decoder_channels},
      {"seg_loss", to_string(c.seg_loss)},
      {"edge_kernel", c.edge_kernel},
      {"edge_sigma", c.edge_sigma},
      {"augment",
       {{"enabled", a.enabled},
        {"probability", a.probability},
        {"scale_min", a.scale_min},
        {"scale_max", a.scale_max},
        {"max_rotation_deg", a.max_rotation_deg},
        {"elastic_alpha", a.elastic_alpha},
        {"elastic_sigma", a.elastic_sigma},
        {"salt_pepper_fraction", a.salt_pepper_fraction},
        {"erase_max_fraction", a.erase_max_fraction},
        {"brightness_delta", a.brightness_delta}}},
      {"eval_every", c.eval_every},
      {"pretrained_encoder", c.pretrained_encoder},
      {"pretrained_style", c.pretrained_style},
  };
}

ExperimentConfig load_config(const std::filesystem::path& path, std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return config_from_json(json(), warnings);
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  return config_from_json(doc, warnings);
}

void save_config(const ExperimentConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config file " + path.string());
  out << config_to_json(config).dump(2) << "\n";
}

void apply_env_overrides(ExperimentConfig& config) {
  if (const char* s = std::getenv("RDR_SEED"); s != nullptr && *s != '\0') {
    char* end = nullptr;
    const auto v = std::strtoull(s, &end, 10);
    if (end == nullptr || *end != '\0') throw ConfigError(std::string("RDR_SEED is not an integer: ") + s);
    config.seed = v;
  }
}

std::uint64_t RngHandle::derive(std::string_view name, std::initializer_list<std::uint64_t> coords) const {
  std::uint64_t h = splitmix64(seed_ ^ splitmix64(fnv1a(name)));
  for (auto c : coords) h = splitmix64(h ^ splitmix64(c + 0x632be59bd9b4e019ULL));
  return h;
}

std::mt19937_64 RngHandle::stream(std::string_view name, std::initializer_list<std::uint64_t> coords) const {
  return std::mt19937_64(derive(name, coords));
}

at::Generator RngHandle::torch_generator(std::string_view name, std::initializer_list<std::uint64_t> coords) const {
  return at::detail::createCPUGenerator(derive(name, coords));
}

RngHandle seed_all(std::uint64_t seed) {
  at::set_num_threads(1);
  RngHandle rng(seed);
  torch::manual_seed(rng.derive("init"));
  return rng;
}

}  // namespace rdr
