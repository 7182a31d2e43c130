#include "rdr/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "rdr/config.hpp"
#include "rdr/data.hpp"
#include "rdr/embedding.hpp"
#include "rdr/metrics.hpp"
#include "rdr/model.hpp"
#include "rdr/plot.hpp"
#include "rdr/trainer.hpp"

namespace rdr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Any failure the user can fix by changing inputs; maps to exit code 1.
class UserError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Config flags are parsed into a scratch config and copied onto the file
/// config only when given, so a flag always wins over the file.
struct ConfigFlags {
  ExperimentConfig parsed;
  std::string config_path;
  std::vector<std::function<void(ExperimentConfig&)>> appliers;

  template <typename Get>
  void bind(CLI::App* app, const std::string& flag, Get get, const std::string& help) {
    auto* opt = app->add_option(flag, get(parsed), help)->capture_default_str();
    appliers.push_back([this, opt, get](ExperimentConfig& to) {
      if (opt->count() > 0) get(to) = get(parsed);
    });
  }

  template <typename T, typename Get>
  void bind_enum(CLI::App* app, const std::string& flag, Get get, const std::map<std::string, T>& names,
                 const std::string& help) {
    auto* opt = app->add_option(flag, get(parsed), help)
                    ->transform(CLI::CheckedTransformer(names, CLI::ignore_case))
                    ->default_str(std::find_if(names.begin(), names.end(), [&](const auto& kv) {
                                    return kv.second == get(parsed);
                                  })->first);
    appliers.push_back([this, opt, get](ExperimentConfig& to) {
      if (opt->count() > 0) get(to) = get(parsed);
    });
  }

  void add_to(CLI::App* app) {
    app->add_option("--config", config_path, "Experiment config file (JSON); flags override its values");
    bind(app, "--image-size", [](ExperimentConfig& x) -> int& { return x.image_size; }, "image_size: network input size (multiple of 16)");
    bind(app, "--roi-size", [](ExperimentConfig& x) -> int& { return x.roi_size; }, "roi_size: ROI crop before resizing real images");
    bind(app, "--latent-dim", [](ExperimentConfig& x) -> int& { return x.latent_dim; }, "latent_dim: VAE code length D");
    bind(app, "--lambda1", [](ExperimentConfig& x) -> double& { return x.loss_weights.lambda1; }, "loss_weights.lambda1: reconstruction weight");
    bind(app, "--lambda2", [](ExperimentConfig& x) -> double& { return x.loss_weights.lambda2; }, "loss_weights.lambda2: style weight");
    bind(app, "--lambda3", [](ExperimentConfig& x) -> double& { return x.loss_weights.lambda3; }, "loss_weights.lambda3: adversarial weight");
    bind(app, "--batch-size", [](ExperimentConfig& x) -> int& { return x.batch_size; }, "batch_size");
    bind(app, "--epochs", [](ExperimentConfig& x) -> int& { return x.epochs; }, "epochs");
    bind(app, "--lr-network", [](ExperimentConfig& x) -> double& { return x.lr_network; }, "lr_network: Adam learning rate");
    bind(app, "--lr-network-decay", [](ExperimentConfig& x) -> double& { return x.lr_network_decay; }, "lr_network_decay: factor per decay period");
    bind(app, "--lr-decay-every", [](ExperimentConfig& x) -> int& { return x.lr_decay_every; }, "lr_decay_every: epochs per decay period");
    bind(app, "--lr-discriminator", [](ExperimentConfig& x) -> double& { return x.lr_discriminator; }, "lr_discriminator: SGD learning rate (constant)");
    bind(app, "--adam-beta1", [](ExperimentConfig& x) -> double& { return x.adam_beta1; }, "adam_beta1");
    bind(app, "--adam-beta2", [](ExperimentConfig& x) -> double& { return x.adam_beta2; }, "adam_beta2");
    bind(app, "--sgd-momentum", [](ExperimentConfig& x) -> double& { return x.sgd_momentum; }, "sgd_momentum");
    bind(app, "--ra", [](ExperimentConfig& x) -> bool& { return x.modules.ra; }, "modules.ra: reconstruction alignment (true/false)");
    bind(app, "--lfr", [](ExperimentConfig& x) -> bool& { return x.modules.lfr; }, "modules.lfr: low-level feature refinement (true/false)");
    bind(app, "--pma", [](ExperimentConfig& x) -> bool& { return x.modules.pma; }, "modules.pma: prediction-map alignment (true/false)");
    bind_enum(app, "--mode", [](ExperimentConfig& x) -> Mode& { return x.mode; },
              std::map<std::string, Mode>{{"uda", Mode::kUda}, {"no_adapt", Mode::kNoAdapt}, {"upper_bound", Mode::kUpperBound}},
              "mode: uda | no_adapt | upper_bound");
    bind(app, "--seed", [](ExperimentConfig& x) -> std::uint64_t& { return x.seed; }, "seed (RDR_SEED overrides the file value)");
    bind_enum(app, "--encoder", [](ExperimentConfig& x) -> EncoderVariant& { return x.encoder_variant; },
              std::map<std::string, EncoderVariant>{{"faithful", EncoderVariant::kFaithful}, {"toy", EncoderVariant::kToy}},
              "encoder_variant: faithful | toy");
    bind(app, "--eval-threshold", [](ExperimentConfig& x) -> double& { return x.eval_threshold; }, "eval_threshold in (0,1)");
    bind(app, "--decoder-channels", [](ExperimentConfig& x) -> int& { return x.decoder_channels; }, "decoder_channels: edge decoder width, 0 = 256 faithful / 64 toy");
    bind_enum(app, "--seg-loss", [](ExperimentConfig& x) -> SegLossKind& { return x.seg_loss; },
              std::map<std::string, SegLossKind>{{"generalized_dice", SegLossKind::kGeneralizedDice}, {"dice", SegLossKind::kDice}},
              "seg_loss: generalized_dice | dice");
    bind(app, "--edge-kernel", [](ExperimentConfig& x) -> int& { return x.edge_kernel; }, "edge_kernel: Gaussian kernel size of the edge map");
    bind(app, "--edge-sigma", [](ExperimentConfig& x) -> double& { return x.edge_sigma; }, "edge_sigma: Gaussian sigma of the edge map");
    bind(app, "--augment", [](ExperimentConfig& x) -> bool& { return x.augment.enabled; }, "augment.enabled (true/false)");
    bind(app, "--augment-probability", [](ExperimentConfig& x) -> double& { return x.augment.probability; }, "augment.probability per transform");
    bind(app, "--augment-scale-min", [](ExperimentConfig& x) -> double& { return x.augment.scale_min; }, "augment.scale_min");
    bind(app, "--augment-scale-max", [](ExperimentConfig& x) -> double& { return x.augment.scale_max; }, "augment.scale_max");
    bind(app, "--augment-max-rotation-deg", [](ExperimentConfig& x) -> double& { return x.augment.max_rotation_deg; }, "augment.max_rotation_deg");
    bind(app, "--augment-elastic-alpha", [](ExperimentConfig& x) -> double& { return x.augment.elastic_alpha; }, "augment.elastic_alpha (at 256 px)");
    bind(app, "--augment-elastic-sigma", [](ExperimentConfig& x) -> double& { return x.augment.elastic_sigma; }, "augment.elastic_sigma (at 256 px)");
    bind(app, "--augment-salt-pepper-fraction", [](ExperimentConfig& x) -> double& { return x.augment.salt_pepper_fraction; }, "augment.salt_pepper_fraction");
    bind(app, "--augment-erase-max-fraction", [](ExperimentConfig& x) -> double& { return x.augment.erase_max_fraction; }, "augment.erase_max_fraction");
    bind(app, "--augment-brightness-delta", [](ExperimentConfig& x) -> double& { return x.augment.brightness_delta; }, "augment.brightness_delta");
    bind(app, "--eval-every", [](ExperimentConfig& x) -> int& { return x.eval_every; }, "eval_every: epochs between target evaluations");
    bind(app, "--pretrained-encoder", [](ExperimentConfig& x) -> std::string& { return x.pretrained_encoder; }, "pretrained_encoder: weight archive for the encoder");
    bind(app, "--pretrained-style", [](ExperimentConfig& x) -> std::string& { return x.pretrained_style; }, "pretrained_style: weight archive for the VGG prefix");
  }

  ExperimentConfig resolve(std::vector<std::string>& warnings) const {
    ExperimentConfig c = config_path.empty() ? ExperimentConfig{} : load_config(config_path, &warnings);
    apply_env_overrides(c);
    for (const auto& apply : appliers) apply(c);
    for (auto& w : normalize(c)) warnings.push_back(std::move(w));
    return c;
  }
};

struct SyntheticFlags {
  bool enabled = false;
  int n = 200;
  int eval_n = 100;
  std::uint64_t data_seed = 0;

  void add_to(CLI::App* app, bool with_switch = true) {
    if (with_switch) app->add_flag("--synthetic", enabled, "Use the built-in synthetic two-domain benchmark");
    app->add_option("--synthetic-n", n, "Synthetic images per training domain")->capture_default_str();
    app->add_option("--synthetic-eval-n", eval_n, "Synthetic held-out target images")->capture_default_str();
    app->add_option("--data-seed", data_seed, "Seed of the synthetic data (independent of the training seed)")
        ->capture_default_str();
  }
};

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UserError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UserError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

/// Brings real images to the network size: OD-centred ROI crop (image centre when unlabeled), then resize.
std::vector<ImageSample> prepare(std::vector<ImageSample> samples, const ExperimentConfig& c) {
  for (auto& s : samples) {
    if (s.height() == c.image_size && s.width() == c.image_size) continue;
    const int roi = static_cast<int>(std::min<int64_t>(c.roi_size, std::min(s.height(), s.width())));
    s = crop_roi(s, roi_center(s), roi, c.image_size);
  }
  return samples;
}

std::vector<ImageSample> load_dir(const std::string& dir, Domain d, const ExperimentConfig& c) {
  if (dir.empty()) return {};
  if (!fs::is_directory(dir)) throw UserError("dataset directory not found: " + dir);
  return prepare(load_dataset(dir, d, {c.edge_kernel, c.edge_sigma}), c);
}

std::string summary_line(const MetricsReport& m) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "n=%d dice_od=%.4f dice_oc=%.4f miou_od=%.4f miou_oc=%.4f acc_od=%.4f acc_oc=%.4f delta=%.4f", m.n_images,
                m.dice[0], m.dice[1], m.miou[0], m.miou[1], m.acc[0], m.acc[1], m.delta);
  return buf;
}

void write_per_image_csv(const fs::path& path, const MetricsReport& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UserError("cannot write " + path.string());
  out << "id,dice_od,dice_oc,miou_od,miou_oc,miou_fgbg_od,miou_fgbg_oc,acc_od,acc_oc,delta\n";
  char buf[512];
  for (const auto& r : m.per_image) {
    std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.id.c_str(),
                  r.scores[0].dice, r.scores[1].dice, r.scores[0].iou, r.scores[1].iou, r.scores[0].iou_fgbg,
                  r.scores[1].iou_fgbg, r.scores[0].acc, r.scores[1].acc, r.delta);
    out << buf;
  }
}

json run_metadata(const ExperimentConfig& c) {
  return {{"created", timestamp()},
          {"torch_version", TORCH_VERSION},
          {"threads", 1},
          {"initialisation",
           "framework defaults (Kaiming-uniform fan-in) per component stream; LFR generator U(+-1/sqrt(384)), bias 0"},
          {"optimizers",
           {{"network", {{"type", "adam"}, {"betas", {c.adam_beta1, c.adam_beta2}}}},
            {"discriminators", {{"type", "sgd"}, {"momentum", c.sgd_momentum}}}}},
          {"augment", {{"elastic_alpha_at_256", c.augment.elastic_alpha}, {"elastic_sigma_at_256", c.augment.elastic_sigma}}},
          {"edge_map", {{"kernel", c.edge_kernel}, {"sigma", c.edge_sigma}}},
          {"style_encoder", c.pretrained_style.empty() ? "frozen random VGG prefix (seed 0x5747e1)" : c.pretrained_style}};
}

// ---------------------------------------------------------------- commands

struct TrainArgs {
  ConfigFlags cfg;
  SyntheticFlags synth;
  std::string source, target, target_eval, out, resume;
  int64_t max_steps = -1;
};

int cmd_train(TrainArgs& a, std::ostream& out, std::ostream& err) {
  std::vector<std::string> warnings;
  auto config = a.cfg.resolve(warnings);
  for (const auto& w : warnings) err << "warning: " << w << "\n";
  Datasets data;
  if (a.synth.enabled) {
    auto s = synthetic_splits(config.image_size, a.synth.n, a.synth.eval_n, a.synth.data_seed,
                              {config.edge_kernel, config.edge_sigma});
    data.source = std::move(s.source);
    data.target_train = std::move(s.target_train);
    data.target_eval = std::move(s.target_eval);
  } else {
    data.source = load_dir(a.source, Domain::kSource, config);
    data.target_train = load_dir(a.target, Domain::kTarget, config);
    data.target_eval = load_dir(a.target_eval, Domain::kTarget, config);
    const bool target_labeled = !data.target_train.empty() &&
                                std::all_of(data.target_train.begin(), data.target_train.end(),
                                            [](const ImageSample& s) { return s.labeled(); });
    if (data.target_eval.empty() && target_labeled) data.target_eval = data.target_train;
  }
  if (config.mode == Mode::kUpperBound &&
      (data.target_train.empty() || !std::all_of(data.target_train.begin(), data.target_train.end(),
                                                 [](const ImageSample& s) { return s.labeled(); }))) {
    throw UserError("mode upper_bound requires a labeled target training set (--target with masks/ or --synthetic)");
  }

  const fs::path dir(a.out);
  fs::create_directories(dir);
  save_config(config, dir / "config.json");
  Trainer trainer(config, std::move(data));
  if (!a.resume.empty()) trainer.load_checkpoint(a.resume);
  // Resuming appends to the existing log so the trace stays continuous.
  std::ofstream log(dir / "train_log.jsonl", a.resume.empty() ? std::ios::binary : std::ios::binary | std::ios::app);
  if (!log) throw UserError("cannot write " + (dir / "train_log.jsonl").string());
  trainer.set_log(&log);
  trainer.set_output_dir(dir);

  json meta = run_metadata(config);
  meta["started"] = timestamp();
  auto result = trainer.fit(a.max_steps >= 0 ? std::optional<int64_t>(a.max_steps) : std::nullopt);
  if (result.stopped_early) trainer.save_checkpoint(dir / "last.pt");
  if (!fs::exists(dir / "best.pt")) save_network(trainer.net(), dir / "best.pt");
  meta["finished"] = timestamp();
  meta["best_epoch"] = result.best_epoch;
  meta["stopped_early"] = result.stopped_early;
  write_json(dir / "metadata.json", meta);
  if (result.best.n_images > 0) {
    write_json(dir / "metrics.json", result.best.to_json());
    write_per_image_csv(dir / "per_image.csv", result.best);
    write_json(dir / "metrics_last.json", result.last.to_json());
    out << "train: best epoch " << result.best_epoch << " " << summary_line(result.best) << "\n";
    out << "train: last epoch " << summary_line(result.last) << "\n";
  } else {
    out << "train: finished without a labeled target evaluation set\n";
  }
  out << "train: wrote " << (dir / "best.pt").string() << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint, data, out;
  SyntheticFlags synth;
  double threshold = -1.0;  // negative: use the checkpoint's value
};

int cmd_eval(EvalArgs& a, std::ostream& out) {
  if (!fs::exists(a.checkpoint)) throw UserError("checkpoint not found: " + a.checkpoint);
  ExperimentConfig config;
  auto net = load_network(a.checkpoint, &config);
  std::vector<ImageSample> data;
  if (a.synth.enabled) {
    data = synthetic_splits(config.image_size, 1, a.synth.eval_n, a.synth.data_seed, {config.edge_kernel, config.edge_sigma})
               .target_eval;
  } else {
    if (a.data.empty()) throw UserError("eval needs --data DIR or --synthetic");
    data = load_dir(a.data, Domain::kTarget, config);
  }
  if (data.empty()) throw UserError("evaluation set is empty");
  for (const auto& s : data) {
    if (!s.labeled()) throw UserError("evaluation set must be labeled; " + s.id + " has no mask");
  }
  const double t = a.threshold < 0 ? config.eval_threshold : a.threshold;
  if (!(t > 0.0 && t < 1.0)) throw UserError("eval threshold must lie in (0,1)");
  auto report = evaluate(net, data, t);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  write_json(dir / "metrics.json", report.to_json());
  write_per_image_csv(dir / "per_image.csv", report);
  out << "eval: " << summary_line(report) << "\n";
  return kExitOk;
}

struct PredictArgs {
  std::string checkpoint, input, out;
};

int cmd_predict(PredictArgs& a, std::ostream& out) {
  if (!fs::exists(a.checkpoint)) throw UserError("checkpoint not found: " + a.checkpoint);
  ExperimentConfig config;
  auto net = load_network(a.checkpoint, &config);
  std::vector<fs::path> files;
  if (fs::is_directory(a.input)) {
    for (const auto& e : fs::directory_iterator(a.input)) {
      const auto ext = e.path().extension().string();
      if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else if (fs::exists(a.input)) {
    files.push_back(a.input);
  } else {
    throw UserError("input not found: " + a.input);
  }
  if (files.empty()) throw UserError("no images under " + a.input);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  net->eval();
  torch::NoGradGuard guard;
  for (const auto& f : files) {
    ImageSample s;
    s.image = read_image(f);
    s.id = f.stem().string();
    s = prepare({s}, config).front();
    auto pred = net->forward(s.image.unsqueeze(0)).pred;
    auto probs = pred.region[0];
    auto masks = binarize(probs, config.eval_threshold).to(torch::kFloat32);
    write_gray(dir / (s.id + "_mask.png"), encode_mask(masks));
    auto to_u8 = [](const torch::Tensor& p) { return (p * 255.0).round().clamp(0, 255).to(torch::kUInt8); };
    write_gray(dir / (s.id + "_od_prob.png"), to_u8(probs[0]));
    write_gray(dir / (s.id + "_oc_prob.png"), to_u8(probs[1]));
    write_gray(dir / (s.id + "_edge_prob.png"), to_u8(pred.edge[0][0]));
  }
  out << "predict: wrote masks for " << files.size() << " image(s) to " << dir.string() << "\n";
  return kExitOk;
}

struct SynthArgs {
  std::string out;
  SyntheticFlags synth;
  int image_size = 64;
};

int cmd_synth(SynthArgs& a, std::ostream& out) {
  if (a.image_size <= 0 || a.image_size % 16 != 0) throw UserError("image-size must be a positive multiple of 16");
  auto s = synthetic_splits(a.image_size, a.synth.n, a.synth.eval_n, a.synth.data_seed);
  const fs::path dir(a.out);
  write_dataset(dir / "source", s.source);
  write_dataset(dir / "target", s.target_train);
  if (!s.target_eval.empty()) write_dataset(dir / "target_eval", s.target_eval);
  out << "synth: wrote " << s.source.size() << " source, " << s.target_train.size() << " target and "
      << s.target_eval.size() << " held-out target images to " << dir.string() << "\n";
  return kExitOk;
}

struct InfoArgs {
  ConfigFlags cfg;
  std::string checkpoint;
  bool as_json = false;
};

int cmd_info(InfoArgs& a, std::ostream& out, std::ostream& err) {
  ExperimentConfig config;
  RdrNet net{nullptr};
  if (!a.checkpoint.empty()) {
    net = load_network(a.checkpoint, &config);
  } else {
    std::vector<std::string> warnings;
    config = a.cfg.resolve(warnings);
    for (const auto& w : warnings) err << "warning: " << w << "\n";
    net = RdrNet(config);
  }
  std::optional<DiscriminatorPair> disc;
  if (config.mode == Mode::kUda && config.modules.pma) disc = DiscriminatorPair();
  const auto r = parameter_report(net, disc ? &*disc : nullptr);
  if (a.as_json) {
    auto j = r.to_json();
    j["encoder_variant"] = to_string(config.encoder_variant);
    out << j.dump(2) << "\n";
    return kExitOk;
  }
  char buf[128];
  out << "parameters (" << to_string(config.encoder_variant) << " encoder, mode " << to_string(config.mode) << ")\n";
  for (const auto& [name, n] : r.modules) {
    std::snprintf(buf, sizeof(buf), "  %-24s %12lld\n", name.c_str(), static_cast<long long>(n));
    out << buf;
  }
  auto line = [&](const char* name, int64_t n) {
    std::snprintf(buf, sizeof(buf), "%-26s %12lld  (%.3fM)\n", name, static_cast<long long>(n), n / 1e6);
    out << buf;
  };
  line("total", r.total);
  line("training (trainable)", r.training);
  line("inference", r.inference);
  if (r.discriminators > 0) line("discriminators", r.discriminators);
  return kExitOk;
}

struct BoxplotArgs {
  std::vector<std::string> runs;
  std::vector<std::string> labels;
  std::string out;
};

int cmd_boxplot(BoxplotArgs& a, std::ostream& out) {
  if (a.runs.empty()) throw UserError("boxplot needs at least one --runs entry");
  if (!a.labels.empty() && a.labels.size() != a.runs.size()) throw UserError("--labels must match --runs in number");
  BoxGroup od{"OD", {}}, oc{"OC", {}};
  for (size_t i = 0; i < a.runs.size(); ++i) {
    fs::path p(a.runs[i]);
    if (fs::is_directory(p)) p /= "metrics.json";
    if (!fs::exists(p)) throw UserError("metrics not found: " + p.string());
    const auto m = MetricsReport::from_json(read_json(p));
    if (m.per_image.empty()) throw UserError("no per-image records in " + p.string());
    const std::string label = a.labels.empty() ? fs::path(a.runs[i]).filename().string() : a.labels[i];
    BoxSeries s_od{label, {}}, s_oc{label, {}};
    for (const auto& r : m.per_image) {
      s_od.values.push_back(r.scores[0].dice);
      s_oc.values.push_back(r.scores[1].dice);
    }
    od.series.push_back(std::move(s_od));
    oc.series.push_back(std::move(s_oc));
  }
  const fs::path dir(a.out);
  fs::create_directories(dir);
  write_boxplot_svg(dir / "boxplot.svg", {od, oc});
  if (a.runs.size() == 2) {
    // Rank-sum comparison of per-image mean Dice between the two runs.
    std::vector<double> x, y;
    for (size_t i = 0; i < od.series[0].values.size(); ++i) x.push_back(0.5 * (od.series[0].values[i] + oc.series[0].values[i]));
    for (size_t i = 0; i < od.series[1].values.size(); ++i) y.push_back(0.5 * (od.series[1].values[i] + oc.series[1].values[i]));
    const double p = rank_sum_test(x, y);
    out << "boxplot: rank-sum p-value " << od.series[0].label << " vs " << od.series[1].label << " = " << p << "\n";
  }
  out << "boxplot: wrote " << (dir / "boxplot.svg").string() << "\n";
  return kExitOk;
}

struct EmbeddingArgs {
  std::string checkpoint, source, target, out;
  SyntheticFlags synth;
};

int cmd_embedding(EmbeddingArgs& a, std::ostream& out) {
  if (!fs::exists(a.checkpoint)) throw UserError("checkpoint not found: " + a.checkpoint);
  ExperimentConfig config;
  auto net = load_network(a.checkpoint, &config);
  std::vector<ImageSample> src, tgt;
  if (a.synth.enabled) {
    auto s = synthetic_splits(config.image_size, a.synth.n, 0, a.synth.data_seed);
    src = std::move(s.source);
    tgt = std::move(s.target_train);
  } else {
    src = load_dir(a.source, Domain::kSource, config);
    tgt = load_dir(a.target, Domain::kTarget, config);
  }
  if (src.empty() || tgt.empty()) throw UserError("embedding needs source and target images (--source/--target or --synthetic)");
  const auto e = embed_domains(net, src, tgt);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  write_embedding_svg(dir / "embedding.svg", e);
  json points = json::array();
  auto pre = e.pre.contiguous();
  auto post = e.post.contiguous();
  for (int64_t i = 0; i < pre.size(0); ++i) {
    points.push_back({{"domain", to_string(e.domains[static_cast<size_t>(i)])},
                      {"pre", {pre[i][0].item<double>(), pre[i][1].item<double>()}},
                      {"post", {post[i][0].item<double>(), post[i][1].item<double>()}}});
  }
  write_json(dir / "embedding.json", {{"projection", "pca on RMS-standardised pooled features"},
                                      {"distance_pre", e.distance_pre},
                                      {"distance_post", e.distance_post},
                                      {"points", points}});
  out << "embedding: centroid distance before " << e.distance_pre << ", after " << e.distance_post << "\n";
  out << "embedding: wrote " << (dir / "embedding.svg").string() << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Domain-adaptive optic disc / cup segmentation"};
  app.name("rdr");
  app.require_subcommand(1);

  auto train_args = std::make_unique<TrainArgs>();
  auto* train = app.add_subcommand("train", "Train a model (writes checkpoints, run log and metrics under --out)");
  train_args->cfg.add_to(train);
  train_args->synth.add_to(train);
  train->add_option("--source", train_args->source, "Labeled source dataset directory (images/, masks/)");
  train->add_option("--target", train_args->target, "Target training dataset directory (masks/ optional)");
  train->add_option("--target-eval", train_args->target_eval,
                    "Labeled target evaluation directory (defaults to --target when it is labeled)");
  train->add_option("--out", train_args->out, "Output directory")->required();
  train->add_option("--resume", train_args->resume, "Resume from a last.pt checkpoint");
  train->add_option("--max-steps", train_args->max_steps, "Stop after this many steps (checkpoint written)");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a labeled dataset");
  eval->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint (best.pt or last.pt)")->required();
  eval->add_option("--data", eval_args.data, "Labeled dataset directory");
  eval_args.synth.add_to(eval);
  eval->add_option("--eval-threshold", eval_args.threshold, "Override the checkpoint's eval_threshold");
  eval->add_option("--out", eval_args.out, "Output directory")->required();

  PredictArgs predict_args;
  auto* predict = app.add_subcommand("predict", "Write masks (0/128/255) and probability maps for images");
  predict->add_option("--checkpoint", predict_args.checkpoint, "Checkpoint")->required();
  predict->add_option("--input", predict_args.input, "Image file or directory")->required();
  predict->add_option("--out", predict_args.out, "Output directory")->required();

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "Write the synthetic benchmark in the dataset layout");
  synth->add_option("--out", synth_args.out, "Output directory")->required();
  synth->add_option("--image-size", synth_args.image_size, "Image size")->capture_default_str();
  synth_args.synth.add_to(synth, false);

  auto info_args = std::make_unique<InfoArgs>();
  auto* info = app.add_subcommand("info", "Print per-module and total parameter counts");
  info_args->cfg.add_to(info);
  info->add_option("--checkpoint", info_args->checkpoint, "Read the config from a checkpoint instead");
  info->add_flag("--json", info_args->as_json, "Print JSON");

  auto* plot = app.add_subcommand("plot", "Write static plots");
  plot->require_subcommand(1);
  BoxplotArgs box_args;
  auto* box = plot->add_subcommand("boxplot", "Boxplot of per-image Dice across runs, one panel per class");
  box->add_option("--runs", box_args.runs, "Run directories (or metrics.json files)")->required();
  box->add_option("--labels", box_args.labels, "Labels for the runs");
  box->add_option("--out", box_args.out, "Output directory")->required();
  EmbeddingArgs emb_args;
  auto* emb = plot->add_subcommand("embedding", "2-D projection of pooled F_l and F_r coloured by domain");
  emb->add_option("--checkpoint", emb_args.checkpoint, "Checkpoint")->required();
  emb->add_option("--source", emb_args.source, "Source images directory");
  emb->add_option("--target", emb_args.target, "Target images directory");
  emb_args.synth.n = 100;
  emb_args.synth.add_to(emb);
  emb->add_option("--out", emb_args.out, "Output directory")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUserError;
  }

  try {
    if (*train) return cmd_train(*train_args, out, err);
    if (*eval) return cmd_eval(eval_args, out);
    if (*predict) return cmd_predict(predict_args, out);
    if (*synth) return cmd_synth(synth_args, out);
    if (*info) return cmd_info(*info_args, out, err);
    if (*box) return cmd_boxplot(box_args, out);
    if (*emb) return cmd_embedding(emb_args, out);
  } catch (const UserError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUserError;
  } catch (const ConfigError& e) {
    err << "error: config: " << e.what() << "\n";
    return kExitUserError;
  } catch (const DataError& e) {
    err << "error: data: " << e.what() << "\n";
    return kExitUserError;
  } catch (const DivergenceError& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternalError;
  } catch (const TrainingError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUserError;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUserError;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternalError;
  }
  err << "error: no command\n";
  return kExitUserError;
}

}  // namespace rdr
