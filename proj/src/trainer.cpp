#include "rdr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "rdr/pma.hpp"

namespace rdr {

namespace {

std::vector<size_t> permutation(size_t n, std::mt19937_64 gen) {
  std::vector<size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  // Fisher-Yates with an explicit draw so the order does not depend on the
  // standard library's shuffle implementation.
  for (size_t i = n; i > 1; --i) {
    const size_t j = static_cast<size_t>(gen() % i);
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

std::string serialize_module(const torch::nn::Module& m) {
  torch::serialize::OutputArchive a;
  m.save(a);
  std::ostringstream os;
  a.save_to(os);
  return os.str();
}

void deserialize_module(torch::nn::Module& m, const std::string& bytes) {
  torch::serialize::InputArchive a;
  a.load_from(bytes.data(), bytes.size());
  m.load(a);
}

torch::Tensor bytes_tensor(const std::string& s) {
  auto t = torch::empty({static_cast<int64_t>(s.size())}, torch::kUInt8);
  if (!s.empty()) std::memcpy(t.data_ptr(), s.data(), s.size());
  return t;
}

std::string tensor_bytes(const torch::Tensor& t) {
  auto c = t.contiguous();
  return std::string(static_cast<const char*>(c.data_ptr()), static_cast<size_t>(c.numel()));
}

void write_header(torch::serialize::OutputArchive& a, const ExperimentConfig& config) {
  a.write("format_version", torch::tensor(static_cast<int64_t>(kCheckpointVersion)));
  a.write("config_json", bytes_tensor(config_to_json(config).dump()));
  a.write("dynamic_params_layout", bytes_tensor(DynamicParams::layout()));
}

ExperimentConfig read_header(torch::serialize::InputArchive& a, const std::filesystem::path& path) {
  torch::Tensor version;
  if (!a.try_read("format_version", version)) throw TrainingError("not a checkpoint: " + path.string());
  if (version.item<int64_t>() != kCheckpointVersion) {
    throw TrainingError("unsupported checkpoint version " + std::to_string(version.item<int64_t>()) + " in " +
                        path.string());
  }
  torch::Tensor cfg_bytes;
  a.read("config_json", cfg_bytes);
  torch::Tensor layout;
  a.read("dynamic_params_layout", layout);
  if (tensor_bytes(layout) != DynamicParams::layout()) {
    throw TrainingError("checkpoint uses a different dynamic-parameter layout: " + path.string());
  }
  auto config = config_from_json(nlohmann::json::parse(tensor_bytes(cfg_bytes)));
  normalize(config);
  return config;
}

void set_lr(torch::optim::Optimizer& opt, double lr) {
  for (auto& group : opt.param_groups()) group.options().set_lr(lr);
}

}  // namespace

std::pair<double, double> lr_schedule(const ExperimentConfig& config, int epoch) {
  const int decays = config.lr_decay_every > 0 ? epoch / config.lr_decay_every : 0;
  return {config.lr_network * std::pow(config.lr_network_decay, decays), config.lr_discriminator};
}

MetricsReport evaluate_with(const RegionPredictor& predict, const std::vector<ImageSample>& data, double threshold,
                            int batch_size) {
  std::vector<ImageRecord> records;
  records.reserve(data.size());
  for (size_t begin = 0; begin < data.size(); begin += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(data.size(), begin + static_cast<size_t>(batch_size));
    std::vector<ImageSample> chunk(data.begin() + static_cast<std::ptrdiff_t>(begin),
                                   data.begin() + static_cast<std::ptrdiff_t>(end));
    auto probs = predict(chunk);
    auto masks = binarize(probs, threshold);
    for (size_t i = 0; i < chunk.size(); ++i) {
      if (!chunk[i].label) throw TrainingError("evaluation sample " + chunk[i].id + " has no label");
      records.push_back(evaluate_image(chunk[i].id, masks[static_cast<int64_t>(i)], *chunk[i].label));
    }
  }
  return aggregate(std::move(records));
}

MetricsReport evaluate(RdrNet& net, const std::vector<ImageSample>& data, double threshold, int batch_size) {
  const bool was_training = net->is_training();
  net->eval();
  torch::NoGradGuard guard;
  auto report = evaluate_with(
      [&](const std::vector<ImageSample>& chunk) {
        return net->forward(stack_batch(chunk).images).pred.region;
      },
      data, threshold, batch_size);
  net->train(was_training);
  return report;
}

Trainer::Trainer(ExperimentConfig config, Datasets data)
    : config_(std::move(config)), data_(std::move(data)), rng_(config_.seed) {
  at::set_num_threads(1);
  const auto& sup = supervised_set();
  if (config_.mode == Mode::kUpperBound) {
    if (data_.target_train.empty() || !std::all_of(sup.begin(), sup.end(), [](const auto& s) { return s.labeled(); })) {
      throw TrainingError("mode upper_bound requires a labeled target training set");
    }
  } else if (sup.empty()) {
    throw TrainingError("mode " + to_string(config_.mode) + " requires a non-empty labeled source set");
  } else if (!std::all_of(sup.begin(), sup.end(), [](const auto& s) { return s.labeled(); })) {
    throw TrainingError("source training set must be labeled");
  }
  if (config_.mode == Mode::kUda && data_.target_train.empty()) {
    throw TrainingError("mode uda requires a non-empty target training set");
  }

  net_ = RdrNet(config_);
  torch::manual_seed(rng_.derive("init", {3}));
  disc_ = DiscriminatorPair();
  const auto [lr_net, lr_disc] = lr_schedule(config_, 0);
  opt_net_ = std::make_unique<torch::optim::Adam>(
      net_->trainable_parameters(),
      torch::optim::AdamOptions(lr_net).betas({config_.adam_beta1, config_.adam_beta2}));
  opt_disc_ = std::make_unique<torch::optim::SGD>(disc_->parameters(),
                                                  torch::optim::SGDOptions(lr_disc).momentum(config_.sgd_momentum));
  net_->train();
  disc_->train();
}

const std::vector<ImageSample>& Trainer::supervised_set() const {
  return config_.mode == Mode::kUpperBound ? data_.target_train : data_.source;
}

bool Trainer::uses_target() const { return config_.mode == Mode::kUda; }

bool Trainer::discriminators_active() const { return uses_target() && config_.modules.pma; }

int Trainer::steps_per_epoch() const {
  size_t n = supervised_set().size();
  if (uses_target()) n = std::max(n, data_.target_train.size());
  return std::max(1, static_cast<int>(n / static_cast<size_t>(config_.batch_size)));
}

std::pair<Batch, Batch> Trainer::make_batches(int epoch, int step) const {
  const auto e = static_cast<std::uint64_t>(epoch);
  AugmentParams aug;
  aug.config = config_.augment;
  auto draw = [&](const std::vector<ImageSample>& set, std::uint64_t stream, bool keep_labels) {
    const auto perm = permutation(set.size(), rng_.stream("shuffle", {e, stream}));
    std::vector<ImageSample> chosen;
    chosen.reserve(static_cast<size_t>(config_.batch_size));
    for (int i = 0; i < config_.batch_size; ++i) {
      const auto pos = static_cast<size_t>(step) * static_cast<size_t>(config_.batch_size) + static_cast<size_t>(i);
      const auto& src = set[perm[pos % set.size()]];
      ImageSample s = keep_labels ? src : src.unlabeled_view();
      if (config_.augment.enabled) {
        auto gen = rng_.stream("augment", {e, stream, static_cast<std::uint64_t>(pos)});
        s = augment(s, gen, aug);
      }
      chosen.push_back(std::move(s));
    }
    return stack_batch(chosen);
  };
  Batch s = draw(supervised_set(), 0, true);
  Batch t;
  if (uses_target()) t = draw(data_.target_train, 1, false);
  return {std::move(s), std::move(t)};
}

LossReport Trainer::network_step(const Batch& s, const Batch& t, int epoch, int step, StepCache* cache) {
  net_->train();
  const auto e = static_cast<std::uint64_t>(epoch);
  const auto k = static_cast<std::uint64_t>(step);
  const bool ra = net_->has_vae();
  const bool pma = discriminators_active();

  LossParts parts;
  auto gen_s = rng_.torch_generator("epsilon", {e, k, 0});
  auto out_s = net_->forward(s.images, &gen_s, ra);
  parts.region = region_loss(out_s.pred.region, s.labels, config_.seg_loss);
  parts.edge = edge_loss(out_s.pred.edge, s.edges);
  if (ra) parts.recon_s = recon_loss(out_s.recon, s.images, *out_s.code);

  ModelOutputs out_t;
  if (uses_target()) {
    auto gen_t = rng_.torch_generator("epsilon", {e, k, 1});
    // Without a target loss the target pass only refreshes normalisation statistics.
    std::optional<torch::NoGradGuard> no_grad;
    if (!ra && !pma) no_grad.emplace();
    out_t = net_->forward(t.images, &gen_t, ra);
    if (ra) {
      parts.recon_t = recon_loss(out_t.recon, t.images, *out_t.code);
      const auto n = out_s.recon.size(0);
      auto feats = net_->style_features(torch::cat({out_s.recon, out_t.recon}));
      parts.style = batch_style_loss(feats.slice(0, 0, n), feats.slice(0, n));
    }
    if (pma) {
      parts.adv_region = adversarial_loss_region(disc_->region, out_t.pred.region);
      parts.adv_edge = adversarial_loss_edge(disc_->edge, out_t.pred.edge);
    }
  }

  auto total = total_objective(parts, config_.loss_weights);
  LossReport report = make_report(parts, total);
  if (!report.finite()) {
    throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(step) + ": " +
                              report.to_json().dump(),
                          report);
  }
  opt_net_->zero_grad();
  total.backward();
  opt_net_->step();

  if (cache) {
    cache->region_s = out_s.pred.region.detach();
    cache->edge_s = out_s.pred.edge.detach();
    if (out_t.pred.region.defined()) {
      cache->region_t = out_t.pred.region.detach();
      cache->edge_t = out_t.pred.edge.detach();
    }
  }
  return report;
}

void Trainer::discriminator_step(const StepCache& cache, LossReport& report) {
  if (!discriminators_active()) return;
  disc_->train();
  auto l_dr = discriminator_loss_region(disc_->region, cache.region_s, cache.region_t);
  auto l_de = discriminator_loss_edge(disc_->edge, cache.edge_s, cache.edge_t);
  report.l_d_r = l_dr.item<double>();
  report.l_d_e = l_de.item<double>();
  if (!report.finite()) {
    throw DivergenceError("non-finite discriminator loss: " + report.to_json().dump(), report);
  }
  opt_disc_->zero_grad();
  (l_dr + l_de).backward();
  opt_disc_->step();
}

LossReport Trainer::train_step(const Batch& s, const Batch& t, int epoch, int step) {
  StepCache cache;
  auto report = network_step(s, t, epoch, step, &cache);
  discriminator_step(cache, report);
  return report;
}

void Trainer::apply_lr(int epoch) {
  const auto [lr_net, lr_disc] = lr_schedule(config_, epoch);
  set_lr(*opt_net_, lr_net);
  set_lr(*opt_disc_, lr_disc);
}

void Trainer::log_record(const nlohmann::json& record) {
  if (log_) {
    *log_ << record.dump() << '\n';
    log_->flush();
  }
}

FitResult Trainer::fit(std::optional<int64_t> max_steps) {
  FitResult result;
  int64_t taken = 0;
  const int spe = steps_per_epoch();
  while (state_.epoch < config_.epochs) {
    apply_lr(state_.epoch);
    while (state_.step < spe) {
      if (max_steps && taken >= *max_steps) {
        result.stopped_early = true;
        result.best = best_report_;
        result.best_epoch = state_.best_epoch;
        return result;
      }
      auto [s, t] = make_batches(state_.epoch, state_.step);
      const auto report = train_step(s, t, state_.epoch, state_.step);
      const auto [lr_net, lr_disc] = lr_schedule(config_, state_.epoch);
      nlohmann::json rec = {{"type", "step"},          {"epoch", state_.epoch}, {"step", state_.step},
                            {"global_step", state_.global_step}, {"lr_network", lr_net},
                            {"lr_discriminator", lr_disc}};
      rec.update(report.to_json());
      log_record(rec);
      ++state_.step;
      ++state_.global_step;
      ++taken;
    }

    const bool last_epoch = state_.epoch + 1 == config_.epochs;
    const bool eval_now = !data_.target_eval.empty() &&
                          ((config_.eval_every > 0 && (state_.epoch + 1) % config_.eval_every == 0) || last_epoch);
    if (eval_now) {
      auto m = evaluate(net_, data_.target_eval, config_.eval_threshold);
      nlohmann::json rec = {{"type", "eval"}, {"epoch", state_.epoch}, {"global_step", state_.global_step}};
      rec.update(m.to_json(false));
      log_record(rec);
      if (m.mean_dice() > state_.best_dice) {
        state_.best_dice = m.mean_dice();
        state_.best_epoch = state_.epoch;
        best_weights_ = serialize_module(*net_);
        best_report_ = m;
        if (!out_dir_.empty()) save_network(net_, out_dir_ / "best.pt");
      }
      result.last = std::move(m);
    }
    ++state_.epoch;
    state_.step = 0;
    if (!out_dir_.empty()) save_checkpoint(out_dir_ / "last.pt");
  }
  result.best = best_report_;
  result.best_epoch = state_.best_epoch;
  return result;
}

void Trainer::restore_best() {
  if (!best_weights_.empty()) deserialize_module(*net_, best_weights_);
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  torch::serialize::OutputArchive a;
  write_header(a, config_);
  a.write("state", torch::tensor({static_cast<int64_t>(state_.epoch), static_cast<int64_t>(state_.step),
                                  state_.global_step, static_cast<int64_t>(state_.best_epoch)}));
  a.write("best_dice", torch::tensor(state_.best_dice, torch::kFloat64));
  a.write("best_report", bytes_tensor(best_report_.to_json().dump()));
  a.write("best_network", bytes_tensor(best_weights_));
  torch::serialize::OutputArchive net_a, disc_a, opt_net_a, opt_disc_a;
  net_->save(net_a);
  disc_->save(disc_a);
  opt_net_->save(opt_net_a);
  opt_disc_->save(opt_disc_a);
  a.write("network", net_a);
  a.write("discriminators", disc_a);
  a.write("optimizer_network", opt_net_a);
  a.write("optimizer_discriminators", opt_disc_a);
  const auto tmp = path.string() + ".tmp";
  a.save_to(tmp);
  std::filesystem::rename(tmp, path);
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw TrainingError("checkpoint not found: " + path.string());
  torch::serialize::InputArchive a;
  a.load_from(path.string());
  const auto saved = read_header(a, path);
  if (!(saved == config_)) throw TrainingError("checkpoint config differs from the trainer config: " + path.string());
  torch::Tensor st, best, report, best_net;
  a.read("state", st);
  a.read("best_dice", best);
  a.read("best_report", report);
  a.read("best_network", best_net);
  state_.epoch = static_cast<int>(st[0].item<int64_t>());
  state_.step = static_cast<int>(st[1].item<int64_t>());
  state_.global_step = st[2].item<int64_t>();
  state_.best_epoch = static_cast<int>(st[3].item<int64_t>());
  state_.best_dice = best.item<double>();
  best_weights_ = tensor_bytes(best_net);
  const auto report_json = nlohmann::json::parse(tensor_bytes(report));
  best_report_ = report_json.contains("dice_od") ? MetricsReport::from_json(report_json) : MetricsReport{};
  torch::serialize::InputArchive net_a, disc_a, opt_net_a, opt_disc_a;
  a.read("network", net_a);
  a.read("discriminators", disc_a);
  a.read("optimizer_network", opt_net_a);
  a.read("optimizer_discriminators", opt_disc_a);
  net_->load(net_a);
  disc_->load(disc_a);
  opt_net_->load(opt_net_a);
  opt_disc_->load(opt_disc_a);
}

void save_network(const RdrNet& net, const std::filesystem::path& path) {
  torch::serialize::OutputArchive a;
  write_header(a, net->config());
  torch::serialize::OutputArchive net_a;
  net->save(net_a);
  a.write("network", net_a);
  const auto tmp = path.string() + ".tmp";
  a.save_to(tmp);
  std::filesystem::rename(tmp, path);
}

RdrNet load_network(const std::filesystem::path& checkpoint, ExperimentConfig* config_out) {
  if (!std::filesystem::exists(checkpoint)) throw TrainingError("checkpoint not found: " + checkpoint.string());
  torch::serialize::InputArchive a;
  a.load_from(checkpoint.string());
  auto config = read_header(a, checkpoint);
  // The saved weights replace the initialisation; skip the pretrained-file lookups.
  config.pretrained_encoder.clear();
  RdrNet net(config);
  torch::serialize::InputArchive net_a;
  a.read("network", net_a);
  net->load(net_a);
  net->eval();
  if (config_out) *config_out = config;
  return net;
}

}  // namespace rdr
