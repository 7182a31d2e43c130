#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"
#include "rdr/config.hpp"
#include "rdr/data.hpp"
#include "rdr/losses.hpp"
#include "rdr/metrics.hpp"
#include "rdr/model.hpp"

namespace rdr {

inline constexpr int kCheckpointVersion = 1;

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when any loss of a step is NaN or infinite; carries that step's report.
class DivergenceError : public TrainingError {
 public:
  DivergenceError(const std::string& what, LossReport report) : TrainingError(what), report_(std::move(report)) {}
  const LossReport& report() const { return report_; }

 private:
  LossReport report_;
};

/// (network lr, discriminator lr) for a zero-based epoch.
std::pair<double, double> lr_schedule(const ExperimentConfig& config, int epoch);

struct TrainState {
  int epoch = 0;          // epoch in progress
  int step = 0;           // next step within the epoch
  int64_t global_step = 0;
  double best_dice = -1.0;
  int best_epoch = -1;
};

/// Detached predictions of a network half-step, reused by the discriminator half-step.
struct StepCache {
  torch::Tensor region_s, edge_s, region_t, edge_t;
};

struct Datasets {
  std::vector<ImageSample> source;        // labeled source training set
  std::vector<ImageSample> target_train;  // target training set; labels only used by upper_bound
  std::vector<ImageSample> target_eval;   // labeled target evaluation set
};

/// Maps a chunk of samples to region probabilities [n,2,H,W].
using RegionPredictor = std::function<torch::Tensor(const std::vector<ImageSample>&)>;

MetricsReport evaluate_with(const RegionPredictor& predict, const std::vector<ImageSample>& data, double threshold,
                            int batch_size = 16);
/// Deterministic inference: eval mode, no autograd, z := mu.
MetricsReport evaluate(RdrNet& net, const std::vector<ImageSample>& data, double threshold, int batch_size = 16);

struct FitResult {
  MetricsReport best;
  MetricsReport last;
  int best_epoch = -1;
  bool stopped_early = false;  // max_steps reached before the last epoch finished
};

class Trainer {
 public:
  /// Takes a normalized config. Throws TrainingError when the datasets do not suit the mode.
  Trainer(ExperimentConfig config, Datasets data);

  const ExperimentConfig& config() const { return config_; }
  const TrainState& state() const { return state_; }
  int steps_per_epoch() const;

  bool uses_target() const;
  bool discriminators_active() const;

  /// Source (or upper_bound supervision) and target batches for (epoch, step).
  std::pair<Batch, Batch> make_batches(int epoch, int step) const;

  /// Step 1: updates the network on the weighted total objective; the discriminators are frozen.
  LossReport network_step(const Batch& s, const Batch& t, int epoch, int step, StepCache* cache = nullptr);
  /// Step 2: updates both discriminators on detached predictions; no-op when PMA is inactive.
  void discriminator_step(const StepCache& cache, LossReport& report);
  LossReport train_step(const Batch& s, const Batch& t, int epoch, int step);

  /// Runs epochs from the current state. max_steps bounds the number of steps taken in this call.
  FitResult fit(std::optional<int64_t> max_steps = std::nullopt);

  void set_log(std::ostream* log) { log_ = log; }
  /// Directory for best.pt / last.pt; empty keeps the best weights in memory only.
  void set_output_dir(std::filesystem::path dir) { out_dir_ = std::move(dir); }

  void save_checkpoint(const std::filesystem::path& path) const;
  void load_checkpoint(const std::filesystem::path& path);
  /// Network weights of the best evaluation so far (or the current ones if none).
  void restore_best();

  RdrNet& net() { return net_; }
  DiscriminatorPair& discriminators() { return disc_; }
  torch::optim::Adam& network_optimizer() { return *opt_net_; }
  torch::optim::SGD& discriminator_optimizer() { return *opt_disc_; }

 private:
  void apply_lr(int epoch);
  void log_record(const nlohmann::json& record);
  const std::vector<ImageSample>& supervised_set() const;

  ExperimentConfig config_;
  Datasets data_;
  RngHandle rng_;
  RdrNet net_{nullptr};
  DiscriminatorPair disc_{nullptr};
  std::unique_ptr<torch::optim::Adam> opt_net_;
  std::unique_ptr<torch::optim::SGD> opt_disc_;
  TrainState state_;
  std::string best_weights_;  // serialized network archive
  MetricsReport best_report_;
  std::ostream* log_ = nullptr;
  std::filesystem::path out_dir_;
};

/// Loads a network (config + weights) from a checkpoint written by Trainer.
RdrNet load_network(const std::filesystem::path& checkpoint, ExperimentConfig* config_out = nullptr);

/// Writes the network and its config as a standalone checkpoint.
void save_network(const RdrNet& net, const std::filesystem::path& path);

}  // namespace rdr
