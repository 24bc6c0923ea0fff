#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "utilise/datamodel.hpp"
#include "utilise/gapsim.hpp"
#include "utilise/model.hpp"

namespace utilise {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int window = 10;
  int batch_size = 3;
  double learning_rate = 2e-4;
  int halving_period = 50;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int max_epochs = 100;
  int patience = 10;
  double min_delta = 1e-5;
  bool augment = true;
  GapSpec gaps;
  std::uint64_t seed = 0;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

double lr_at(int epoch, const TrainConfig& config);

// Mean over sequences of the per-sequence mean absolute error over non-pad
// frames, channels and pixels. `pred` and `target` are (batch*frames) x C x H
// x W; `is_pad` flags frames (batch*frames). When `grad` is given it receives
// dLoss/dpred (zero on pad frames; sign(0) = 0).
double sequence_l1_loss(const nn::Volume<float>& pred, const nn::Volume<float>& target, int batch,
                        const std::vector<bool>& is_pad, nn::Volume<float>* grad = nullptr);

// Rotation by quarter turns (counter-clockwise) and axis flips, applied to
// every frame, channel and the mask.
struct Augmentation {
  int quarter_turns = 0;
  bool flip_x = false;  // mirror columns
  bool flip_y = false;  // mirror rows
};

// Throws std::invalid_argument for odd quarter turns on non-square frames.
SampleRecord apply_augmentation(const SampleRecord& record, const Augmentation& aug);
// Draws one augmentation per sequence. Non-square frames only draw 0 or 180
// degree rotations.
Augmentation sample_augmentation(const SampleRecord& record, Rng& rng);
void augment(std::vector<SampleRecord>& batch, Rng& rng);

// One supervised pair: imprinted input and clean target, fixed length.
struct TrainingPair {
  SampleRecord input;
  SampleRecord target;
  std::vector<bool> is_pad;
};

// Crop/pad, augment, sample gaps and imprint. Deterministic in `rng`.
TrainingPair make_training_pair(const SampleRecord& clean, const MaskPool& pool, const TrainConfig& config,
                                Rng& rng, bool crop_and_augment = true);

// Optimizer and schedule state; together with the model weights this is
// everything needed to continue a run.
struct TrainState {
  int epoch = 0;                 // next epoch to run
  std::int64_t step = 0;         // optimizer steps taken
  std::vector<NamedTensor> adam_m;
  std::vector<NamedTensor> adam_v;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  int epochs_without_improvement = 0;
  std::uint64_t seed = 0;
  std::optional<ModelWeights> best_weights;
};

void save_train_state(const TrainState& state, const ModelWeights& current, const std::filesystem::path& path);
// Returns the state and the weights current at the time of saving.
std::pair<TrainState, ModelWeights> load_train_state(const std::filesystem::path& path);

struct EpochResult {
  double train_loss = 0.0;
  int batches = 0;
};

// Fresh gap patterns are drawn for every sample in every epoch.
EpochResult train_epoch(TrainState& state, UTilise<float>& model, const std::vector<SampleRecord>& dataset,
                        const MaskPool& pool, const TrainConfig& config);

// Imprinted validation inputs with gaps fixed by the run seed.
std::vector<SampleRecord> make_validation_inputs(const std::vector<SampleRecord>& clean, const MaskPool& pool,
                                                 const TrainConfig& config);
// Sequence L1 loss of full-length imputations over all frames.
double validation_loss(const UTilise<float>& model, const std::vector<SampleRecord>& inputs,
                       const std::vector<SampleRecord>& clean, int window);

struct LogRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  double wall_time = 0.0;  // seconds since the run (or resume) started
};

std::string log_header();
std::string format_log_row(const LogRow& row);
std::vector<LogRow> read_log(const std::filesystem::path& path);

struct FitOptions {
  std::filesystem::path out_dir;            // empty: nothing written
  std::optional<std::filesystem::path> resume_from;
  int stop_after_epochs = -1;               // stop (without early-stop logic) after this many epochs
  std::function<void(const LogRow&)> on_epoch;
};

struct FitResult {
  std::vector<LogRow> log;
  ModelWeights best_weights;
  TrainState state;
  ModelWeights final_weights;
  std::string stop_reason;  // "patience", "max_epochs", "stopped"
};

// Output files in out_dir: train_log.csv, best.ckpt, state.ckpt.
FitResult fit(const std::vector<SampleRecord>& train, const std::vector<SampleRecord>& val, const MaskPool& pool,
              const ModelConfig& model_config, const TrainConfig& config, const FitOptions& options = {});

}  // namespace utilise
