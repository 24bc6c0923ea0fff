#include "utilise/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "utilise/checkpoint.hpp"
#include "utilise/container.hpp"
#include "utilise/infer.hpp"

namespace utilise {
namespace {

using nlohmann::json;

// Transformed plane: out(y, x) = in(source(y, x)).
void transform_plane(const float* in, float* out, int h, int w, const Augmentation& aug) {
  const int turns = ((aug.quarter_turns % 4) + 4) % 4;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // Flips are applied after the rotation.
      const int ry = aug.flip_y ? h - 1 - y : y;
      const int rx = aug.flip_x ? w - 1 - x : x;
      int sy = ry;
      int sx = rx;
      switch (turns) {
        case 1: sy = rx; sx = w - 1 - ry; break;
        case 2: sy = h - 1 - ry; sx = w - 1 - rx; break;
        case 3: sy = h - 1 - rx; sx = ry; break;
        default: break;
      }
      out[static_cast<std::size_t>(y) * w + x] = in[static_cast<std::size_t>(sy) * w + sx];
    }
  }
}

nn::Volume<float> target_volume(std::span<const TrainingPair* const> pairs) {
  const SampleRecord& first = pairs.front()->target;
  const auto channels = static_cast<int>(first.reconstruct_channels().size());
  nn::Volume<float> out(static_cast<int>(pairs.size()) * first.frames(), channels, first.height(), first.width());
  float* dst = out.data.data();
  for (const TrainingPair* p : pairs) {
    const std::vector<float> v = reconstruct_volume(p->target);
    dst = std::copy(v.begin(), v.end(), dst);
  }
  return out;
}

void adam_step(UTilise<float>& model, TrainState& state, const TrainConfig& config, double lr) {
  const std::vector<nn::Param<float>*> params = model.parameters();
  if (state.adam_m.size() != params.size()) {
    state.adam_m.clear();
    state.adam_v.clear();
    for (const nn::Param<float>* p : params) {
      state.adam_m.push_back(NamedTensor{p->name, p->shape, std::vector<float>(p->size(), 0.0f)});
      state.adam_v.push_back(NamedTensor{p->name, p->shape, std::vector<float>(p->size(), 0.0f)});
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const auto b1 = static_cast<float>(config.beta1);
  const auto b2 = static_cast<float>(config.beta2);
  const auto c1 = static_cast<float>(1.0 / (1.0 - std::pow(config.beta1, t)));
  const auto c2 = static_cast<float>(1.0 / (1.0 - std::pow(config.beta2, t)));
  const auto step = static_cast<float>(lr);
  const auto eps = static_cast<float>(config.adam_epsilon);
  const auto wd = static_cast<float>(config.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    nn::Param<float>& p = *params[i];
    std::vector<float>& m = state.adam_m[i].values;
    std::vector<float>& v = state.adam_v[i].values;
    if (state.adam_m[i].name != p.name || m.size() != p.size()) {
      throw TrainingError("optimizer state does not match parameter " + p.name);
    }
    for (std::size_t k = 0; k < p.size(); ++k) {
      const float g = p.grad[k] + wd * p.value[k];
      m[k] = b1 * m[k] + (1.0f - b1) * g;
      v[k] = b2 * v[k] + (1.0f - b2) * g * g;
      p.value[k] -= step * (m[k] * c1) / (std::sqrt(v[k] * c2) + eps);
    }
  }
}

std::vector<NamedTensor> prefixed(const std::vector<NamedTensor>& tensors, const std::string& prefix) {
  std::vector<NamedTensor> out = tensors;
  for (NamedTensor& t : out) t.name = prefix + t.name;
  return out;
}

std::vector<NamedTensor> take_prefixed(const std::vector<NamedTensor>& tensors, const std::string& prefix) {
  std::vector<NamedTensor> out;
  for (const NamedTensor& t : tensors) {
    if (t.name.rfind(prefix, 0) == 0) {
      NamedTensor copy = t;
      copy.name = t.name.substr(prefix.size());
      out.push_back(std::move(copy));
    }
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (window < 1) throw std::invalid_argument("window must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  if (halving_period < 1) throw std::invalid_argument("halving_period must be >= 1");
  if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw std::invalid_argument("beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("beta2 must be in [0, 1)");
  if (!(adam_epsilon > 0.0)) throw std::invalid_argument("adam_epsilon must be > 0");
  if (max_epochs < 0) throw std::invalid_argument("max_epochs must be >= 0");
  if (patience < 0) throw std::invalid_argument("patience must be >= 0");
  if (min_delta < 0.0) throw std::invalid_argument("min_delta must be >= 0");
  gaps.validate();
}

double lr_at(int epoch, const TrainConfig& config) {
  if (epoch < 0) throw std::invalid_argument("lr_at: epoch must be >= 0");
  return config.learning_rate * std::pow(0.5, epoch / config.halving_period);
}

double sequence_l1_loss(const nn::Volume<float>& pred, const nn::Volume<float>& target, int batch,
                        const std::vector<bool>& is_pad, nn::Volume<float>* grad) {
  if (!pred.same_shape(target)) throw std::invalid_argument("sequence_l1_loss: pred/target shape mismatch");
  if (batch < 1 || pred.n % batch != 0) throw std::invalid_argument("sequence_l1_loss: batch does not divide frames");
  if (is_pad.size() != static_cast<std::size_t>(pred.n)) {
    throw std::invalid_argument("sequence_l1_loss: pad flags do not match frame count");
  }
  const int frames = pred.n / batch;
  const std::size_t frame_size = pred.frame_size();
  if (grad != nullptr) *grad = nn::Volume<float>(pred.n, pred.c, pred.h, pred.w);
  double total = 0.0;
  for (int b = 0; b < batch; ++b) {
    int length = 0;
    for (int t = 0; t < frames; ++t) length += is_pad[static_cast<std::size_t>(b * frames + t)] ? 0 : 1;
    if (length == 0) throw std::invalid_argument("sequence_l1_loss: sequence " + std::to_string(b) + " has zero effective length");
    const double norm = static_cast<double>(length) * static_cast<double>(frame_size);
    double sum = 0.0;
    for (int t = 0; t < frames; ++t) {
      const int n = b * frames + t;
      if (is_pad[static_cast<std::size_t>(n)]) continue;
      const float* p = pred.frame(n);
      const float* y = target.frame(n);
      for (std::size_t i = 0; i < frame_size; ++i) sum += std::abs(static_cast<double>(p[i]) - y[i]);
      if (grad != nullptr) {
        float* g = grad->frame(n);
        const auto scale = static_cast<float>(1.0 / (norm * batch));
        for (std::size_t i = 0; i < frame_size; ++i) {
          g[i] = p[i] > y[i] ? scale : (p[i] < y[i] ? -scale : 0.0f);
        }
      }
    }
    total += sum / norm;
  }
  return total / batch;
}

SampleRecord apply_augmentation(const SampleRecord& record, const Augmentation& aug) {
  const int h = record.height();
  const int w = record.width();
  if (aug.quarter_turns % 2 != 0 && h != w) {
    throw std::invalid_argument("apply_augmentation: 90/270 degree rotation needs square frames (sample " +
                                record.sample_id + ")");
  }
  SampleRecord out = record;
  const std::size_t plane = record.shape.frame_pixels();
  for (int t = 0; t < record.frames(); ++t) {
    for (int c = 0; c < record.channels(); ++c) {
      const std::size_t off = record.image_index(t, c, 0, 0);
      transform_plane(record.images.data() + off, out.images.data() + off, h, w, aug);
    }
    const std::size_t moff = static_cast<std::size_t>(t) * plane;
    transform_plane(record.mask.data() + moff, out.mask.data() + moff, h, w, aug);
  }
  return out;
}

Augmentation sample_augmentation(const SampleRecord& record, Rng& rng) {
  Augmentation aug;
  aug.quarter_turns = record.height() == record.width() ? rng.uniform_int(0, 3) : 2 * rng.uniform_int(0, 1);
  aug.flip_x = rng.bernoulli(0.5);
  aug.flip_y = rng.bernoulli(0.5);
  return aug;
}

void augment(std::vector<SampleRecord>& batch, Rng& rng) {
  for (SampleRecord& r : batch) r = apply_augmentation(r, sample_augmentation(r, rng));
}

TrainingPair make_training_pair(const SampleRecord& clean, const MaskPool& pool, const TrainConfig& config,
                                Rng& rng, bool crop_and_augment) {
  const TrimResult trim =
      trim_or_pad(clean, config.window, rng, crop_and_augment ? TrimMode::kTrain : TrimMode::kEval);
  SampleRecord target = trim.record;
  if (crop_and_augment && config.augment) target = apply_augmentation(target, sample_augmentation(target, rng));
  const GapPattern pattern = sample_gap_pattern(config.gaps, pool, trim.valid_length, rng);
  const std::vector<FrameGap> gaps = materialize(pattern, pool);
  TrainingPair pair;
  pair.input = imprint(target, gaps);
  pair.target = std::move(target);
  pair.is_pad = trim.is_pad;
  return pair;
}

void save_train_state(const TrainState& state, const ModelWeights& current, const std::filesystem::path& path) {
  TensorArchive archive;
  archive.kind = "train_state";
  archive.config = current.config;
  archive.tensors = prefixed(current.tensors, "weights/");
  for (auto& t : prefixed(state.adam_m, "adam_m/")) archive.tensors.push_back(std::move(t));
  for (auto& t : prefixed(state.adam_v, "adam_v/")) archive.tensors.push_back(std::move(t));
  if (state.best_weights) {
    for (auto& t : prefixed(state.best_weights->tensors, "best/")) archive.tensors.push_back(std::move(t));
  }
  json extra{{"epoch", state.epoch},
             {"step", state.step},
             {"best_epoch", state.best_epoch},
             {"epochs_without_improvement", state.epochs_without_improvement},
             {"seed", std::to_string(state.seed)},
             {"has_best", state.best_weights.has_value()}};
  extra["best_val_loss"] = std::isfinite(state.best_val_loss) ? json(state.best_val_loss) : json(nullptr);
  archive.extra = extra.dump();
  save_archive(archive, path);
}

std::pair<TrainState, ModelWeights> load_train_state(const std::filesystem::path& path) {
  const TensorArchive archive = load_archive(path);
  if (archive.kind != "train_state") throw CheckpointError(path.string() + ": not a training state file");
  TrainState state;
  try {
    const json extra = json::parse(archive.extra);
    state.epoch = extra.at("epoch").get<int>();
    state.step = extra.at("step").get<std::int64_t>();
    state.best_epoch = extra.at("best_epoch").get<int>();
    state.epochs_without_improvement = extra.at("epochs_without_improvement").get<int>();
    state.seed = std::stoull(extra.at("seed").get<std::string>());
    if (!extra.at("best_val_loss").is_null()) state.best_val_loss = extra.at("best_val_loss").get<double>();
    if (extra.at("has_best").get<bool>()) {
      state.best_weights = ModelWeights{archive.config, take_prefixed(archive.tensors, "best/")};
    }
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": malformed training state (" + e.what() + ")");
  }
  state.adam_m = take_prefixed(archive.tensors, "adam_m/");
  state.adam_v = take_prefixed(archive.tensors, "adam_v/");
  return {std::move(state), ModelWeights{archive.config, take_prefixed(archive.tensors, "weights/")}};
}

EpochResult train_epoch(TrainState& state, UTilise<float>& model, const std::vector<SampleRecord>& dataset,
                        const MaskPool& pool, const TrainConfig& config) {
  if (dataset.empty()) throw TrainingError("train_epoch: empty dataset");
  const double lr = lr_at(state.epoch, config);
  std::vector<int> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng order_rng(derive_seed(state.seed, "order", static_cast<std::uint64_t>(state.epoch)));
  order_rng.shuffle(order);

  EpochResult result;
  double weighted = 0.0;
  nn::ForwardCache<float> cache;
  nn::Volume<float> grad;
  for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(config.batch_size)) {
    const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
    std::vector<TrainingPair> pairs;
    for (std::size_t i = begin; i < end; ++i) {
      const auto idx = static_cast<std::size_t>(order[i]);
      Rng rng(derive_seed(state.seed, static_cast<std::uint64_t>(state.epoch), idx));
      pairs.push_back(make_training_pair(dataset[idx], pool, config, rng));
    }
    std::vector<const SampleRecord*> inputs;
    std::vector<const TrainingPair*> refs;
    std::vector<bool> is_pad;
    for (const TrainingPair& p : pairs) {
      inputs.push_back(&p.input);
      refs.push_back(&p);
      is_pad.insert(is_pad.end(), p.is_pad.begin(), p.is_pad.end());
    }
    const nn::ModelInput<float> input = make_model_input(std::span<const SampleRecord* const>(inputs));
    const nn::Volume<float> target = target_volume(std::span<const TrainingPair* const>(refs));
    model.forward(input, cache);
    const int batch = static_cast<int>(pairs.size());
    const double loss = sequence_l1_loss(cache.prediction, target, batch, is_pad, &grad);
    if (!std::isfinite(loss)) {
      std::string ids;
      for (const TrainingPair& p : pairs) {
        bool finite = true;
        for (float v : p.input.images) finite = finite && std::isfinite(v);
        ids += (ids.empty() ? "" : ", ") + p.input.sample_id + (finite ? "" : " (non-finite input)");
      }
      throw TrainingError("non-finite loss at epoch " + std::to_string(state.epoch) + " in batch [" + ids + "]");
    }
    model.zero_grad();
    model.backward(cache, grad);
    adam_step(model, state, config, lr);
    weighted += loss * batch;
    ++result.batches;
  }
  result.train_loss = weighted / static_cast<double>(dataset.size());
  ++state.epoch;
  return result;
}

std::vector<SampleRecord> make_validation_inputs(const std::vector<SampleRecord>& clean, const MaskPool& pool,
                                                 const TrainConfig& config) {
  std::vector<SampleRecord> out;
  out.reserve(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) {
    Rng rng(derive_seed(config.seed, "validation", i));
    const GapPattern pattern = sample_gap_pattern(config.gaps, pool, clean[i].frames(), rng);
    out.push_back(imprint(clean[i], materialize(pattern, pool)));
  }
  return out;
}

double validation_loss(const UTilise<float>& model, const std::vector<SampleRecord>& inputs,
                       const std::vector<SampleRecord>& clean, int window) {
  if (inputs.size() != clean.size() || inputs.empty()) {
    throw std::invalid_argument("validation_loss: inputs and references must be non-empty and aligned");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Imputation imp = impute_sequence(model, inputs[i], window);
    const std::vector<float> target = reconstruct_volume(clean[i]);
    double sum = 0.0;
    for (std::size_t k = 0; k < target.size(); ++k) sum += std::abs(static_cast<double>(imp.values[k]) - target[k]);
    total += sum / static_cast<double>(target.size());
  }
  return total / static_cast<double>(inputs.size());
}

std::string log_header() { return "epoch,train_loss,val_loss,lr,wall_time"; }

std::string format_log_row(const LogRow& row) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.3f", row.epoch, row.train_loss, row.val_loss, row.lr,
                row.wall_time);
  return buf;
}

std::vector<LogRow> read_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFileError("training log not found: " + path.string());
  std::vector<LogRow> rows;
  std::string line;
  std::getline(in, line);
  if (line != log_header()) throw FormatError(path.string() + ": unexpected log header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    LogRow row;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf", &row.epoch, &row.train_loss, &row.val_loss, &row.lr,
                    &row.wall_time) != 5) {
      throw FormatError(path.string() + ": malformed log row '" + line + "'");
    }
    rows.push_back(row);
  }
  return rows;
}

FitResult fit(const std::vector<SampleRecord>& train, const std::vector<SampleRecord>& val, const MaskPool& pool,
              const ModelConfig& model_config, const TrainConfig& config, const FitOptions& options) {
  config.validate();
  if (train.empty()) throw TrainingError("fit: empty training split");
  if (val.empty()) throw TrainingError("fit: empty validation split");
  std::set<std::string> train_ids;
  for (const SampleRecord& r : train) train_ids.insert(r.sample_id);
  for (const SampleRecord& r : val) {
    if (train_ids.count(r.sample_id) != 0) {
      throw TrainingError("fit: sample " + r.sample_id + " appears in both training and validation splits");
    }
  }

  UTilise<float> model(model_config);
  TrainState state;
  FitResult result;
  const std::filesystem::path log_path = options.out_dir.empty() ? "" : options.out_dir / "train_log.csv";
  if (options.resume_from) {
    auto [loaded, weights] = load_train_state(*options.resume_from);
    if (loaded.seed != config.seed) throw TrainingError("fit: resume state was written with a different seed");
    if (!(weights.config == model.config())) {
      throw TrainingError("fit: " + options.resume_from->string() +
                          " was written with a different model configuration");
    }
    model.import_weights(weights);
    state = std::move(loaded);
    if (!log_path.empty() && std::filesystem::exists(log_path)) {
      for (const LogRow& row : read_log(log_path)) {
        if (row.epoch < state.epoch) result.log.push_back(row);
      }
    }
  } else {
    Rng init(derive_seed(config.seed, "init"));
    model.initialize(init);
    state.seed = config.seed;
  }

  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    std::ofstream log(log_path, std::ios::trunc);
    log << log_header() << "\n";
    for (const LogRow& row : result.log) log << format_log_row(row) << "\n";
  }

  const std::vector<SampleRecord> val_inputs = make_validation_inputs(val, pool, config);
  const auto start = std::chrono::steady_clock::now();
  int ran = 0;
  result.stop_reason = "max_epochs";
  while (state.epoch < config.max_epochs) {
    if (options.stop_after_epochs >= 0 && ran >= options.stop_after_epochs) {
      result.stop_reason = "stopped";
      break;
    }
    const int epoch = state.epoch;
    const EpochResult er = train_epoch(state, model, train, pool, config);
    LogRow row;
    row.epoch = epoch;
    row.train_loss = er.train_loss;
    row.val_loss = validation_loss(model, val_inputs, val, config.window);
    row.lr = lr_at(epoch, config);
    row.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(row);
    ++ran;
    if (!log_path.empty()) {
      std::ofstream log(log_path, std::ios::app);
      log << format_log_row(row) << "\n";
    }
    if (options.on_epoch) options.on_epoch(row);

    if (row.val_loss < state.best_val_loss - config.min_delta) {
      state.best_val_loss = row.val_loss;
      state.best_epoch = epoch;
      state.epochs_without_improvement = 0;
      state.best_weights = model.export_weights();
      if (!options.out_dir.empty()) save_weights(*state.best_weights, options.out_dir / "best.ckpt");
    } else {
      ++state.epochs_without_improvement;
    }
    if (!options.out_dir.empty()) save_train_state(state, model.export_weights(), options.out_dir / "state.ckpt");
    if (state.epochs_without_improvement > config.patience) {
      result.stop_reason = "patience";
      break;
    }
  }
  result.final_weights = model.export_weights();
  result.best_weights = state.best_weights ? *state.best_weights : result.final_weights;
  result.state = std::move(state);
  return result;
}

}  // namespace utilise
