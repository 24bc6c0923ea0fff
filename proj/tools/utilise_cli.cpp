#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "utilise/baselines.hpp"
#include "utilise/checkpoint.hpp"
#include "utilise/container.hpp"
#include "utilise/gapsim.hpp"
#include "utilise/infer.hpp"
#include "utilise/metrics.hpp"
#include "utilise/raster.hpp"
#include "utilise/synthetic.hpp"
#include "utilise/train.hpp"

namespace fs = std::filesystem;
using namespace utilise;

namespace {

constexpr const char* kDataRootEnv = "UTILISE_DATA_ROOT";

// Relative dataset paths are taken from the data root when the variable is set.
fs::path resolve_data(const std::string& p) {
  if (p.empty()) throw std::invalid_argument("missing dataset path");
  fs::path path(p);
  const char* root = std::getenv(kDataRootEnv);
  if (path.is_relative() && root != nullptr && *root != '\0') path = fs::path(root) / path;
  return fs::absolute(path).lexically_normal();
}

fs::path resolve_out(const std::string& p) {
  if (p.empty()) throw std::invalid_argument("--out is required");
  return fs::absolute(fs::path(p)).lexically_normal();
}

void log_line(const std::string& s) {
  std::fprintf(stderr, "%s\n", s.c_str());
}

struct PoolOptions {
  std::string pool;
  int blob_count = 200;
  double blob_min = 0.1;
  double blob_max = 0.9;
  double full_frame_fraction = 0.2;
  bool no_fallback = false;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--pool", pool, "Dataset whose invalid pixels provide occlusion masks");
    cmd->add_option("--blob-count", blob_count, "Generated masks when no pool is given")->check(CLI::PositiveNumber);
    cmd->add_option("--blob-min-coverage", blob_min, "Smallest generated mask coverage");
    cmd->add_option("--blob-max-coverage", blob_max, "Largest generated mask coverage");
    cmd->add_option("--full-frame-fraction", full_frame_fraction, "Share of fully occluded generated masks");
    cmd->add_flag("--no-fallback", no_fallback, "Fail instead of generating masks when the pool is empty");
  }

  MaskPool build(int height, int width, std::uint64_t seed) const {
    MaskPool p;
    if (!pool.empty()) p = load_mask_pool(resolve_data(pool));
    if (!p.empty()) {
      if (p.masks.front().height != height || p.masks.front().width != width) {
        throw std::invalid_argument("mask pool frame size does not match the dataset");
      }
      return p;
    }
    if (no_fallback) {
      throw std::runtime_error(pool.empty() ? "no mask pool given and --no-fallback set"
                                            : "mask pool " + pool + " has no occluded frames and --no-fallback set");
    }
    Rng rng(derive_seed(seed, "blob_pool"));
    return make_blob_pool(height, width, blob_count, blob_min, blob_max, full_frame_fraction, rng);
  }
};

struct ModelOptions {
  int filters = 64;
  int depth = 128;
  int levels = 3;
  int heads = 4;
  int key_dim = 4;
  int groups = 4;
  int mlp_hidden = 0;
  std::string pe = "day_of_year";
  double tau = 1000.0;
  bool no_temporal = false;
  bool no_weighted_skips = false;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--filters", filters, "Encoder/decoder width d");
    cmd->add_option("--depth", depth, "Bottleneck depth D");
    cmd->add_option("--levels", levels, "Downsampling levels L");
    cmd->add_option("--heads", heads, "Attention heads G");
    cmd->add_option("--key-dim", key_dim, "Key/query size per head");
    cmd->add_option("--norm-groups", groups, "GroupNorm groups");
    cmd->add_option("--mlp-hidden", mlp_hidden, "MLP width, 0 = D");
    cmd->add_option("--positional-encoding", pe, "day_of_year | day_in_sequence | enumeration | none");
    cmd->add_option("--tau", tau, "Positional encoding base");
    cmd->add_flag("--no-temporal-encoder", no_temporal, "Per-frame U-Net variant");
    cmd->add_flag("--no-weighted-skips", no_weighted_skips, "Plain per-frame skip connections");
  }

  ModelConfig build(int in_channels, int out_channels) const {
    ModelConfig c;
    c.input_channels = in_channels;
    c.output_channels = out_channels;
    c.filters = filters;
    c.bottleneck_depth = depth;
    c.levels = levels;
    c.heads = heads;
    c.key_dim = key_dim;
    c.norm_groups = groups;
    c.mlp_hidden = mlp_hidden;
    c.positional_encoding = positional_encoding_mode_from_string(pe);
    c.tau = tau;
    c.temporal_encoder = !no_temporal;
    c.weighted_skips = !no_weighted_skips;
    c.validate();
    return c;
  }
};

std::vector<SampleRecord> load_root(const fs::path& root) { return load_dataset(load_manifest(root)); }

std::string checkpoint_id(const fs::path& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%08x", crc32_of(bytes));
  return path.filename().string() + "@" + buf;
}

UTilise<float> load_model(const fs::path& path) {
  const ModelWeights w = load_weights(path);
  UTilise<float> model(w.config);
  model.import_weights(w);
  return model;
}

// Panels of one window's attention at image resolution, one per head.
void write_attention_panels(const AttentionVolume& att, int height, int width, const fs::path& dir,
                            const std::string& stem) {
  fs::create_directories(dir);
  const AttentionVolume up = upsample_attention(att, height, width);
  for (int g = 0; g < up.heads; ++g) {
    write_ppm(attention_panel(up, g), dir / (stem + "_head" + std::to_string(g) + ".ppm"));
  }
}

// --- synth ------------------------------------------------------------------

struct SynthCmd {
  int count = 100;
  std::string split = "train";
  std::string prefix;
  std::uint64_t seed = 0;
  std::string out;
  SyntheticSceneParams params;

  void add(CLI::App& app) {
    CLI::App* c = app.add_subcommand("synth", "Generate a synthetic cloud-free dataset");
    c->add_option("--count", count, "Number of scenes")->check(CLI::PositiveNumber);
    c->add_option("--split", split, "Split tag: train | val | test");
    c->add_option("--id-prefix", prefix, "Sample id prefix (default: split name)");
    c->add_option("--seed", seed, "Random seed");
    c->add_option("--out", out, "Output dataset root")->required();
    c->add_option("--frames", params.frames);
    c->add_option("--channels", params.channels);
    c->add_option("--height", params.height);
    c->add_option("--width", params.width);
    c->add_option("--segments", params.segments);
    c->add_option("--seasonal-amplitude", params.seasonal_amplitude);
    c->add_option("--seasonal-period", params.seasonal_period_days);
    c->add_option("--event-probability", params.event_probability);
    c->add_option("--event-magnitude", params.event_magnitude);
    c->add_option("--texture", params.texture);
    c->add_option("--noise", params.noise);
    c->add_option("--brightness-jitter", params.brightness_jitter);
    c->add_option("--min-day-spacing", params.min_day_spacing);
    c->add_option("--max-day-spacing", params.max_day_spacing);
    c->callback([this] { run(); });
  }

  void run() {
    params.seed = seed;
    params.validate();
    const Split s = split_from_string(split);
    const std::string pre = prefix.empty() ? split : prefix;
    Rng rng(seed);
    std::vector<SampleRecord> records;
    records.reserve(static_cast<std::size_t>(count));
    char id[64];
    for (int i = 0; i < count; ++i) {
      std::snprintf(id, sizeof(id), "%s_%05d", pre.c_str(), i);
      records.push_back(generate_synthetic_scene(params, rng, id));
    }
    const fs::path root = resolve_out(out);
    save_dataset(records, root, s);
    log_line("synth: wrote " + std::to_string(count) + " samples to " + root.string());
  }
};

// --- simulate ---------------------------------------------------------------

struct SimulateCmd {
  std::string data;
  std::string out;
  std::uint64_t seed = 0;
  GapSpec gaps;
  PoolOptions pool;

  void add(CLI::App& app) {
    CLI::App* c = app.add_subcommand("simulate", "Superimpose occlusion masks onto a clean dataset");
    c->add_option("--data", data, "Clean dataset root")->required();
    c->add_option("--out", out, "Output dataset root")->required();
    c->add_option("--seed", seed, "Random seed");
    c->add_option("--max-masked-ratio", gaps.max_masked_frame_ratio, "Upper bound on the masked frame share");
    c->add_option("--min-masked-frames", gaps.min_masked_frames, "Lower bound on masked frames");
    pool.add_to(c);
    c->callback([this] { run(); });
  }

  void run() {
    gaps.seed = seed;
    gaps.validate();
    const fs::path src = resolve_data(data);
    const DatasetManifest manifest = load_manifest(src);
    const std::vector<SampleRecord> clean = load_dataset(manifest);
    const MaskPool masks = pool.build(manifest.height, manifest.width, seed);
    std::vector<SampleRecord> masked;
    const fs::path root = resolve_out(out);
    fs::create_directories(root);
    std::ofstream index(root / "pairing.csv");
    index << "masked_id,clean_id,clean_root,masked_frames\n";
    for (std::size_t i = 0; i < clean.size(); ++i) {
      Rng rng(derive_seed(seed, "simulate", i));
      const GapPattern pattern = sample_gap_pattern(gaps, masks, clean[i].frames(), rng);
      SampleRecord r = imprint(clean[i], materialize(pattern, masks));
      r.metadata["clean_source"] = clean[i].sample_id;
      std::string frames;
      for (int f : pattern.frames) frames += (frames.empty() ? "" : ";") + std::to_string(f);
      index << r.sample_id << "," << clean[i].sample_id << "," << src.string() << "," << frames << "\n";
      masked.push_back(std::move(r));
    }
    save_dataset(masked, root, manifest.split);
    log_line("simulate: wrote " + std::to_string(masked.size()) + " samples to " + root.string());
  }
};

// --- train ------------------------------------------------------------------

struct TrainCmd {
  std::string train_root;
  std::string val_root;
  std::string out;
  std::string resume;
  std::uint64_t seed = 0;
  TrainConfig tc;
  ModelOptions model;
  PoolOptions pool;

  void add(CLI::App& app) {
    CLI::App* c = app.add_subcommand("train", "Train a model on clean sequences with simulated gaps");
    c->add_option("--train", train_root, "Clean training dataset root")->required();
    c->add_option("--val", val_root, "Clean validation dataset root")->required();
    c->add_option("--out", out, "Run directory (log and checkpoints)")->required();
    c->add_option("--resume", resume, "Training state file to continue from");
    c->add_option("--seed", seed, "Random seed");
    c->add_option("--window", tc.window, "Training window T");
    c->add_option("--batch-size", tc.batch_size);
    c->add_option("--lr", tc.learning_rate, "Base learning rate");
    c->add_option("--halving-period", tc.halving_period, "Epochs between learning-rate halvings");
    c->add_option("--weight-decay", tc.weight_decay);
    c->add_option("--max-epochs", tc.max_epochs);
    c->add_option("--patience", tc.patience);
    c->add_option("--min-delta", tc.min_delta);
    c->add_option("--max-masked-ratio", tc.gaps.max_masked_frame_ratio);
    c->add_option("--min-masked-frames", tc.gaps.min_masked_frames);
    c->add_flag("--no-augment", no_augment_, "Disable rotations and flips");
    model.add_to(c);
    pool.add_to(c);
    c->callback([this] { run(); });
  }

  bool no_augment_ = false;

  void run() {
    tc.seed = seed;
    tc.gaps.seed = seed;
    tc.augment = !no_augment_;
    tc.validate();
    const DatasetManifest tm = load_manifest(resolve_data(train_root));
    const std::vector<SampleRecord> train = load_dataset(tm);
    const std::vector<SampleRecord> val = load_root(resolve_data(val_root));
    if (train.empty()) throw std::runtime_error("training dataset is empty");
    const int c_out = static_cast<int>(train.front().reconstruct_channels().size());
    const ModelConfig mc = model.build(tm.channels, c_out);
    mc.validate_input(tm.height, tm.width);
    const MaskPool masks = pool.build(tm.height, tm.width, seed);

    FitOptions fo;
    fo.out_dir = resolve_out(out);
    if (!resume.empty()) fo.resume_from = fs::absolute(resume);
    fo.on_epoch = [](const LogRow& r) {
      char buf[200];
      std::snprintf(buf, sizeof(buf), "epoch %d  train %.6f  val %.6f  lr %.3g  %.1fs", r.epoch, r.train_loss,
                    r.val_loss, r.lr, r.wall_time);
      log_line(buf);
    };
    fs::create_directories(fo.out_dir);
    write_text_file(fo.out_dir / "model_config.json", config_to_json(mc));
    const FitResult res = fit(train, val, masks, mc, tc, fo);
    log_line("train: stopped (" + res.stop_reason + ") after " + std::to_string(res.log.size()) +
             " epochs; best epoch " + std::to_string(res.state.best_epoch) + ", checkpoint " +
             (fo.out_dir / "best.ckpt").string());
  }
};

// --- impute -----------------------------------------------------------------

struct ImputeCmd {
  std::string data;
  std::string out;
  std::string checkpoint;
  int window = 10;
  int attention_limit = -1;

  void add(CLI::App& app) {
    CLI::App* c = app.add_subcommand("impute", "Impute a gap-containing dataset with a trained model");
    c->add_option("--data", data, "Dataset with gaps")->required();
    c->add_option("--out", out, "Output dataset root")->required();
    c->add_option("--checkpoint", checkpoint, "Weights file")->required();
    c->add_option("--window", window, "Training window T");
    c->add_option("--attention-limit", attention_limit, "Write attention panels for the first N samples (-1: all)");
    c->callback([this] { run(); });
  }

  void run() {
    const fs::path ckpt = fs::absolute(checkpoint);
    const UTilise<float> model = load_model(ckpt);
    const std::string id = checkpoint_id(ckpt);
    const DatasetManifest manifest = load_manifest(resolve_data(data));
    const fs::path root = resolve_out(out);
    std::vector<SampleRecord> outputs;
    int n = 0;
    for (const std::string& sid : manifest.sample_ids) {
      const SampleRecord r = load_sample(fs::path(manifest.root) / sid);
      Imputation imp;
      try {
        imp = impute_sequence(model, r, window);
      } catch (const std::exception& e) {
        throw std::runtime_error("sample " + sid + ": " + e.what());
      }
      if (attention_limit < 0 || n < attention_limit) {
        for (std::size_t w = 0; w < imp.attention.size(); ++w) {
          write_attention_panels(imp.attention[w], r.height(), r.width(), root / "attention" / sid,
                                 "window" + std::to_string(w));
        }
      }
      outputs.push_back(imputed_record(r, imp, id));
      ++n;
    }
    save_dataset(outputs, root, manifest.split);
    log_line("impute: wrote " + std::to_string(outputs.size()) + " samples to " + root.string());
  }
};

// --- evaluate ---------------------------------------------------------------

struct EvaluateCmd {
  std::string data;
  std::string reference;
  std::string out;
  std::string checkpoint;
  std::string split;
  std::vector<std::string> methods{"last", "closest", "linear"};
  int window = 10;

  void add(CLI::App& app) {
    CLI::App* c = app.add_subcommand("evaluate", "Score imputation methods against clean references");
    c->add_option("--data", data, "Dataset with gaps")->required();
    c->add_option("--reference", reference, "Clean reference dataset (default: clean_root from pairing.csv)");
    c->add_option("--out", out, "Report directory")->required();
    c->add_option("--checkpoint", checkpoint, "Weights file, required for method 'model'");
    c->add_option("--methods", methods, "Any of last, closest, linear, model")->delimiter(',');
    c->add_option("--split", split, "Split label in the report (default: from the manifest)");
    c->add_option("--window", window, "Training window T for method 'model'");
    c->callback([this] { run(); });
  }

  void run() {
    const fs::path data_root = resolve_data(data);
    const DatasetManifest manifest = load_manifest(data_root);
    std::map<std::string, std::string> pairing;
    std::string pair_root;
    if (fs::exists(data_root / "pairing.csv")) {
      std::ifstream in(data_root / "pairing.csv");
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        std::stringstream ss(line);
        std::string masked, clean, croot;
        std::getline(ss, masked, ',');
        std::getline(ss, clean, ',');
        std::getline(ss, croot, ',');
        pairing[masked] = clean;
        pair_root = croot;
      }
    }
    fs::path ref_root;
    if (!reference.empty()) {
      ref_root = resolve_data(reference);
    } else if (!pair_root.empty()) {
      ref_root = pair_root;
    } else {
      throw std::invalid_argument("--reference is required when the dataset has no pairing.csv");
    }

    std::optional<UTilise<float>> model;
    for (const std::string& m : methods) {
      if (m == "model") {
        if (checkpoint.empty()) throw std::invalid_argument("method 'model' needs --checkpoint");
        model.emplace(load_model(fs::absolute(checkpoint)));
      } else {
        baseline_from_string(m);
      }
    }
    const std::string label = split.empty() ? to_string(manifest.split) : split;
    std::vector<std::vector<SequenceMetrics>> per_method(methods.size());
    for (const std::string& sid : manifest.sample_ids) {
      const SampleRecord input = load_sample(fs::path(manifest.root) / sid);
      const std::string clean_id = pairing.count(sid) ? pairing[sid] : sid;
      const SampleRecord ref = load_sample(ref_root / clean_id);
      for (std::size_t k = 0; k < methods.size(); ++k) {
        std::vector<double> pred;
        try {
          if (methods[k] == "model") {
            const Imputation imp = impute_sequence(*model, input, window);
            pred.assign(imp.values.begin(), imp.values.end());
          } else {
            pred = impute_baseline(input, baseline_from_string(methods[k])).values;
          }
          per_method[k].push_back(evaluate_sequence(pred, input, ref));
        } catch (const std::exception& e) {
          throw std::runtime_error("sample " + sid + " (" + methods[k] + "): " + e.what());
        }
      }
    }
    const fs::path root = resolve_out(out);
    fs::create_directories(root);
    std::vector<ReportRow> rows;
    std::vector<double> mae_bars;
    for (std::size_t k = 0; k < methods.size(); ++k) {
      rows.push_back(aggregate(label, methods[k], per_method[k]));
      write_detail_csv(label, methods[k], per_method[k], root / "detail.csv", k > 0);
      mae_bars.push_back(rows.back().mae.value_or(0.0));
    }
    write_report_csv(rows, root / "report.csv");
    write_ppm(bar_chart(mae_bars), root / "mae.ppm");
    for (const ReportRow& r : rows) {
      char buf[200];
      std::snprintf(buf, sizeof(buf), "%-8s MAE %.5f  RMSE %.5f  SSIM %.4f  MAE_valid %.5f", r.method.c_str(),
                    r.mae.value_or(-1), r.rmse.value_or(-1), r.ssim.value_or(-1), r.mae_valid.value_or(-1));
      log_line(buf);
    }
  }
};

// --- export-attention -------------------------------------------------------

struct ExportAttentionCmd {
  std::string data;
  std::string sample;
  std::string out;
  std::string checkpoint;
  int window = 10;

  void add(CLI::App& app) {
    CLI::App* c = app.add_subcommand("export-attention", "Write attention panels and raw scores of one sample");
    c->add_option("--data", data, "Dataset root")->required();
    c->add_option("--sample", sample, "Sample id")->required();
    c->add_option("--out", out, "Output directory")->required();
    c->add_option("--checkpoint", checkpoint, "Weights file")->required();
    c->add_option("--window", window, "Training window T");
    c->callback([this] { run(); });
  }

  void run() {
    const fs::path ckpt = fs::absolute(checkpoint);
    if (!fs::exists(ckpt)) throw MissingFileError("checkpoint not found: " + ckpt.string());
    const UTilise<float> model = load_model(ckpt);
    const SampleRecord r = load_sample(resolve_data(data) / sample);
    const Imputation imp = impute_sequence(model, r, window);
    const fs::path root = resolve_out(out);
    fs::create_directories(root);
    std::ofstream csv(root / "attention.csv");
    csv << "window,head,query,key,y,x,score\n";
    char buf[128];
    for (std::size_t w = 0; w < imp.attention.size(); ++w) {
      const AttentionVolume up = upsample_attention(imp.attention[w], r.height(), r.width());
      for (int g = 0; g < up.heads; ++g) {
        for (int q = 0; q < up.frames; ++q) {
          for (int k = 0; k < up.frames; ++k) {
            for (int y = 0; y < up.height; ++y) {
              for (int x = 0; x < up.width; ++x) {
                std::snprintf(buf, sizeof(buf), "%zu,%d,%d,%d,%d,%d,%.9g\n", w, g, q, k, y, x, up.at(g, q, k, y, x));
                csv << buf;
              }
            }
          }
        }
      }
      write_attention_panels(imp.attention[w], r.height(), r.width(), root, "window" + std::to_string(w));
    }
    log_line("export-attention: " + std::to_string(imp.attention.size()) + " window(s), " +
             std::to_string(model.config().heads) + " head panel(s) each in " + root.string());
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Satellite image time series gap imputation toolkit"};
  app.set_config("--config", "", "INI file with one [command] section; flags override it");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);

  SynthCmd synth;
  SimulateCmd simulate;
  TrainCmd train;
  ImputeCmd impute;
  EvaluateCmd evaluate;
  ExportAttentionCmd export_attention;
  synth.add(app);
  simulate.add(app);
  train.add(app);
  impute.add(app);
  evaluate.add(app);
  export_attention.add(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
