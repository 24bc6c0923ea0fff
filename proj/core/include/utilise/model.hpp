#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "utilise/layers.hpp"
#include "utilise/positional_encoding.hpp"
#include "utilise/temporal_encoder.hpp"

namespace utilise {

// Architecture hyper-parameters.
struct ModelConfig {
  int input_channels = 4;
  int output_channels = 4;
  int filters = 64;            // encoder/decoder width above the bottleneck
  int bottleneck_depth = 128;  // embedding depth seen by the temporal encoder
  int levels = 3;              // downsampling steps; bottleneck is H/2^levels
  int heads = 4;
  int key_dim = 4;
  int norm_groups = 4;
  int mlp_hidden = 0;          // 0 means bottleneck_depth
  PositionalEncodingMode positional_encoding = PositionalEncodingMode::kDayOfYear;
  double tau = 1000.0;
  bool temporal_encoder = true;  // false: per-frame U-Net, identity attention
  bool weighted_skips = true;    // false: skips carry each frame's own features

  int hidden() const { return mlp_hidden > 0 ? mlp_hidden : bottleneck_depth; }
  int level_channels(int level) const { return level == levels ? bottleneck_depth : filters; }
  // Throws std::invalid_argument naming the violated constraint.
  void validate() const;
  void validate_input(int height, int width) const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Temporal attention scores, heads x frames(query) x frames(key) x h x w.
struct AttentionVolume {
  int heads = 0;
  int frames = 0;
  int height = 0;
  int width = 0;
  std::vector<float> scores;

  AttentionVolume() = default;
  AttentionVolume(int g, int t, int h, int w)
      : heads(g), frames(t), height(h), width(w),
        scores(static_cast<std::size_t>(g) * t * t * h * w, 0.0f) {}

  std::size_t index(int g, int query, int key, int y, int x) const {
    return ((((static_cast<std::size_t>(g) * frames + query) * frames + key) * height + y) * width) + x;
  }
  float& at(int g, int query, int key, int y, int x) { return scores[index(g, query, key, y, x)]; }
  float at(int g, int query, int key, int y, int x) const { return scores[index(g, query, key, y, x)]; }
};

// Bilinear (half-pixel, edge-clamped) upsampling of every (head, query, key)
// map to `height` x `width`. Key sums are preserved because the interpolation
// weights of each output pixel sum to one.
AttentionVolume upsample_attention(const AttentionVolume& attention, int height, int width);

// Serialized parameters: one named float32 tensor per learned array.
struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> values;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct ModelWeights {
  ModelConfig config;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
  std::size_t parameter_count() const;
  friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

namespace nn {

// Bilinear interpolation taps along one axis.
struct InterpAxis {
  std::vector<int> lo;
  std::vector<int> hi;
  std::vector<double> frac;
};
InterpAxis bilinear_axis(int in_size, int out_size);

// Weighted skip: out[b,t,c,p] = sum_k attn[b,t,k,p] * features[b*T+k,c,p].
// `attn` is batch x frames x frames x plane at the feature resolution.
template <typename Real>
Volume<Real> weighted_skip_mix(const Volume<Real>& features, const std::vector<Real>& attn, int batch,
                               int frames);

// Batched network input: batch * frames images, frame-major per sequence.
template <typename Real>
struct ModelInput {
  int batch = 1;
  int frames = 0;
  Volume<Real> images;   // (batch*frames) x C_in x H x W, imprinted
  std::vector<int> days; // batch*frames day values
};

// Every activation needed for the backward pass.
template <typename Real>
struct ForwardCache {
  int batch = 0;
  int frames = 0;
  std::vector<Volume<Real>> enc_input;   // level inputs (level 0: images)
  std::vector<Volume<Real>> enc_hidden;  // ReLU(conv1)
  std::vector<Volume<Real>> features;    // block outputs; features[levels] = bottleneck
  std::vector<Real> tokens;              // bottleneck + PE, batch*h*w x frames x depth
  TemporalCache<Real> temporal;
  Volume<Real> refined;                  // bottleneck after temporal encoding
  std::vector<Real> attention;           // batch x heads x T x T x h x w
  std::vector<std::vector<Real>> skip_attention;  // per level: batch x T x T x plane
  std::vector<Volume<Real>> weighted;    // attention-mixed encoder features
  std::vector<Volume<Real>> skip;        // ReLU(1x1 conv(weighted))
  std::vector<Volume<Real>> up;          // ReLU(transposed conv)
  std::vector<Volume<Real>> concat;      // [up, skip]
  std::vector<Volume<Real>> dec_hidden;
  std::vector<Volume<Real>> dec_output;
  Volume<Real> prediction;               // sigmoid output, (batch*frames) x C_out x H x W
};

}  // namespace nn

// The imputation network: shared per-frame convolutional encoder, per-pixel
// temporal self-attention at the bottleneck, attention-weighted skips and a
// shared convolutional decoder with sigmoid output.
template <typename Real>
class UTilise {
 public:
  explicit UTilise(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  void initialize(Rng& rng);
  std::vector<nn::Param<Real>*> parameters();
  std::vector<const nn::Param<Real>*> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

  ModelWeights export_weights() const;
  // Throws std::invalid_argument on config, name or shape mismatch.
  void import_weights(const ModelWeights& weights);

  // Stages, usable on their own. Each fills the relevant part of `cache`.
  void spatial_encode(const nn::ModelInput<Real>& input, nn::ForwardCache<Real>& cache) const;
  void temporal_encode(std::span<const int> days, nn::ForwardCache<Real>& cache) const;
  void spatial_decode(nn::ForwardCache<Real>& cache) const;

  // Full forward pass; prediction and attention are left in `cache`.
  void forward(const nn::ModelInput<Real>& input, nn::ForwardCache<Real>& cache) const;
  // Accumulates parameter gradients given dL/dprediction.
  void backward(const nn::ForwardCache<Real>& cache, const nn::Volume<Real>& d_prediction);

  // Attention of batch element `b` as a float volume.
  AttentionVolume attention(const nn::ForwardCache<Real>& cache, int b) const;

 private:
  struct Block {
    nn::Conv2d<Real> conv1;
    nn::Conv2d<Real> conv2;
  };

  void block_forward(const Block& block, const nn::Volume<Real>& x, nn::Volume<Real>& hidden,
                     nn::Volume<Real>& out) const;
  nn::Volume<Real> block_backward(Block& block, const nn::Volume<Real>& x,
                                  const nn::Volume<Real>& hidden, const nn::Volume<Real>& out,
                                  nn::Volume<Real> d_out);

  ModelConfig config_;
  std::vector<Block> encoder_;                 // levels + 1 blocks
  std::vector<nn::Conv2d<Real>> down_;         // levels
  nn::TemporalEncoder<Real> temporal_;
  std::vector<nn::Conv2d<Real>> skip_conv_;    // 1x1, per level < levels
  std::vector<nn::ConvTranspose2d<Real>> up_;  // up_[l]: level l+1 -> level l
  std::vector<Block> decoder_;                 // per level < levels
  nn::Conv2d<Real> head_;
};

extern template class UTilise<float>;
extern template class UTilise<double>;

}  // namespace utilise
