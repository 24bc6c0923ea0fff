#include "utilise/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace utilise {

void ModelConfig::validate() const {
  if (input_channels < 1) throw std::invalid_argument("input_channels must be >= 1");
  if (output_channels < 1) throw std::invalid_argument("output_channels must be >= 1");
  if (output_channels > input_channels) {
    throw std::invalid_argument("output_channels must not exceed input_channels");
  }
  if (filters < 1) throw std::invalid_argument("filters must be >= 1");
  if (bottleneck_depth < 1) throw std::invalid_argument("bottleneck_depth must be >= 1");
  if (levels < 1) throw std::invalid_argument("levels must be >= 1");
  if (heads < 1) throw std::invalid_argument("heads must be >= 1");
  if (bottleneck_depth % heads != 0) throw std::invalid_argument("bottleneck_depth must be divisible by heads");
  if (norm_groups < 1 || bottleneck_depth % norm_groups != 0) {
    throw std::invalid_argument("bottleneck_depth must be divisible by norm_groups");
  }
  if (key_dim < 1) throw std::invalid_argument("key_dim must be >= 1");
  if (mlp_hidden < 0) throw std::invalid_argument("mlp_hidden must be >= 0");
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be > 0");
}

void ModelConfig::validate_input(int height, int width) const {
  const int factor = 1 << levels;
  if (height % factor != 0 || width % factor != 0) {
    throw std::invalid_argument("spatial size " + std::to_string(height) + "x" + std::to_string(width) +
                                " is not divisible by 2^levels = " + std::to_string(factor));
  }
}

const NamedTensor* ModelWeights::find(const std::string& name) const {
  for (const NamedTensor& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::size_t ModelWeights::parameter_count() const {
  std::size_t n = 0;
  for (const NamedTensor& t : tensors) n += t.values.size();
  return n;
}

namespace nn {

InterpAxis bilinear_axis(int in_size, int out_size) {
  InterpAxis axis;
  axis.lo.resize(static_cast<std::size_t>(out_size));
  axis.hi.resize(static_cast<std::size_t>(out_size));
  axis.frac.resize(static_cast<std::size_t>(out_size));
  const double scale = static_cast<double>(in_size) / out_size;
  for (int o = 0; o < out_size; ++o) {
    const double src = std::max(0.0, (o + 0.5) * scale - 0.5);
    const int lo = std::min(static_cast<int>(src), in_size - 1);
    const auto i = static_cast<std::size_t>(o);
    axis.lo[i] = lo;
    axis.hi[i] = std::min(lo + 1, in_size - 1);
    axis.frac[i] = src - lo;
  }
  return axis;
}

namespace {

// Upsamples `planes` maps of h x w to out_h x out_w.
template <typename Real>
void bilinear_upsample(const Real* src, std::size_t planes, int h, int w, int out_h, int out_w, Real* dst) {
  const InterpAxis ay = bilinear_axis(h, out_h);
  const InterpAxis ax = bilinear_axis(w, out_w);
  const std::size_t in_plane = static_cast<std::size_t>(h) * w;
  const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
  for (std::size_t m = 0; m < planes; ++m) {
    const Real* s = src + m * in_plane;
    Real* d = dst + m * out_plane;
    for (int y = 0; y < out_h; ++y) {
      const auto yi = static_cast<std::size_t>(y);
      const Real fy = static_cast<Real>(ay.frac[yi]);
      const Real* r0 = s + static_cast<std::size_t>(ay.lo[yi]) * w;
      const Real* r1 = s + static_cast<std::size_t>(ay.hi[yi]) * w;
      for (int x = 0; x < out_w; ++x) {
        const auto xi = static_cast<std::size_t>(x);
        const Real fx = static_cast<Real>(ax.frac[xi]);
        const int x0 = ax.lo[xi];
        const int x1 = ax.hi[xi];
        const Real top = r0[x0] + fx * (r0[x1] - r0[x0]);
        const Real bottom = r1[x0] + fx * (r1[x1] - r1[x0]);
        d[static_cast<std::size_t>(y) * out_w + x] = top + fy * (bottom - top);
      }
    }
  }
}

// Adjoint of bilinear_upsample; accumulates into `dsrc`.
template <typename Real>
void bilinear_upsample_adjoint(const Real* ddst, std::size_t planes, int h, int w, int out_h, int out_w,
                               Real* dsrc) {
  const InterpAxis ay = bilinear_axis(h, out_h);
  const InterpAxis ax = bilinear_axis(w, out_w);
  const std::size_t in_plane = static_cast<std::size_t>(h) * w;
  const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
  for (std::size_t m = 0; m < planes; ++m) {
    const Real* d = ddst + m * out_plane;
    Real* s = dsrc + m * in_plane;
    for (int y = 0; y < out_h; ++y) {
      const auto yi = static_cast<std::size_t>(y);
      const Real fy = static_cast<Real>(ay.frac[yi]);
      Real* r0 = s + static_cast<std::size_t>(ay.lo[yi]) * w;
      Real* r1 = s + static_cast<std::size_t>(ay.hi[yi]) * w;
      for (int x = 0; x < out_w; ++x) {
        const auto xi = static_cast<std::size_t>(x);
        const Real fx = static_cast<Real>(ax.frac[xi]);
        const Real g = d[static_cast<std::size_t>(y) * out_w + x];
        const Real gt = g * (Real(1) - fy);
        const Real gb = g * fy;
        r0[ax.lo[xi]] += gt * (Real(1) - fx);
        r0[ax.hi[xi]] += gt * fx;
        r1[ax.lo[xi]] += gb * (Real(1) - fx);
        r1[ax.hi[xi]] += gb * fx;
      }
    }
  }
}

template <typename Real>
void weighted_skip_mix_backward(const Volume<Real>& features, const std::vector<Real>& attn, int batch,
                                int frames, const Volume<Real>& d_out, Volume<Real>& d_features,
                                std::vector<Real>& d_attn) {
  const std::size_t plane = features.plane();
  const int channels = features.c;
  d_attn.assign(attn.size(), Real(0));
  for (int b = 0; b < batch; ++b) {
    for (int t = 0; t < frames; ++t) {
      const Real* g = d_out.frame(b * frames + t);
      for (int k = 0; k < frames; ++k) {
        const std::size_t a_off = ((static_cast<std::size_t>(b) * frames + t) * frames + k) * plane;
        const Real* a = attn.data() + a_off;
        Real* da = d_attn.data() + a_off;
        const Real* f = features.frame(b * frames + k);
        Real* df = d_features.frame(b * frames + k);
        for (int c = 0; c < channels; ++c) {
          const std::size_t off = static_cast<std::size_t>(c) * plane;
          for (std::size_t p = 0; p < plane; ++p) {
            da[p] += g[off + p] * f[off + p];
            df[off + p] += a[p] * g[off + p];
          }
        }
      }
    }
  }
}

template <typename Real>
void add_into(Volume<Real>& dst, const Volume<Real>& src) {
  if (dst.data.empty()) {
    dst = src;
    return;
  }
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace

template <typename Real>
Volume<Real> weighted_skip_mix(const Volume<Real>& features, const std::vector<Real>& attn, int batch,
                               int frames) {
  const std::size_t plane = features.plane();
  if (features.n != batch * frames || attn.size() != static_cast<std::size_t>(batch) * frames * frames * plane) {
    throw std::invalid_argument("weighted_skip_mix: shape mismatch");
  }
  Volume<Real> out(features.n, features.c, features.h, features.w);
  for (int b = 0; b < batch; ++b) {
    for (int t = 0; t < frames; ++t) {
      Real* o = out.frame(b * frames + t);
      for (int k = 0; k < frames; ++k) {
        const Real* a = attn.data() + ((static_cast<std::size_t>(b) * frames + t) * frames + k) * plane;
        const Real* f = features.frame(b * frames + k);
        for (int c = 0; c < features.c; ++c) {
          const std::size_t off = static_cast<std::size_t>(c) * plane;
          for (std::size_t p = 0; p < plane; ++p) o[off + p] += a[p] * f[off + p];
        }
      }
    }
  }
  return out;
}

template Volume<float> weighted_skip_mix<float>(const Volume<float>&, const std::vector<float>&, int, int);
template Volume<double> weighted_skip_mix<double>(const Volume<double>&, const std::vector<double>&, int, int);

}  // namespace nn

AttentionVolume upsample_attention(const AttentionVolume& attention, int height, int width) {
  if (height < attention.height || width < attention.width) {
    throw std::invalid_argument("upsample_attention: target smaller than source");
  }
  AttentionVolume out(attention.heads, attention.frames, height, width);
  const std::size_t planes = static_cast<std::size_t>(attention.heads) * attention.frames * attention.frames;
  nn::bilinear_upsample(attention.scores.data(), planes, attention.height, attention.width, height, width,
                        out.scores.data());
  return out;
}

template <typename Real>
UTilise<Real>::UTilise(ModelConfig config) : config_(config) {
  config_.validate();
  const int L = config_.levels;
  const int d = config_.filters;
  for (int l = 0; l <= L; ++l) {
    const int in = l == 0 ? config_.input_channels : d;
    const int ch = config_.level_channels(l);
    const std::string name = "encoder." + std::to_string(l);
    encoder_.push_back({nn::Conv2d<Real>(name + ".conv1", in, ch, 3, 1, 1),
                        nn::Conv2d<Real>(name + ".conv2", ch, ch, 3, 1, 1)});
    if (l < L) down_.emplace_back("down." + std::to_string(l), ch, d, 3, 2, 1);
  }
  temporal_ = nn::TemporalEncoder<Real>(config_.bottleneck_depth, config_.heads, config_.key_dim,
                                        config_.norm_groups, config_.hidden());
  for (int l = 0; l < L; ++l) {
    skip_conv_.emplace_back("skip." + std::to_string(l), d, d, 1, 1, 0);
    up_.emplace_back("up." + std::to_string(l), config_.level_channels(l + 1), d);
    const std::string name = "decoder." + std::to_string(l);
    decoder_.push_back({nn::Conv2d<Real>(name + ".conv1", 2 * d, d, 3, 1, 1),
                        nn::Conv2d<Real>(name + ".conv2", d, d, 3, 1, 1)});
  }
  head_ = nn::Conv2d<Real>("head", d, config_.output_channels, 3, 1, 1);
}

template <typename Real>
void UTilise<Real>::initialize(Rng& rng) {
  for (Block& b : encoder_) {
    b.conv1.initialize(rng);
    b.conv2.initialize(rng);
  }
  for (auto& c : down_) c.initialize(rng);
  temporal_.initialize(rng);
  for (auto& c : skip_conv_) c.initialize(rng);
  for (auto& c : up_) c.initialize(rng);
  for (Block& b : decoder_) {
    b.conv1.initialize(rng);
    b.conv2.initialize(rng);
  }
  head_.initialize(rng, nn::kLinearGain);
}

template <typename Real>
std::vector<nn::Param<Real>*> UTilise<Real>::parameters() {
  std::vector<nn::Param<Real>*> out;
  const auto conv = [&out](auto& c) {
    out.push_back(&c.weight);
    out.push_back(&c.bias);
  };
  for (int l = 0; l <= config_.levels; ++l) {
    conv(encoder_[static_cast<std::size_t>(l)].conv1);
    conv(encoder_[static_cast<std::size_t>(l)].conv2);
    if (l < config_.levels) conv(down_[static_cast<std::size_t>(l)]);
  }
  if (config_.temporal_encoder) {
    for (nn::Param<Real>* p : temporal_.parameters()) out.push_back(p);
  }
  for (int l = 0; l < config_.levels; ++l) {
    conv(skip_conv_[static_cast<std::size_t>(l)]);
    conv(up_[static_cast<std::size_t>(l)]);
    conv(decoder_[static_cast<std::size_t>(l)].conv1);
    conv(decoder_[static_cast<std::size_t>(l)].conv2);
  }
  conv(head_);
  return out;
}

template <typename Real>
std::vector<const nn::Param<Real>*> UTilise<Real>::parameters() const {
  std::vector<const nn::Param<Real>*> out;
  for (nn::Param<Real>* p : const_cast<UTilise<Real>*>(this)->parameters()) out.push_back(p);
  return out;
}

template <typename Real>
std::size_t UTilise<Real>::parameter_count() const {
  std::size_t n = 0;
  for (const nn::Param<Real>* p : parameters()) n += p->size();
  return n;
}

template <typename Real>
void UTilise<Real>::zero_grad() {
  for (nn::Param<Real>* p : parameters()) p->zero_grad();
}

template <typename Real>
ModelWeights UTilise<Real>::export_weights() const {
  ModelWeights w;
  w.config = config_;
  for (const nn::Param<Real>* p : parameters()) {
    NamedTensor t{p->name, p->shape, std::vector<float>(p->value.begin(), p->value.end())};
    w.tensors.push_back(std::move(t));
  }
  return w;
}

template <typename Real>
void UTilise<Real>::import_weights(const ModelWeights& weights) {
  if (!(weights.config == config_)) throw std::invalid_argument("import_weights: config mismatch");
  const auto params = parameters();
  if (weights.tensors.size() != params.size()) {
    throw std::invalid_argument("import_weights: tensor count mismatch");
  }
  for (nn::Param<Real>* p : params) {
    const NamedTensor* t = weights.find(p->name);
    if (t == nullptr) throw std::invalid_argument("import_weights: missing tensor " + p->name);
    if (t->shape != p->shape || t->values.size() != p->value.size()) {
      throw std::invalid_argument("import_weights: shape mismatch for " + p->name);
    }
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      if (!std::isfinite(t->values[i])) {
        throw std::invalid_argument("import_weights: non-finite value in " + p->name);
      }
      p->value[i] = static_cast<Real>(t->values[i]);
    }
  }
}

template <typename Real>
void UTilise<Real>::block_forward(const Block& block, const nn::Volume<Real>& x, nn::Volume<Real>& hidden,
                                  nn::Volume<Real>& out) const {
  hidden = block.conv1.forward(x);
  nn::relu_inplace(hidden.data);
  out = block.conv2.forward(hidden);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += hidden.data[i];
  nn::relu_inplace(out.data);
}

template <typename Real>
nn::Volume<Real> UTilise<Real>::block_backward(Block& block, const nn::Volume<Real>& x,
                                               const nn::Volume<Real>& hidden,
                                               const nn::Volume<Real>& out, nn::Volume<Real> d_out) {
  nn::relu_backward_inplace(d_out.data, out.data);
  nn::Volume<Real> d_hidden = block.conv2.backward(hidden, d_out);
  for (std::size_t i = 0; i < d_hidden.data.size(); ++i) d_hidden.data[i] += d_out.data[i];
  nn::relu_backward_inplace(d_hidden.data, hidden.data);
  return block.conv1.backward(x, d_hidden);
}

template <typename Real>
void UTilise<Real>::spatial_encode(const nn::ModelInput<Real>& input, nn::ForwardCache<Real>& cache) const {
  const int L = config_.levels;
  if (input.images.c != config_.input_channels) {
    throw std::invalid_argument("spatial_encode: expected " + std::to_string(config_.input_channels) +
                                " input channels, got " + std::to_string(input.images.c));
  }
  if (input.images.n != input.batch * input.frames) {
    throw std::invalid_argument("spatial_encode: image count does not match batch * frames");
  }
  config_.validate_input(input.images.h, input.images.w);
  cache.batch = input.batch;
  cache.frames = input.frames;
  cache.enc_input.assign(static_cast<std::size_t>(L) + 1, {});
  cache.enc_hidden.assign(static_cast<std::size_t>(L) + 1, {});
  cache.features.assign(static_cast<std::size_t>(L) + 1, {});
  cache.enc_input[0] = input.images;
  for (int l = 0; l <= L; ++l) {
    const auto i = static_cast<std::size_t>(l);
    block_forward(encoder_[i], cache.enc_input[i], cache.enc_hidden[i], cache.features[i]);
    if (l < L) {
      cache.enc_input[i + 1] = down_[i].forward(cache.features[i]);
      nn::relu_inplace(cache.enc_input[i + 1].data);
    }
  }
}

template <typename Real>
void UTilise<Real>::temporal_encode(std::span<const int> days, nn::ForwardCache<Real>& cache) const {
  const nn::Volume<Real>& bottleneck = cache.features.back();
  const int B = cache.batch;
  const int T = cache.frames;
  const int D = bottleneck.c;
  const int h = bottleneck.h;
  const int w = bottleneck.w;
  const int G = config_.heads;
  const std::size_t plane = bottleneck.plane();
  if (days.size() != static_cast<std::size_t>(B) * T) {
    throw std::invalid_argument("temporal_encode: days length does not match batch * frames");
  }
  cache.attention.assign(static_cast<std::size_t>(B) * G * T * T * plane, Real(0));

  if (!config_.temporal_encoder) {
    cache.refined = bottleneck;
    for (int b = 0; b < B; ++b) {
      for (int g = 0; g < G; ++g) {
        for (int t = 0; t < T; ++t) {
          Real* a = cache.attention.data() + ((((static_cast<std::size_t>(b) * G + g) * T + t) * T + t) * plane);
          std::fill(a, a + plane, Real(1));
        }
      }
    }
    return;
  }

  const std::size_t pixels = static_cast<std::size_t>(B) * plane;
  cache.tokens.assign(pixels * T * D, Real(0));
  for (int b = 0; b < B; ++b) {
    const std::vector<double> pe =
        positional_encoding(days.subspan(static_cast<std::size_t>(b) * T, static_cast<std::size_t>(T)), D,
                            config_.tau, config_.positional_encoding);
    for (int t = 0; t < T; ++t) {
      const Real* f = bottleneck.frame(b * T + t);
      for (int k = 0; k < D; ++k) {
        const Real enc = static_cast<Real>(pe[static_cast<std::size_t>(t) * D + k]);
        for (std::size_t p = 0; p < plane; ++p) {
          const std::size_t pix = static_cast<std::size_t>(b) * plane + p;
          cache.tokens[(pix * T + t) * D + k] = f[static_cast<std::size_t>(k) * plane + p] + enc;
        }
      }
    }
  }

  const std::vector<Real> out = temporal_.forward(cache.tokens, static_cast<int>(pixels), T, cache.temporal);

  cache.refined = nn::Volume<Real>(B * T, D, h, w);
  for (int b = 0; b < B; ++b) {
    for (int t = 0; t < T; ++t) {
      Real* r = cache.refined.frame(b * T + t);
      for (int k = 0; k < D; ++k) {
        for (std::size_t p = 0; p < plane; ++p) {
          const std::size_t pix = static_cast<std::size_t>(b) * plane + p;
          r[static_cast<std::size_t>(k) * plane + p] = out[(pix * T + t) * D + k];
        }
      }
    }
    for (int g = 0; g < G; ++g) {
      for (int tq = 0; tq < T; ++tq) {
        for (int tk = 0; tk < T; ++tk) {
          Real* a = cache.attention.data() + ((((static_cast<std::size_t>(b) * G + g) * T + tq) * T + tk) * plane);
          for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t pix = static_cast<std::size_t>(b) * plane + p;
            a[p] = cache.temporal.attention[((pix * G + g) * T + tq) * T + tk];
          }
        }
      }
    }
  }
}

template <typename Real>
void UTilise<Real>::spatial_decode(nn::ForwardCache<Real>& cache) const {
  const int L = config_.levels;
  const int B = cache.batch;
  const int T = cache.frames;
  const int G = config_.heads;
  const auto levels = static_cast<std::size_t>(L);
  const bool mix = config_.temporal_encoder && config_.weighted_skips;
  const nn::Volume<Real>& bottleneck = cache.features.back();
  const std::size_t bplane = bottleneck.plane();

  cache.skip_attention.assign(levels, {});
  cache.weighted.assign(levels, {});
  cache.skip.assign(levels, {});
  cache.up.assign(levels, {});
  cache.concat.assign(levels, {});
  cache.dec_hidden.assign(levels, {});
  cache.dec_output.assign(levels, {});

  std::vector<Real> head_mean;
  if (mix) {
    // Heads are averaged into one temporal weighting per query frame.
    head_mean.assign(static_cast<std::size_t>(B) * T * T * bplane, Real(0));
    const Real inv = Real(1) / static_cast<Real>(G);
    for (int b = 0; b < B; ++b) {
      for (int g = 0; g < G; ++g) {
        const Real* a = cache.attention.data() + (static_cast<std::size_t>(b) * G + g) * T * T * bplane;
        Real* m = head_mean.data() + static_cast<std::size_t>(b) * T * T * bplane;
        for (std::size_t i = 0; i < static_cast<std::size_t>(T) * T * bplane; ++i) m[i] += inv * a[i];
      }
    }
  }

  const nn::Volume<Real>* prev = &cache.refined;
  for (int l = L - 1; l >= 0; --l) {
    const auto i = static_cast<std::size_t>(l);
    const nn::Volume<Real>& f = cache.features[i];
    cache.up[i] = up_[i].forward(*prev);
    nn::relu_inplace(cache.up[i].data);

    if (mix) {
      cache.skip_attention[i].assign(static_cast<std::size_t>(B) * T * T * f.plane(), Real(0));
      nn::bilinear_upsample(head_mean.data(), static_cast<std::size_t>(B) * T * T, bottleneck.h, bottleneck.w,
                            f.h, f.w, cache.skip_attention[i].data());
      cache.weighted[i] = nn::weighted_skip_mix(f, cache.skip_attention[i], B, T);
    } else {
      cache.weighted[i] = f;
    }
    cache.skip[i] = skip_conv_[i].forward(cache.weighted[i]);
    nn::relu_inplace(cache.skip[i].data);

    const nn::Volume<Real>& u = cache.up[i];
    const nn::Volume<Real>& s = cache.skip[i];
    nn::Volume<Real> cat(u.n, u.c + s.c, u.h, u.w);
    for (int n = 0; n < u.n; ++n) {
      std::copy(u.frame(n), u.frame(n) + u.frame_size(), cat.frame(n));
      std::copy(s.frame(n), s.frame(n) + s.frame_size(), cat.frame(n) + u.frame_size());
    }
    cache.concat[i] = std::move(cat);
    block_forward(decoder_[i], cache.concat[i], cache.dec_hidden[i], cache.dec_output[i]);
    prev = &cache.dec_output[i];
  }

  cache.prediction = head_.forward(cache.dec_output[0]);
  nn::sigmoid_inplace(cache.prediction.data);
}

template <typename Real>
void UTilise<Real>::forward(const nn::ModelInput<Real>& input, nn::ForwardCache<Real>& cache) const {
  spatial_encode(input, cache);
  temporal_encode(input.days, cache);
  spatial_decode(cache);
}

template <typename Real>
void UTilise<Real>::backward(const nn::ForwardCache<Real>& cache, const nn::Volume<Real>& d_prediction) {
  const int L = config_.levels;
  const int B = cache.batch;
  const int T = cache.frames;
  const int G = config_.heads;
  const bool mix = config_.temporal_encoder && config_.weighted_skips;
  const nn::Volume<Real>& bottleneck = cache.features.back();
  const std::size_t bplane = bottleneck.plane();
  if (!d_prediction.same_shape(cache.prediction)) throw std::invalid_argument("backward: gradient shape mismatch");

  nn::Volume<Real> d_logits = d_prediction;
  nn::sigmoid_backward_inplace(d_logits.data, cache.prediction.data);
  nn::Volume<Real> d_level = head_.backward(cache.dec_output[0], d_logits);

  std::vector<nn::Volume<Real>> d_features(static_cast<std::size_t>(L) + 1);
  std::vector<Real> d_head_mean;
  if (mix) d_head_mean.assign(static_cast<std::size_t>(B) * T * T * bplane, Real(0));
  nn::Volume<Real> d_refined;

  for (int l = 0; l < L; ++l) {
    const auto i = static_cast<std::size_t>(l);
    const nn::Volume<Real> d_cat =
        block_backward(decoder_[i], cache.concat[i], cache.dec_hidden[i], cache.dec_output[i], std::move(d_level));
    const nn::Volume<Real>& u = cache.up[i];
    const nn::Volume<Real>& s = cache.skip[i];
    nn::Volume<Real> d_up(u.n, u.c, u.h, u.w);
    nn::Volume<Real> d_skip(s.n, s.c, s.h, s.w);
    for (int n = 0; n < u.n; ++n) {
      const Real* src = d_cat.frame(n);
      std::copy(src, src + u.frame_size(), d_up.frame(n));
      std::copy(src + u.frame_size(), src + u.frame_size() + s.frame_size(), d_skip.frame(n));
    }

    nn::relu_backward_inplace(d_skip.data, s.data);
    const nn::Volume<Real> d_weighted = skip_conv_[i].backward(cache.weighted[i], d_skip);
    const nn::Volume<Real>& f = cache.features[i];
    if (mix) {
      nn::Volume<Real> d_f(f.n, f.c, f.h, f.w);
      std::vector<Real> d_attn;
      nn::weighted_skip_mix_backward(f, cache.skip_attention[i], B, T, d_weighted, d_f, d_attn);
      nn::bilinear_upsample_adjoint(d_attn.data(), static_cast<std::size_t>(B) * T * T, bottleneck.h,
                                    bottleneck.w, f.h, f.w, d_head_mean.data());
      nn::add_into(d_features[i], d_f);
    } else {
      nn::add_into(d_features[i], d_weighted);
    }

    nn::relu_backward_inplace(d_up.data, u.data);
    const nn::Volume<Real>& prev = l == L - 1 ? cache.refined : cache.dec_output[i + 1];
    nn::Volume<Real> d_prev = up_[i].backward(prev, d_up);
    if (l == L - 1) {
      d_refined = std::move(d_prev);
    } else {
      d_level = std::move(d_prev);
    }
  }

  // Temporal encoder.
  const auto last = static_cast<std::size_t>(L);
  if (config_.temporal_encoder) {
    const int D = bottleneck.c;
    const std::size_t pixels = static_cast<std::size_t>(B) * bplane;
    std::vector<Real> d_tokens_out(pixels * T * D);
    for (int b = 0; b < B; ++b) {
      for (int t = 0; t < T; ++t) {
        const Real* r = d_refined.frame(b * T + t);
        for (int k = 0; k < D; ++k) {
          for (std::size_t p = 0; p < bplane; ++p) {
            const std::size_t pix = static_cast<std::size_t>(b) * bplane + p;
            d_tokens_out[(pix * T + t) * D + k] = r[static_cast<std::size_t>(k) * bplane + p];
          }
        }
      }
    }
    std::vector<Real> d_attention;
    if (mix) {
      d_attention.assign(pixels * G * T * T, Real(0));
      const Real inv = Real(1) / static_cast<Real>(G);
      for (int b = 0; b < B; ++b) {
        for (int tq = 0; tq < T; ++tq) {
          for (int tk = 0; tk < T; ++tk) {
            const Real* dm = d_head_mean.data() + ((static_cast<std::size_t>(b) * T + tq) * T + tk) * bplane;
            for (std::size_t p = 0; p < bplane; ++p) {
              const std::size_t pix = static_cast<std::size_t>(b) * bplane + p;
              for (int g = 0; g < G; ++g) d_attention[((pix * G + g) * T + tq) * T + tk] = inv * dm[p];
            }
          }
        }
      }
    }
    const std::vector<Real> d_tokens = temporal_.backward(cache.temporal, d_tokens_out, d_attention);
    nn::Volume<Real> d_bottleneck(bottleneck.n, D, bottleneck.h, bottleneck.w);
    for (int b = 0; b < B; ++b) {
      for (int t = 0; t < T; ++t) {
        Real* r = d_bottleneck.frame(b * T + t);
        for (int k = 0; k < D; ++k) {
          for (std::size_t p = 0; p < bplane; ++p) {
            const std::size_t pix = static_cast<std::size_t>(b) * bplane + p;
            r[static_cast<std::size_t>(k) * bplane + p] = d_tokens[(pix * T + t) * D + k];
          }
        }
      }
    }
    nn::add_into(d_features[last], d_bottleneck);
  } else {
    nn::add_into(d_features[last], d_refined);
  }

  // Encoder, deepest level first.
  for (int l = L; l >= 0; --l) {
    const auto i = static_cast<std::size_t>(l);
    nn::Volume<Real> d_in = block_backward(encoder_[i], cache.enc_input[i], cache.enc_hidden[i],
                                           cache.features[i], std::move(d_features[i]));
    if (l == 0) break;
    nn::relu_backward_inplace(d_in.data, cache.enc_input[i].data);
    nn::add_into(d_features[i - 1], down_[i - 1].backward(cache.features[i - 1], d_in));
  }
}

template <typename Real>
AttentionVolume UTilise<Real>::attention(const nn::ForwardCache<Real>& cache, int b) const {
  const nn::Volume<Real>& bottleneck = cache.features.back();
  const int G = config_.heads;
  const int T = cache.frames;
  AttentionVolume out(G, T, bottleneck.h, bottleneck.w);
  const std::size_t count = out.scores.size();
  const Real* src = cache.attention.data() + static_cast<std::size_t>(b) * count;
  for (std::size_t i = 0; i < count; ++i) out.scores[i] = static_cast<float>(src[i]);
  return out;
}

template class UTilise<float>;
template class UTilise<double>;

}  // namespace utilise
